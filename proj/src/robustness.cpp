#include "circuitbench/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fmt/format.h>

#include "circuitbench/error.hpp"
#include "circuitbench/rng.hpp"

namespace circuitbench {

namespace {

std::string seed_name(ShiftKind kind, const char* what) {
  return fmt::format("robustness/{}/{}", to_string(kind), what);
}

nlohmann::json to_json(const DominantFeatures& d) {
  nlohmann::json map = nlohmann::json::object();
  for (const auto& [name, feature] : d.dominant) map[name] = feature;
  return {{"dominant", map}, {"excluded", d.excluded}};
}

// JSON has no infinity; non-finite values are written as null.
nlohmann::json number(double x) {
  return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

}  // namespace

std::string to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::in_distribution: return "in_distribution";
    case ShiftKind::ood_content: return "ood_content";
    case ShiftKind::heldout_names: return "heldout_names";
    case ShiftKind::reformulated_frame: return "reformulated_frame";
  }
  return "?";
}

ShiftKind shift_kind_from_string(const std::string& s) {
  for (auto k : {ShiftKind::in_distribution, ShiftKind::ood_content, ShiftKind::heldout_names,
                 ShiftKind::reformulated_frame}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError(fmt::format("unknown shift '{}'", s));
}

ShiftSpec ShiftSpec::of(ShiftKind kind) {
  ShiftSpec s;
  s.kind = kind;
  switch (kind) {
    case ShiftKind::in_distribution: break;
    case ShiftKind::ood_content: s.variant = PoolVariant::ood_content; break;
    case ShiftKind::heldout_names: s.variant = PoolVariant::heldout_names; break;
    case ShiftKind::reformulated_frame: s.frame = Frame::cleft; break;
  }
  return s;
}

std::vector<HeadId> canonical_heads() { return {{9, 9}, {9, 6}, {10, 0}, {10, 7}}; }

double ShiftReport::recovery_of(HeadId head) const {
  for (const auto& h : heads) {
    if (h.head == head) return h.recovery;
  }
  throw ConfigError(fmt::format("head ({}, {}) is not in the {} report", head.first, head.second,
                                to_string(shift.kind)));
}

DominantFeatures dominant_feature_map(const SaeParams& sae, const ModelWeights& weights,
                                      const BpeVocab& vocab, const WordPools& pools,
                                      const std::vector<std::string>& names, PoolVariant variant,
                                      Frame frame, std::size_t sae_layer, std::uint64_t seed,
                                      std::size_t n_prompts) {
  if (n_prompts == 0) throw ConfigError("dominant-feature map needs at least one prompt per name");
  const auto filtered = filter_single_token(vocab, names);
  DominantFeatures out;
  out.excluded = filtered.excluded;
  std::vector<IoiPrompt> prompts;
  for (std::size_t i = 0; i < filtered.kept.size(); ++i) {
    SampleSpec spec;
    spec.variant = variant;
    spec.frame = frame;
    spec.io_name = filtered.kept[i];
    const auto batch = sample_batch(vocab, pools, derive_seed(seed, "dominant", i), n_prompts, spec);
    prompts.insert(prompts.end(), batch.begin(), batch.end());
  }
  if (prompts.empty()) return out;
  const Tensor feats = encode(sae, collect_activations(weights, prompts, sae_layer));
  const std::size_t m = sae.d_sae();
  for (std::size_t i = 0; i < filtered.kept.size(); ++i) {
    std::vector<double> mean(m, 0.0);
    for (std::size_t p = 0; p < n_prompts; ++p) {
      const auto f = feats.row(i * n_prompts + p);
      for (std::size_t j = 0; j < m; ++j) mean[j] += f[j];
    }
    const auto best = static_cast<std::size_t>(std::ranges::max_element(mean) - mean.begin());
    out.dominant.emplace_back(filtered.kept[i], best);
  }
  return out;
}

ShiftReport run_shift(const ShiftSpec& shift, const ModelWeights& weights, const SaeParams& sae,
                      const BpeVocab& vocab, const WordPools& pools,
                      const std::vector<SelectiveFeature>& tracked, std::uint64_t seed,
                      const RobustnessOptions& options) {
  ShiftReport r;
  r.shift = shift;
  r.run_id = fmt::format("{}:{:016x}", to_string(shift.kind), seed);

  SampleSpec spec;
  spec.variant = shift.variant;
  spec.frame = shift.frame;
  const auto prompts = sample_batch(vocab, pools, derive_seed(seed, seed_name(shift.kind, "baseline")),
                                    options.n_baseline, spec);
  const auto base = baseline(weights, prompts);
  r.baseline_mean = base.mean_logit_diff;
  r.baseline_frac_correct = base.frac_correct;
  r.n_baseline = prompts.size();

  const auto pairs = prepare_pairs(
      weights, make_minimal_pairs(vocab, pools, derive_seed(seed, seed_name(shift.kind, "pairs")),
                                  options.n_pairs, shift.variant, shift.frame));
  r.n_pairs = pairs.size();
  r.n_degenerate = static_cast<std::size_t>(
      std::ranges::count_if(pairs, [](const PreparedPair& p) { return p.degenerate; }));
  for (const auto& head : options.heads) {
    r.heads.push_back({head, heads_recovery(weights, pairs, {head})});
  }

  if (shift.kind != ShiftKind::heldout_names) {
    for (std::size_t i = 0; i < tracked.size(); ++i) {
      SampleSpec fs = spec;
      fs.io_name = tracked[i].name;
      const auto fp = sample_batch(vocab, pools, derive_seed(seed, seed_name(shift.kind, "feature"), i),
                                   options.n_feature_prompts, fs);
      r.features.push_back({tracked[i], probe_feature(sae, weights, tracked[i].feature, fp,
                                                      options.sae_layer, options.firing_threshold)});
    }
  }

  if (shift.kind == ShiftKind::in_distribution || shift.kind == ShiftKind::heldout_names) {
    r.names = dominant_feature_map(sae, weights, vocab, pools, pools.names_for(shift.variant),
                                   shift.variant, shift.frame, options.sae_layer,
                                   derive_seed(seed, seed_name(shift.kind, "dominant")),
                                   options.n_dominant_prompts);
    for (const auto& [name, feature] : r.names.dominant) {
      r.dominant_in_tracked += std::ranges::any_of(
          tracked, [&](const SelectiveFeature& f) { return f.feature == feature; });
    }
  }
  if (shift.kind == ShiftKind::heldout_names) {
    r.probe_names = dominant_feature_map(sae, weights, vocab, pools, pools.multi_token_probe_names,
                                         shift.variant, shift.frame, options.sae_layer,
                                         derive_seed(seed, seed_name(shift.kind, "probe")),
                                         options.n_dominant_prompts);
  }
  return r;
}

RetentionSummary detection_vs_causal_gap(const ShiftReport& reference, const ShiftReport& shifted,
                                         double min_drop) {
  RetentionSummary s;
  double firing_sum = 0, causal_sum = 0;
  std::size_t n_firing = 0;
  for (const auto& ref : reference.features) {
    const auto it = std::ranges::find_if(shifted.features, [&](const FeatureShift& f) {
      return f.feature.feature == ref.feature.feature;
    });
    if (it == shifted.features.end()) {
      throw ConfigError(fmt::format("feature {} is missing from the {} report", ref.feature.feature,
                                    to_string(shifted.shift.kind)));
    }
    Retention row;
    row.feature = ref.feature;
    if (ref.probe.mean_act > 0) {
      row.firing_retention = it->probe.mean_act / ref.probe.mean_act;
      firing_sum += row.firing_retention;
      ++n_firing;
    } else {
      row.firing_retention = std::numeric_limits<double>::quiet_NaN();
    }
    if (ref.probe.mean_drop < min_drop) {
      row.flagged = true;
      row.causal_retention = std::numeric_limits<double>::quiet_NaN();
      ++s.n_flagged;
    } else {
      row.causal_retention = it->probe.mean_drop / ref.probe.mean_drop;
      causal_sum += row.causal_retention;
      s.n_lost_half += row.causal_retention <= 0.5;
    }
    s.rows.push_back(row);
  }
  const std::size_t n_causal = s.rows.size() - s.n_flagged;
  s.mean_firing_retention = n_firing ? firing_sum / static_cast<double>(n_firing)
                                     : std::numeric_limits<double>::quiet_NaN();
  s.mean_causal_retention = n_causal ? causal_sum / static_cast<double>(n_causal)
                                     : std::numeric_limits<double>::quiet_NaN();
  return s;
}

nlohmann::json to_json(const ShiftReport& r) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : r.heads) {
    heads.push_back({{"layer", h.head.first}, {"head", h.head.second}, {"recovery", h.recovery}});
  }
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : r.features) {
    features.push_back({{"feature", f.feature.feature},
                        {"name", f.feature.name},
                        {"n", f.probe.n},
                        {"mean_activation", f.probe.mean_act},
                        {"std_activation", f.probe.std_act},
                        {"max_activation", f.probe.max_act},
                        {"firing_rate", f.probe.firing_rate},
                        {"ablation_drop", f.probe.mean_drop}});
  }
  nlohmann::json j = {{"shift", to_string(r.shift.kind)},
                      {"run_id", r.run_id},
                      {"pool_variant", to_string(r.shift.variant)},
                      {"frame", to_string(r.shift.frame)},
                      {"baseline", {{"mean_logit_diff", r.baseline_mean},
                                    {"frac_correct", r.baseline_frac_correct},
                                    {"n_prompts", r.n_baseline}}},
                      {"n_pairs", r.n_pairs},
                      {"n_degenerate_pairs", r.n_degenerate},
                      {"head_recovery", heads},
                      {"features", features}};
  if (!r.names.dominant.empty() || !r.names.excluded.empty()) {
    j["dominant_features"] = to_json(r.names);
    j["dominant_in_tracked"] = r.dominant_in_tracked;
  }
  if (r.shift.kind == ShiftKind::heldout_names) {
    j["multi_token_probes"] = to_json(r.probe_names);
  }
  return j;
}

nlohmann::json to_json(const RetentionSummary& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : s.rows) {
    rows.push_back({{"feature", r.feature.feature},
                    {"name", r.feature.name},
                    {"firing_retention", number(r.firing_retention)},
                    {"causal_retention", number(r.causal_retention)},
                    {"flagged", r.flagged}});
  }
  return {{"features", rows},
          {"mean_firing_retention", number(s.mean_firing_retention)},
          {"mean_causal_retention", number(s.mean_causal_retention)},
          {"n_flagged", s.n_flagged},
          {"n_lost_half", s.n_lost_half}};
}

std::string shift_summary_csv(const std::vector<ShiftReport>& reports) {
  std::string out = "shift,baseline_mean,frac_correct";
  if (!reports.empty()) {
    for (const auto& h : reports.front().heads) out += fmt::format(",L{}H{}", h.head.first, h.head.second);
  }
  out += '\n';
  for (const auto& r : reports) {
    out += fmt::format("{},{:.6f},{:.6f}", to_string(r.shift.kind), r.baseline_mean,
                       r.baseline_frac_correct);
    for (const auto& h : r.heads) out += fmt::format(",{:.6f}", h.recovery);
    out += '\n';
  }
  return out;
}

namespace {

template <class F>
std::string feature_table(const std::vector<ShiftReport>& reports, F value) {
  std::string out = "feature,name";
  const ShiftReport* first = nullptr;
  for (const auto& r : reports) {
    if (r.features.empty()) continue;
    out += "," + to_string(r.shift.kind);
    if (!first) first = &r;
  }
  out += '\n';
  if (!first) return out;
  for (std::size_t i = 0; i < first->features.size(); ++i) {
    out += fmt::format("{},{}", first->features[i].feature.feature, first->features[i].feature.name);
    for (const auto& r : reports) {
      if (r.features.empty()) continue;
      out += fmt::format(",{:.6f}", value(r.features.at(i).probe));
    }
    out += '\n';
  }
  return out;
}

}  // namespace

std::string feature_firing_csv(const std::vector<ShiftReport>& reports) {
  return feature_table(reports, [](const FeatureProbe& p) { return p.mean_act; });
}

std::string feature_drop_csv(const std::vector<ShiftReport>& reports) {
  return feature_table(reports, [](const FeatureProbe& p) { return p.mean_drop; });
}

}  // namespace circuitbench
