#include "circuitbench/feature_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <fmt/format.h>

#include "circuitbench/error.hpp"
#include "circuitbench/parallel.hpp"
#include "circuitbench/patching.hpp"
#include "circuitbench/rng.hpp"

namespace circuitbench {

namespace {

void check_site(const ModelWeights& weights, const SaeParams& sae, std::size_t sae_layer) {
  if (sae_layer >= weights.config.n_layer) {
    throw ConfigError(fmt::format("SAE layer {} is outside the model's {} layers", sae_layer,
                                  weights.config.n_layer));
  }
  if (sae.d_model() != weights.config.d_model) {
    throw ShapeError(fmt::format("SAE width {} does not match model width {}", sae.d_model(),
                                 weights.config.d_model));
  }
}

void check_feature(const SaeParams& sae, std::size_t feature) {
  if (feature >= sae.d_sae()) {
    throw ConfigError(fmt::format("feature {} does not exist (d_sae {})", feature, sae.d_sae()));
  }
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Site residual, its END row's features and the unablated delta for a prompt.
struct SiteRun {
  Tensor residual;
  std::vector<float> features;
  float before = 0;
};

SiteRun run_site(const SaeParams& sae, const ModelWeights& weights, const IoiPrompt& prompt,
                 std::size_t sae_layer) {
  SiteRun s;
  s.residual = site_residual(weights, prompt, sae_layer);
  s.features = encode(sae, s.residual.row(prompt.pos.end));
  s.before = delta_from_site(weights, prompt, s.residual, sae_layer);
  return s;
}

float ablated_delta(const SaeParams& sae, const ModelWeights& weights, const IoiPrompt& prompt,
                    const SiteRun& site, const std::vector<std::size_t>& features,
                    std::size_t sae_layer) {
  Tensor edited = site.residual;
  auto end_row = edited.row(prompt.pos.end);
  for (std::size_t i : features) {
    const float f = site.features[i];
    if (f == 0.0f) continue;
    const auto dir = sae.w_dec.row(i);
    for (std::size_t d = 0; d < end_row.size(); ++d) end_row[d] -= f * dir[d];
  }
  return delta_from_site(weights, prompt, std::move(edited), sae_layer);
}

}  // namespace

Tensor site_residual(const ModelWeights& weights, const IoiPrompt& prompt, std::size_t sae_layer) {
  ForwardOptions opt;
  opt.logits = LogitMode::none;
  opt.stop_after_layer = sae_layer;
  return run_forward(weights, prompt.tokens, opt).residual;
}

Tensor collect_activations(const ModelWeights& weights, const std::vector<IoiPrompt>& prompts,
                           std::size_t sae_layer) {
  if (sae_layer >= weights.config.n_layer) {
    throw ConfigError(fmt::format("SAE layer {} is outside the model's {} layers", sae_layer,
                                  weights.config.n_layer));
  }
  const std::size_t d = weights.config.d_model;
  Tensor out({prompts.size(), d});
  parallel_for(prompts.size(), [&](std::size_t i) {
    const Tensor r = site_residual(weights, prompts[i], sae_layer);
    std::ranges::copy(r.row(prompts[i].pos.end), out.row(i).begin());
  });
  return out;
}

float delta_from_site(const ModelWeights& weights, const IoiPrompt& prompt, Tensor residual,
                      std::size_t sae_layer) {
  ForwardOptions opt;
  opt.logits = LogitMode::none;
  const auto run = resume_forward(weights, std::move(residual), sae_layer + 1, opt);
  return end_logit_diff(weights, run, prompt.io_token, prompt.s_token);
}

std::vector<float> ablate_vector(const SaeParams& sae, std::span<const float> h,
                                 const std::vector<std::size_t>& features) {
  if (h.size() != sae.d_model()) throw ShapeError("ablate_vector: width mismatch");
  for (std::size_t i : features) check_feature(sae, i);
  std::vector<float> out(h.begin(), h.end());
  const auto f = encode(sae, h);
  for (std::size_t i : features) {
    if (f[i] == 0.0f) continue;
    const auto dir = sae.w_dec.row(i);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] -= f[i] * dir[d];
  }
  return out;
}

std::string SelectivityTable::to_csv() const {
  std::string out = "name,top_feature,mean_io,mean_s,gap\n";
  for (std::size_t n = 0; n < names.size(); ++n) {
    const std::size_t f = top_feature[n];
    out += fmt::format("{},{},{:.6f},{:.6f},{:.6f}\n", names[n], f, mean_io(n, f), mean_s(n, f),
                       top_gap[n]);
  }
  return out;
}

SelectivityTable selectivity_table(const SaeParams& sae, const ModelWeights& weights,
                                   const BpeVocab& vocab, const WordPools& pools,
                                   std::size_t sae_layer, std::uint64_t seed,
                                   std::size_t n_per_condition) {
  check_site(weights, sae, sae_layer);
  if (n_per_condition == 0) throw ConfigError("selectivity needs at least one prompt per condition");
  const auto filtered = filter_single_token(vocab, pools.names);
  if (!filtered.excluded.empty()) {
    throw ConfigError(fmt::format("selectivity: pool name '{}' is not a single token",
                                  filtered.excluded.front()));
  }
  SelectivityTable t;
  t.names = filtered.kept;
  t.n_per_condition = n_per_condition;
  const std::size_t m = sae.d_sae();
  t.mean_io = Tensor({t.names.size(), m});
  t.mean_s = Tensor({t.names.size(), m});

  // Prompt sets are sampled serially so the seeds do not depend on threading.
  std::vector<IoiPrompt> prompts;
  for (std::size_t n = 0; n < t.names.size(); ++n) {
    SampleSpec io_spec;
    io_spec.io_name = t.names[n];
    auto io = sample_batch(vocab, pools, derive_seed(seed, "selectivity-io", n), n_per_condition,
                           io_spec);
    SampleSpec s_spec;
    s_spec.s_name = t.names[n];
    auto s = sample_batch(vocab, pools, derive_seed(seed, "selectivity-s", n), n_per_condition,
                          s_spec);
    prompts.insert(prompts.end(), io.begin(), io.end());
    prompts.insert(prompts.end(), s.begin(), s.end());
  }
  const Tensor feats = encode(sae, collect_activations(weights, prompts, sae_layer));

  for (std::size_t n = 0; n < t.names.size(); ++n) {
    const std::size_t base = n * 2 * n_per_condition;
    std::vector<double> io(m, 0.0), s(m, 0.0);
    for (std::size_t p = 0; p < n_per_condition; ++p) {
      const auto fi = feats.row(base + p);
      const auto fs = feats.row(base + n_per_condition + p);
      for (std::size_t j = 0; j < m; ++j) {
        io[j] += fi[j];
        s[j] += fs[j];
      }
    }
    std::size_t best = 0;
    double best_gap = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      t.mean_io(n, j) = static_cast<float>(io[j] / static_cast<double>(n_per_condition));
      t.mean_s(n, j) = static_cast<float>(s[j] / static_cast<double>(n_per_condition));
      const double g = t.gap(n, j);
      if (g > best_gap) {
        best_gap = g;
        best = j;
      }
    }
    t.top_feature.push_back(best);
    t.top_gap.push_back(best_gap);
  }
  return t;
}

std::vector<SelectiveFeature> top_selective(const SelectivityTable& table, std::size_t k) {
  std::vector<SelectiveFeature> all;
  for (std::size_t n = 0; n < table.names.size(); ++n) {
    const std::size_t f = table.top_feature[n];
    all.push_back({table.names[n], f, table.top_gap[n], table.mean_io(n, f), table.mean_s(n, f)});
  }
  std::ranges::stable_sort(all, [](const auto& a, const auto& b) { return a.gap > b.gap; });
  std::vector<SelectiveFeature> out;
  for (const auto& f : all) {
    if (out.size() == k) break;
    if (std::ranges::any_of(out, [&](const auto& o) { return o.feature == f.feature; })) continue;
    out.push_back(f);
  }
  return out;
}

AblationResult ablate_features(const SaeParams& sae, const ModelWeights& weights,
                               const std::vector<std::size_t>& features,
                               const std::vector<IoiPrompt>& prompts, std::size_t sae_layer,
                               const std::vector<std::string>& preferred_names) {
  check_site(weights, sae, sae_layer);
  for (std::size_t f : features) check_feature(sae, f);
  if (prompts.empty()) throw ConfigError("ablation needs at least one prompt");
  AblationResult r;
  r.features = features;
  r.before.resize(prompts.size());
  r.after.resize(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    const auto site = run_site(sae, weights, prompts[i], sae_layer);
    r.before[i] = site.before;
    r.after[i] = ablated_delta(sae, weights, prompts[i], site, features, sae_layer);
  });

  double sb = 0, sa = 0, drop = 0, change = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    sb += r.before[i];
    sa += r.after[i];
    correct += r.after[i] > 0.0f;
    const bool preferred = std::ranges::find(preferred_names, prompts[i].io_name) !=
                           preferred_names.end();
    if (preferred) {
      ++r.n_preferred;
      drop += static_cast<double>(r.before[i]) - r.after[i];
    } else {
      ++r.n_other;
      change += static_cast<double>(r.after[i]) - r.before[i];
    }
  }
  const auto n = static_cast<double>(prompts.size());
  r.mean_before = sb / n;
  r.mean_after = sa / n;
  r.frac_correct = static_cast<double>(correct) / n;
  if (r.n_preferred) r.mean_drop_preferred = drop / static_cast<double>(r.n_preferred);
  if (r.n_other) r.mean_change_other = change / static_cast<double>(r.n_other);
  return r;
}

FeatureProbe probe_feature(const SaeParams& sae, const ModelWeights& weights, std::size_t feature,
                           const std::vector<IoiPrompt>& prompts, std::size_t sae_layer,
                           double firing_threshold) {
  check_site(weights, sae, sae_layer);
  check_feature(sae, feature);
  if (prompts.empty()) throw ConfigError("feature probe needs at least one prompt");
  std::vector<double> act(prompts.size()), drop(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    const auto site = run_site(sae, weights, prompts[i], sae_layer);
    act[i] = site.features[feature];
    const float after = ablated_delta(sae, weights, prompts[i], site, {feature}, sae_layer);
    drop[i] = static_cast<double>(site.before) - after;
  });
  FeatureProbe p;
  p.n = prompts.size();
  p.mean_act = mean_of(act);
  double var = 0;
  std::size_t firing = 0;
  for (double a : act) {
    var += (a - p.mean_act) * (a - p.mean_act);
    p.max_act = std::max(p.max_act, a);
    firing += a > firing_threshold;
  }
  p.std_act = std::sqrt(var / static_cast<double>(act.size()));
  p.firing_rate = static_cast<double>(firing) / static_cast<double>(act.size());
  p.mean_drop = mean_of(drop);
  return p;
}

std::vector<SingleAblation> single_feature_ablations(const SaeParams& sae, const ModelWeights& weights,
                                                     const BpeVocab& vocab, const WordPools& pools,
                                                     const std::vector<SelectiveFeature>& features,
                                                     std::size_t sae_layer, std::uint64_t seed,
                                                     std::size_t n_prompts) {
  std::vector<SingleAblation> out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    SampleSpec pref;
    pref.io_name = f.name;
    SampleSpec other;
    other.exclude_names = {f.name};
    auto prompts = sample_batch(vocab, pools, derive_seed(seed, "ablate-preferred", i), n_prompts, pref);
    const auto rest = sample_batch(vocab, pools, derive_seed(seed, "ablate-other", i), n_prompts, other);
    prompts.insert(prompts.end(), rest.begin(), rest.end());
    const auto r = ablate_features(sae, weights, {f.feature}, prompts, sae_layer, {f.name});
    out.push_back({f, r.mean_drop_preferred, r.mean_change_other});
  }
  return out;
}

std::vector<CumulativeRow> cumulative_ablation(const SaeParams& sae, const ModelWeights& weights,
                                               const std::vector<SelectiveFeature>& features,
                                               const std::vector<std::size_t>& ks,
                                               const std::vector<IoiPrompt>& prompts,
                                               std::size_t sae_layer) {
  std::vector<CumulativeRow> out;
  for (std::size_t k : ks) {
    if (k > features.size()) {
      throw ConfigError(fmt::format("cumulative ablation k = {} exceeds the {} selective features", k,
                                    features.size()));
    }
    std::vector<std::size_t> ids;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < k; ++i) {
      ids.push_back(features[i].feature);
      names.push_back(features[i].name);
    }
    const auto r = ablate_features(sae, weights, ids, prompts, sae_layer, names);
    CumulativeRow row;
    row.k = k;
    row.mean_delta = r.mean_after;
    row.frac_correct = r.frac_correct;
    row.n_preferred = r.n_preferred;
    double pref = 0, other = 0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const bool p = std::ranges::find(names, prompts[i].io_name) != names.end();
      (p ? pref : other) += r.after[i];
    }
    if (r.n_preferred) row.mean_delta_preferred = pref / static_cast<double>(r.n_preferred);
    if (r.n_other) row.mean_delta_other = other / static_cast<double>(r.n_other);
    out.push_back(row);
  }
  return out;
}

Tensor truncated_reconstruction(const SaeParams& sae, const Tensor& features, std::size_t k,
                                const std::vector<std::size_t>& allowed) {
  const std::size_t m = sae.d_sae();
  if (features.rank() != 2 || features.dim(1) != m) throw ShapeError("truncated_reconstruction: bad features");
  if (k > m) throw ConfigError(fmt::format("K = {} exceeds d_sae = {}", k, m));
  std::vector<std::size_t> candidates = allowed;
  if (candidates.empty()) {
    candidates.resize(m);
    std::iota(candidates.begin(), candidates.end(), std::size_t{0});
  }
  for (std::size_t c : candidates) check_feature(sae, c);
  Tensor kept({features.dim(0), m});
  std::vector<std::size_t> order;
  for (std::size_t r = 0; r < features.dim(0); ++r) {
    const auto f = features.row(r);
    order = candidates;
    const std::size_t take = std::min(k, order.size());
    // Magnitude descending, lower index first on ties.
    std::ranges::partial_sort(order, order.begin() + static_cast<std::ptrdiff_t>(take),
                              [&](std::size_t a, std::size_t b) {
                                const float fa = std::abs(f[a]), fb = std::abs(f[b]);
                                return fa != fb ? fa > fb : a < b;
                              });
    auto out = kept.row(r);
    for (std::size_t i = 0; i < take; ++i) out[order[i]] = f[order[i]];
  }
  return decode(sae, kept);
}

std::vector<FveRow> fve_curve(const SaeParams& sae, const Tensor& dataset,
                              const std::vector<std::size_t>& ks,
                              const std::vector<std::size_t>& selective) {
  const Tensor feats = encode(sae, dataset);
  std::vector<FveRow> out;
  for (std::size_t k : ks) {
    FveRow row;
    row.k = k;
    row.by_magnitude = fraction_variance_explained(dataset, truncated_reconstruction(sae, feats, k));
    if (!selective.empty()) {
      const std::vector<std::size_t> first(selective.begin(),
                                           selective.begin() + static_cast<std::ptrdiff_t>(
                                                                   std::min(k, selective.size())));
      if (first.empty()) {
        row.selective_only = fraction_variance_explained(dataset, decode(sae, Tensor(feats.shape())));
      } else {
        row.selective_only =
            fraction_variance_explained(dataset, truncated_reconstruction(sae, feats, k, first));
      }
    }
    out.push_back(row);
  }
  return out;
}

std::string Stratification::to_csv() const {
  std::string out =
      "feature,name,firing_rate,cv,selectivity_ratio,selectivity_ratio_raw,peak_to_mean,causal_drop\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", r.feature.feature,
                       r.feature.name, r.firing_rate, r.cv, r.selectivity_ratio,
                       r.selectivity_ratio_raw, r.peak_to_mean, r.causal_drop);
  }
  out += fmt::format("# pearson_r,{:.6f}\n", pearson_r);
  return out;
}

Stratification stratify(const SaeParams& sae, const ModelWeights& weights, const BpeVocab& vocab,
                        const WordPools& pools, const std::vector<SelectiveFeature>& features,
                        std::size_t sae_layer, std::uint64_t seed, std::size_t n_paraphrases,
                        double firing_threshold) {
  Stratification s;
  std::vector<double> ratios, drops;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    const auto prompts =
        paraphrase_set(vocab, pools, f.name, derive_seed(seed, "paraphrase", i), n_paraphrases);
    const auto p = probe_feature(sae, weights, f.feature, prompts, sae_layer, firing_threshold);
    StratificationRow row;
    row.feature = f;
    row.firing_rate = p.firing_rate;
    row.cv = p.mean_act > 0 ? p.std_act / p.mean_act : 0.0;
    row.peak_to_mean = p.mean_act > 0 ? p.max_act / p.mean_act : 0.0;
    row.selectivity_ratio = f.mean_io / std::max(f.mean_s, kSelectivityEpsilon);
    row.selectivity_ratio_raw =
        f.mean_s > 0 ? f.mean_io / f.mean_s : std::numeric_limits<double>::infinity();
    row.causal_drop = p.mean_drop;
    ratios.push_back(row.selectivity_ratio);
    drops.push_back(row.causal_drop);
    s.rows.push_back(row);
  }
  s.pearson_r = pearson(ratios, drops);
  return s;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("pearson: arguments differ in length");
  if (x.size() < 3) throw NumericError("pearson needs at least 3 points");
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) throw NumericError("pearson: an argument has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace circuitbench
