#include "circuitbench/deployment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <regex>
#include <fmt/format.h>

#include "circuitbench/error.hpp"
#include "circuitbench/rng.hpp"
#include "circuitbench/sae.hpp"

namespace circuitbench {

namespace {

double fraction_above(const std::vector<float>& scores, double theta) {
  if (scores.empty()) return 0.0;
  const auto n = std::ranges::count_if(scores, [&](float s) { return s > theta; });
  return static_cast<double>(n) / static_cast<double>(scores.size());
}

double fraction_true(const std::vector<bool>& v) {
  if (v.empty()) return 0.0;
  return static_cast<double>(std::ranges::count(v, true)) / static_cast<double>(v.size());
}

void check_probability(double p, const char* field) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ConfigError(fmt::format("cost model: {} must be in [0, 1], got {}", field, p));
  }
}

// Costs closer than this are ties for ranking purposes.
constexpr double kCostTie = 1e-9;

bool better(const SweepRow& a, const SweepRow& b) {
  if (std::abs(a.cost - b.cost) > kCostTie) return a.cost < b.cost;
  if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
  return a.theta < b.theta;
}

std::size_t feature_count(const MonitorMeasurements& m, std::size_t n_features) {
  const std::size_t available = m.n_features();
  if (available == 0) throw ConfigError("no monitor measurements");
  if (n_features == 0) return available;
  if (n_features > available) {
    throw ConfigError(fmt::format("{} monitor features requested but only {} measured", n_features,
                                  available));
  }
  return n_features;
}

MonitorRates configuration_rates(const ConditionScores& s, MonitorKind kind, double theta,
                                 double noise) {
  const MonitorRates sae = s.sae_rates(theta);
  const MonitorRates heur = with_flip_noise(s.heuristic_rates(), noise);
  switch (kind) {
    case MonitorKind::sae_only: return sae;
    case MonitorKind::heuristic_only: return heur;
    case MonitorKind::sae_and_heur: return compose(sae, heur, CompositionOp::and_);
    case MonitorKind::sae_or_heur: return compose(sae, heur, CompositionOp::or_);
  }
  return sae;
}

}  // namespace

// ---------------------------------------------------------------- ROC

RocCurve roc(std::span<const float> scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc: scores and labels differ in length");
  const auto n_pos = static_cast<double>(std::ranges::count(labels, true));
  const auto n_neg = static_cast<double>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ConfigError("roc needs both positive and negative examples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve c;
  c.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const float s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? tp : fp) += 1;
    const RocPoint p{s, tp / n_pos, fp / n_neg};
    const auto& prev = c.points.back();
    c.auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
    c.points.push_back(p);
  }
  return c;
}

// ---------------------------------------------------------------- monitors

std::string to_string(Condition c) {
  switch (c) {
    case Condition::in_dist: return "in_dist";
    case Condition::ood_content: return "ood_content";
    case Condition::new_frame: return "new_frame";
  }
  return "?";
}

Condition condition_from_string(const std::string& s) {
  for (auto c : kConditions) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError(fmt::format("unknown monitor condition '{}'", s));
}

PoolVariant variant_of(Condition c) {
  return c == Condition::ood_content ? PoolVariant::ood_content : PoolVariant::in_dist;
}

Frame frame_of(Condition c) { return c == Condition::new_frame ? Frame::cleft : Frame::canonical; }

MonitorRates compose(const MonitorRates& a, const MonitorRates& b, CompositionOp op) {
  if (a.condition != b.condition) {
    throw ConfigError("compose: monitor rates were measured under different conditions");
  }
  MonitorRates r = a;
  if (op == CompositionOp::and_) {
    r.tpr = a.tpr * b.tpr;
    r.fpr = a.fpr * b.fpr;
  } else {
    r.tpr = 1.0 - (1.0 - a.tpr) * (1.0 - b.tpr);
    r.fpr = 1.0 - (1.0 - a.fpr) * (1.0 - b.fpr);
  }
  return r;
}

double f1_score(double tpr, double fpr, double n_positive, double n_negative) {
  const double tp = tpr * n_positive;
  const double fp = fpr * n_negative;
  const double fn = n_positive - tp;
  const double denom = 2 * tp + fp + fn;
  return denom > 0 ? 2 * tp / denom : 0.0;
}

HeuristicVerdict heuristic_monitor(const std::string& text, const std::string& target,
                                   std::uint64_t query_id, std::uint64_t noise_seed,
                                   double noise_rate) {
  static const std::regex canonical(
      R"(^When (\w+) and (\w+) went to the \w+, (\w+) gave a \w+ to$)");
  static const std::regex cleft(
      R"(^After (\w+) and (\w+) arrived at the \w+, it was (\w+) who handed a \w+ to$)");
  HeuristicVerdict v;
  std::smatch m;
  if (!std::regex_match(text, m, canonical) && !std::regex_match(text, m, cleft)) {
    v.abstained = true;
    return v;
  }
  const std::string n1 = m[1], n2 = m[2], n3 = m[3];
  if (n1 == n2 || (n3 != n1 && n3 != n2)) {
    v.abstained = true;
    return v;
  }
  v.io_name = n3 == n1 ? n2 : n1;
  v.flag = v.io_name == target;
  if (noise_rate > 0) {
    SeededRng rng(derive_seed(noise_seed, "heuristic-noise", query_id));
    if (rng.uniform01() < noise_rate) v.flag = !v.flag;
  }
  return v;
}

MonitorRates with_flip_noise(MonitorRates rates, double noise) {
  rates.tpr = rates.tpr * (1.0 - noise) + (1.0 - rates.tpr) * noise;
  rates.fpr = rates.fpr * (1.0 - noise) + (1.0 - rates.fpr) * noise;
  return rates;
}

// ---------------------------------------------------------------- measurements

MonitorRates ConditionScores::sae_rates(double theta) const {
  return {fraction_above(positive, theta), fraction_above(negative, theta), condition, theta};
}

MonitorRates ConditionScores::heuristic_rates() const {
  return {fraction_true(heuristic_positive), fraction_true(heuristic_negative), condition, 0.0};
}

RocCurve ConditionScores::roc_curve() const {
  std::vector<float> scores = positive;
  scores.insert(scores.end(), negative.begin(), negative.end());
  std::vector<bool> labels(positive.size(), true);
  labels.resize(scores.size(), false);
  return roc(scores, labels);
}

const ConditionScores& MonitorMeasurements::at(std::size_t feature_index, Condition c) const {
  const std::size_t i = feature_index * kConditions.size() + static_cast<std::size_t>(c);
  if (i >= entries.size()) {
    throw ConfigError(fmt::format("no monitor measurement for feature #{}", feature_index));
  }
  return entries[i];
}

std::size_t MonitorMeasurements::n_features() const { return entries.size() / kConditions.size(); }

nlohmann::json MonitorMeasurements::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : entries) {
    out.push_back({{"feature", e.feature.feature},
                   {"name", e.feature.name},
                   {"gap", e.feature.gap},
                   {"mean_io", e.feature.mean_io},
                   {"mean_s", e.feature.mean_s},
                   {"condition", to_string(e.condition)},
                   {"positive", e.positive},
                   {"negative", e.negative},
                   {"heuristic_positive", e.heuristic_positive},
                   {"heuristic_negative", e.heuristic_negative}});
  }
  return {{"entries", out}};
}

MonitorMeasurements MonitorMeasurements::from_json(const nlohmann::json& j) {
  MonitorMeasurements m;
  try {
    for (const auto& e : j.at("entries")) {
      ConditionScores s;
      s.feature.feature = e.at("feature").get<std::size_t>();
      s.feature.name = e.at("name").get<std::string>();
      s.feature.gap = e.at("gap").get<double>();
      s.feature.mean_io = e.at("mean_io").get<double>();
      s.feature.mean_s = e.at("mean_s").get<double>();
      s.condition = condition_from_string(e.at("condition").get<std::string>());
      s.positive = e.at("positive").get<std::vector<float>>();
      s.negative = e.at("negative").get<std::vector<float>>();
      s.heuristic_positive = e.at("heuristic_positive").get<std::vector<bool>>();
      s.heuristic_negative = e.at("heuristic_negative").get<std::vector<bool>>();
      m.entries.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("monitor measurements: {}", e.what()));
  }
  if (m.entries.size() % kConditions.size() != 0) {
    throw FormatError("monitor measurements: entry count is not a multiple of the condition count");
  }
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (m.entries[i].condition != kConditions[i % kConditions.size()]) {
      throw FormatError(fmt::format("monitor measurements: entry {} is out of order", i));
    }
  }
  return m;
}

MonitorMeasurements measure_monitors(const SaeParams& sae, const ModelWeights& weights,
                                     const BpeVocab& vocab, const WordPools& pools,
                                     const std::vector<SelectiveFeature>& features,
                                     std::size_t sae_layer, std::uint64_t seed,
                                     const MonitorSampling& sampling) {
  if (features.empty()) throw ConfigError("monitor measurement needs at least one feature");
  for (const auto& f : features) {
    if (f.feature >= sae.d_sae()) throw ConfigError(fmt::format("feature {} does not exist", f.feature));
  }
  MonitorMeasurements m;
  m.entries.resize(features.size() * kConditions.size());
  for (const Condition c : kConditions) {
    SampleSpec base;
    base.variant = variant_of(c);
    base.frame = frame_of(c);
    const auto pool = sample_batch(vocab, pools, derive_seed(seed, "monitor-negatives/" + to_string(c)),
                                   sampling.negative_pool, base);

    // All prompts of this condition in one activation pass: the shared pool
    // first, then each feature's positives.
    std::vector<IoiPrompt> prompts = pool;
    for (std::size_t i = 0; i < features.size(); ++i) {
      SampleSpec spec = base;
      spec.io_name = features[i].name;
      const auto pos = sample_batch(vocab, pools,
                                    derive_seed(seed, "monitor-positives/" + to_string(c), i),
                                    sampling.n_positive, spec);
      prompts.insert(prompts.end(), pos.begin(), pos.end());
    }
    const Tensor acts = encode(sae, collect_activations(weights, prompts, sae_layer));

    for (std::size_t i = 0; i < features.size(); ++i) {
      auto& e = m.entries[i * kConditions.size() + static_cast<std::size_t>(c)];
      e.feature = features[i];
      e.condition = c;
      const std::size_t f = features[i].feature;
      const std::size_t offset = pool.size() + i * sampling.n_positive;
      for (std::size_t p = 0; p < sampling.n_positive; ++p) {
        const auto& prompt = prompts[offset + p];
        e.positive.push_back(acts(offset + p, f));
        e.heuristic_positive.push_back(heuristic_monitor(prompt.text, features[i].name, 0, 0, 0.0).flag);
      }
      for (std::size_t p = 0; p < pool.size() && e.negative.size() < sampling.n_negative; ++p) {
        if (pool[p].io_name == features[i].name || pool[p].s_name == features[i].name) continue;
        e.negative.push_back(acts(p, f));
        e.heuristic_negative.push_back(heuristic_monitor(pool[p].text, features[i].name, 0, 0, 0.0).flag);
      }
      if (e.negative.size() < sampling.n_negative) {
        throw ConfigError(fmt::format(
            "only {} of {} negative prompts for '{}' under {}; enlarge the negative pool",
            e.negative.size(), sampling.n_negative, features[i].name, to_string(c)));
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------- cost model

void CostModel::validate() const {
  if (!(c_fn >= 0)) throw ConfigError(fmt::format("cost model: c_fn must be >= 0, got {}", c_fn));
  if (!(c_fp >= 0)) throw ConfigError(fmt::format("cost model: c_fp must be >= 0, got {}", c_fp));
  check_probability(p_err, "p_err");
  check_probability(heuristic_noise, "heuristic_noise");
  double total = 0;
  for (double w : traffic_mix) {
    check_probability(w, "traffic_mix");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError(fmt::format("cost model: traffic_mix must sum to 1, got {}", total));
  }
}

double expected_cost(double tpr, double fpr, const CostModel& model) {
  return 1000.0 * (model.p_err * (1.0 - tpr) * model.c_fn + (1.0 - model.p_err) * fpr * model.c_fp);
}

double expected_cost(const MonitorRates& rates, const CostModel& model) {
  return expected_cost(rates.tpr, rates.fpr, model);
}

double no_monitor_cost(const CostModel& model) { return expected_cost(0.0, 0.0, model); }

std::optional<double> break_even_cfn(const CostModel& model, double tpr, double fpr) {
  if (tpr <= 0.0 || model.p_err <= 0.0) return std::nullopt;
  if (fpr <= 0.0) return 0.0;
  return (1.0 - model.p_err) * fpr * model.c_fp / (model.p_err * tpr);
}

std::string to_string(MonitorKind kind) {
  switch (kind) {
    case MonitorKind::sae_only: return "sae_only";
    case MonitorKind::heuristic_only: return "heuristic_only";
    case MonitorKind::sae_and_heur: return "sae_and_heur";
    case MonitorKind::sae_or_heur: return "sae_or_heur";
  }
  return "?";
}

MonitorRates condition_rates(const MonitorMeasurements& m, MonitorKind kind, Condition c,
                             double theta, double heuristic_noise, std::size_t n_features) {
  const std::size_t n = feature_count(m, n_features);
  MonitorRates r{0.0, 0.0, c, theta};
  for (std::size_t i = 0; i < n; ++i) {
    const auto one = configuration_rates(m.at(i, c), kind, theta, heuristic_noise);
    r.tpr += one.tpr;
    r.fpr += one.fpr;
  }
  r.tpr /= static_cast<double>(n);
  r.fpr /= static_cast<double>(n);
  return r;
}

MonitorRates mixed_rates(const MonitorMeasurements& m, MonitorKind kind, double theta,
                         const CostModel& model, std::size_t n_features) {
  MonitorRates r{0.0, 0.0, std::nullopt, theta};
  for (const Condition c : kConditions) {
    const double w = model.traffic_mix[static_cast<std::size_t>(c)];
    const auto one = condition_rates(m, kind, c, theta, model.heuristic_noise, n_features);
    r.tpr += w * one.tpr;
    r.fpr += w * one.fpr;
  }
  return r;
}

std::vector<double> threshold_grid(double lo, double hi, double step) {
  if (!(step > 0) || hi < lo) throw ConfigError("threshold grid: need step > 0 and hi >= lo");
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
  return out;
}

std::string SweepResult::to_csv() const {
  std::string out = "config,theta,tpr,fpr,cost_per_1000\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{:.2f},{:.6f},{:.6f},{:.6f}\n", to_string(r.kind), r.theta, r.tpr, r.fpr,
                       r.cost);
  }
  return out;
}

nlohmann::json SweepResult::recommendation() const {
  return {{"config", to_string(optimum.kind)},
          {"theta", optimum.theta},
          {"tpr", optimum.tpr},
          {"fpr", optimum.fpr},
          {"cost_per_1000", optimum.cost},
          {"baseline_cost_per_1000", baseline_cost},
          {"savings_pct", savings_pct},
          {"break_even_c_fn", break_even ? nlohmann::json(*break_even) : nlohmann::json(nullptr)},
          {"composition_assumption", "independent monitor errors"}};
}

SweepResult sweep(const MonitorMeasurements& m, const CostModel& model,
                  const std::vector<double>& thetas, std::size_t n_features) {
  model.validate();
  if (thetas.empty()) throw ConfigError("sweep needs at least one threshold");
  SweepResult s;
  s.baseline_cost = no_monitor_cost(model);
  for (const MonitorKind kind : kMonitorKinds) {
    for (const double theta : thetas) {
      const auto r = mixed_rates(m, kind, theta, model, n_features);
      s.rows.push_back({kind, theta, r.tpr, r.fpr, expected_cost(r, model)});
    }
  }
  s.optimum = *std::ranges::min_element(s.rows, better);
  s.savings_pct = s.baseline_cost > 0 ? 100.0 * (s.baseline_cost - s.optimum.cost) / s.baseline_cost : 0.0;
  s.break_even = break_even_cfn(model, s.optimum.tpr, s.optimum.fpr);
  return s;
}

std::vector<SensitivityRow> sensitivity(const MonitorMeasurements& m, const CostModel& model,
                                        const std::vector<double>& p_err_grid,
                                        const std::vector<double>& thetas,
                                        std::size_t n_features) {
  std::vector<SensitivityRow> out;
  for (const double p : p_err_grid) {
    CostModel at = model;
    at.p_err = p;
    const auto s = sweep(m, at, thetas, n_features);
    SensitivityRow row;
    row.p_err = p;
    row.optimum = s.optimum;
    row.best_cost.fill(std::numeric_limits<double>::infinity());
    for (const auto& r : s.rows) {
      auto& best = row.best_cost[static_cast<std::size_t>(r.kind)];
      best = std::min(best, r.cost);
    }
    out.push_back(row);
  }
  return out;
}

std::string sensitivity_csv(const std::vector<SensitivityRow>& rows) {
  std::string out = "p_err,optimal_config,optimal_theta,optimal_cost";
  for (const auto k : kMonitorKinds) out += ",best_" + to_string(k);
  out += '\n';
  for (const auto& r : rows) {
    out += fmt::format("{:.4f},{},{:.2f},{:.6f}", r.p_err, to_string(r.optimum.kind), r.optimum.theta,
                       r.optimum.cost);
    for (double c : r.best_cost) out += fmt::format(",{:.6f}", c);
    out += '\n';
  }
  return out;
}

std::vector<CompositionRow> composition_table(const MonitorMeasurements& m, double theta,
                                              std::size_t n_features) {
  const std::size_t n = feature_count(m, n_features);
  std::vector<CompositionRow> out;
  for (const MonitorKind kind : kMonitorKinds) {
    for (const Condition c : kConditions) {
      CompositionRow row{kind, c};
      for (std::size_t i = 0; i < n; ++i) {
        const auto& s = m.at(i, c);
        const auto r = configuration_rates(s, kind, theta, 0.0);
        row.tpr += r.tpr;
        row.fpr += r.fpr;
        row.f1 += f1_score(r.tpr, r.fpr, static_cast<double>(s.positive.size()),
                           static_cast<double>(s.negative.size()));
      }
      row.tpr /= static_cast<double>(n);
      row.fpr /= static_cast<double>(n);
      row.f1 /= static_cast<double>(n);
      out.push_back(row);
    }
  }
  return out;
}

std::string composition_csv(const std::vector<CompositionRow>& rows) {
  std::string out = "config,condition,tpr,fpr,f1\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{:.6f},{:.6f},{:.6f}\n", to_string(r.kind), to_string(r.condition), r.tpr,
                       r.fpr, r.f1);
  }
  return out;
}

}  // namespace circuitbench
