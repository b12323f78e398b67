#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "circuitbench/feature_analysis.hpp"
#include "circuitbench/ioi.hpp"

namespace circuitbench {

// ---------------------------------------------------------------- ROC

struct RocPoint {
  double threshold = 0;  // flag iff score >= threshold
  double tpr = 0;
  double fpr = 0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0, 0) to (1, 1)
  double auc = 0;
};

/// Threshold sweep over the unique scores (equal scores form one step);
/// trapezoidal AUC. Throws ConfigError unless both classes are present.
RocCurve roc(std::span<const float> scores, const std::vector<bool>& labels);

// ---------------------------------------------------------------- monitors

enum class Condition { in_dist, ood_content, new_frame };
inline constexpr std::array<Condition, 3> kConditions = {Condition::in_dist, Condition::ood_content,
                                                         Condition::new_frame};
std::string to_string(Condition c);
Condition condition_from_string(const std::string& s);
PoolVariant variant_of(Condition c);
Frame frame_of(Condition c);

struct MonitorRates {
  double tpr = 0;
  double fpr = 0;
  std::optional<Condition> condition;  // nullopt: traffic-mixed
  double threshold = 0;
};

enum class CompositionOp { and_, or_ };

/// Independence composition. Throws ConfigError when the conditions differ.
MonitorRates compose(const MonitorRates& a, const MonitorRates& b, CompositionOp op);

/// F1 at the given class sizes (positives flagged at tpr, negatives at fpr).
double f1_score(double tpr, double fpr, double n_positive, double n_negative);

/// Template-aware parse: the name that appears twice is S, the other is IO.
/// The verdict "target is the IO" is flipped with probability `noise_rate`,
/// drawn from a per-query stream so it does not depend on evaluation order.
struct HeuristicVerdict {
  bool flag = false;
  bool abstained = false;  // unparseable text; never flags
  std::string io_name;
};
HeuristicVerdict heuristic_monitor(const std::string& text, const std::string& target,
                                   std::uint64_t query_id, std::uint64_t noise_seed,
                                   double noise_rate);

/// Rates after a symmetric verdict flip with probability `noise`.
MonitorRates with_flip_noise(MonitorRates rates, double noise);

// ---------------------------------------------------------------- measurements

struct MonitorSampling {
  std::size_t n_positive = 50;
  std::size_t n_negative = 200;
  std::size_t negative_pool = 300;  // shared per condition; first n_negative without the name kept
};

/// One feature as a monitor on one condition: END activations and the
/// noiseless heuristic verdicts on its positive and negative prompts.
struct ConditionScores {
  SelectiveFeature feature;
  Condition condition = Condition::in_dist;
  std::vector<float> positive, negative;
  std::vector<bool> heuristic_positive, heuristic_negative;

  MonitorRates sae_rates(double theta) const;  // flag iff activation > theta
  MonitorRates heuristic_rates() const;        // noiseless
  RocCurve roc_curve() const;
};

struct MonitorMeasurements {
  std::vector<ConditionScores> entries;  // feature-major, conditions in kConditions order

  const ConditionScores& at(std::size_t feature_index, Condition c) const;
  std::size_t n_features() const;

  nlohmann::json to_json() const;
  static MonitorMeasurements from_json(const nlohmann::json& j);
};

MonitorMeasurements measure_monitors(const SaeParams& sae, const ModelWeights& weights,
                                     const BpeVocab& vocab, const WordPools& pools,
                                     const std::vector<SelectiveFeature>& features,
                                     std::size_t sae_layer, std::uint64_t seed,
                                     const MonitorSampling& sampling = {});

// ---------------------------------------------------------------- cost model

struct CostModel {
  double c_fn = 50.0;
  double c_fp = 0.42;
  double p_err = 0.02;
  std::array<double, 3> traffic_mix = {0.70, 0.15, 0.15};  // in kConditions order
  double heuristic_noise = 0.05;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// 1000 · [p_err·(1 − tpr)·c_fn + (1 − p_err)·fpr·c_fp]
double expected_cost(double tpr, double fpr, const CostModel& model);
double expected_cost(const MonitorRates& rates, const CostModel& model);
double no_monitor_cost(const CostModel& model);

/// Infimum FN cost at which the monitor beats no monitor:
/// (1 − p)·fpr·c_fp / (p·tpr). 0 when fpr = 0; nullopt when tpr = 0.
std::optional<double> break_even_cfn(const CostModel& model, double tpr, double fpr);

enum class MonitorKind { sae_only, heuristic_only, sae_and_heur, sae_or_heur };
inline constexpr std::array<MonitorKind, 4> kMonitorKinds = {
    MonitorKind::sae_only, MonitorKind::heuristic_only, MonitorKind::sae_and_heur,
    MonitorKind::sae_or_heur};
std::string to_string(MonitorKind kind);

/// Per-condition rates of a configuration averaged over the first
/// `n_features` measured features (0 = all); the heuristic carries
/// `heuristic_noise`.
MonitorRates condition_rates(const MonitorMeasurements& m, MonitorKind kind, Condition c,
                             double theta, double heuristic_noise, std::size_t n_features = 0);

/// Traffic-weighted mix of the per-condition rates.
MonitorRates mixed_rates(const MonitorMeasurements& m, MonitorKind kind, double theta,
                         const CostModel& model, std::size_t n_features = 0);

/// lo, lo + step, ..., hi.
std::vector<double> threshold_grid(double lo = 0.0, double hi = 40.0, double step = 0.5);

struct SweepRow {
  MonitorKind kind = MonitorKind::sae_only;
  double theta = 0;
  double tpr = 0, fpr = 0;
  double cost = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  SweepRow optimum;
  double baseline_cost = 0;
  double savings_pct = 0;
  std::optional<double> break_even;

  std::string to_csv() const;
  /// {config, theta, tpr, fpr, cost_per_1000, savings_pct, break_even_c_fn}
  nlohmann::json recommendation() const;
};

/// Cost of every (configuration, θ); optimum by cost, then configuration
/// order, then smaller θ.
SweepResult sweep(const MonitorMeasurements& m, const CostModel& model,
                  const std::vector<double>& thetas, std::size_t n_features = 0);

struct SensitivityRow {
  double p_err = 0;
  SweepRow optimum;
  std::array<double, 4> best_cost{};  // per configuration, in kMonitorKinds order
};

std::vector<SensitivityRow> sensitivity(const MonitorMeasurements& m, const CostModel& model,
                                        const std::vector<double>& p_err_grid,
                                        const std::vector<double>& thetas,
                                        std::size_t n_features = 0);
std::string sensitivity_csv(const std::vector<SensitivityRow>& rows);

struct CompositionRow {
  MonitorKind kind = MonitorKind::sae_only;
  Condition condition = Condition::in_dist;
  double tpr = 0, fpr = 0, f1 = 0;
};

/// Every configuration under every condition at one threshold, averaged over
/// the first `n_features` features, with a noiseless heuristic. F1 uses each
/// feature's own positive/negative set sizes.
std::vector<CompositionRow> composition_table(const MonitorMeasurements& m, double theta,
                                              std::size_t n_features);
std::string composition_csv(const std::vector<CompositionRow>& rows);

}  // namespace circuitbench
