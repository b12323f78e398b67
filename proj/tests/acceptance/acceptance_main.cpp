// Acceptance suite: one PASS/FAIL line per primary criterion.
//
//   acceptance [MODEL_BIN] [--keep DIR] [--outputs DIR] [--threads N]
//
// The GPT-2 small weight file is taken from the argument, else
// $CIRCUITBENCH_MODEL, else data/gpt2/model.bin. With weights present the
// full pipeline (report-all) runs and every criterion is checked against its
// outputs. Without them, criteria that need the real model are reported as
// FAIL (blocked); their model-free parts still run, and the determinism
// criterion runs on a small random-weight model instead. --outputs checks
// an existing report-all directory without running anything.
#include <omp.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "circuitbench/deployment.hpp"
#include "circuitbench/error.hpp"
#include "circuitbench/experiment.hpp"
#include "circuitbench/model.hpp"
#include "circuitbench/rng.hpp"
#include "circuitbench/sae.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace circuitbench;

namespace {

const fs::path kSource = CIRCUITBENCH_SOURCE_DIR;

struct Verdict {
  bool pass = false;
  std::string detail;
};

// Accumulates the individual checks of one criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    all_ &= ok;
    parts_.push_back(fmt::format("{}{}", ok ? "" : "✗ ", what));
  }
  void within(double got, double target, double tol, const std::string& what) {
    expect(std::fabs(got - target) <= tol, fmt::format("{} {:+.3f} (want {:+.2f} ± {:.2f})", what, got, target, tol));
  }
  void in_range(double got, double lo, double hi, const std::string& what) {
    expect(got >= lo && got <= hi, fmt::format("{} {:.4g} (want [{}, {}])", what, got, lo, hi));
  }
  Verdict verdict() const {
    std::string d;
    for (const auto& p : parts_) d += (d.empty() ? "" : "; ") + p;
    return {all_, d};
  }

 private:
  bool all_ = true;
  std::vector<std::string> parts_;
};

json load(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(fmt::format("missing output {}", p.string()));
  return json::parse(in);
}

double num(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

// ------------------------------------------------------------ model-free checks

// Analytic SAE gradients vs central differences of an independent f64 loss
// (d = 6, 8 features, batch 4). Returns the worst relative error.
double sae_gradient_check() {
  SeededRng rng(17);
  Tensor batch({4, 6});
  for (auto& x : batch.data()) x = rng.uniform(-2.0f, 2.0f);
  SaeParams p = init_sae(batch, 8, 5);
  for (auto& x : p.b_enc.data()) x = rng.uniform(-0.3f, 0.3f);
  for (auto& x : p.b_dec.data()) x += rng.uniform(-0.3f, 0.3f);
  const double lambda = 0.5;
  const auto lg = loss_and_grads(p, batch, lambda);

  const auto cvt = [](const Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
  oracle::SaeF64 ref{6, 8, cvt(p.w_enc), cvt(p.b_enc), cvt(p.w_dec), cvt(p.b_dec)};
  const std::vector<double> hb(batch.data().begin(), batch.data().end());
  double worst = 0;
  const auto check = [&](std::vector<double>& params, const Tensor& grad) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double numeric = oracle::central_difference(
          [&] { return oracle::sae_loss(ref, hb, 4, lambda); }, params[i], 1e-6);
      worst = std::max(worst, std::fabs(grad.data()[i] - numeric) / std::max(std::fabs(numeric), 1e-6));
    }
  };
  check(ref.w_enc, lg.grads.w_enc);
  check(ref.b_enc, lg.grads.b_enc);
  check(ref.w_dec, lg.grads.w_dec);
  check(ref.b_dec, lg.grads.b_dec);
  return worst;
}

void deployment_analytics(Checks& c) {
  const MonitorRates sae{0.99, 0.01, Condition::in_dist, 0};
  const MonitorRates heur = with_flip_noise({1.0, 0.0, Condition::in_dist, 0}, 0.05);
  const auto both = compose(sae, heur, CompositionOp::and_);
  c.expect(std::fabs(both.tpr - 0.9405) < 1e-12, fmt::format("AND(0.99, noisy heuristic) TPR {:.6f}", both.tpr));
  const double none = no_monitor_cost(CostModel{});
  c.expect(std::fabs(none - 1000.0) < 1e-9, fmt::format("no-monitor cost ${:.2f}", none));
}

// ------------------------------------------------------------ pipeline

ExperimentConfig real_config(const fs::path& model, const fs::path& out) {
  ExperimentConfig c;
  c.weights = model;
  c.vocab = kSource / "data/gpt2/vocab.json";
  c.merges = kSource / "data/gpt2/merges.txt";
  c.pools = kSource / "data/pools.json";
  c.output_dir = out;
  return c;
}

// Small random-weight model on the GPT-2 vocabulary, used for the
// determinism criterion when the real weights are absent.
ExperimentConfig tiny_config(const fs::path& work, const fs::path& out) {
  ModelConfig m;
  m.n_layer = 3;
  m.n_head = 2;
  m.d_model = 16;
  m.n_ctx = 32;
  const fs::path weights = work / "tiny_model.bin";
  if (!fs::exists(weights)) save_weights(weights, random_weights(m, 4242));
  auto c = real_config(weights, out);
  c.global_seed = 7;
  c.model = m;
  c.baseline.n_prompts = 8;
  c.patching.n_pairs = 4;
  c.sae.layer = 1;
  c.sae.n_train = 96;
  c.sae.n_heldout = 24;
  c.sae.train.d_sae = 32;
  c.sae.train.steps = 60;
  c.sae.train.batch_size = 16;
  c.sae.train.l1_coefficient = 0.01;
  c.analysis.n_selectivity = 3;
  c.analysis.top_k = 6;
  c.analysis.n_ablation_prompts = 4;
  c.analysis.cumulative_ks = {0, 1, 3};
  c.analysis.fve_ks = {1, 2, 4, 8, 32};
  c.analysis.n_stratify = 4;
  c.analysis.n_paraphrases = 6;
  c.robustness = {6, 3, 3, 3, {{1, 1}, {2, 0}}};
  c.deployment.sampling = {5, 10, 40};
  c.deployment.n_monitor_features = 3;
  c.deployment.n_roc_features = 4;
  c.deployment.theta_step = 2.0;
  return c;
}

void run_pipeline(const ExperimentConfig& config) {
  Experiment e(config, RunOptions{true});
  OutputLock lock(config.output_dir);
  e.run("report-all");
  for (const auto& line : e.log()) std::cerr << "  " << line << '\n';
}

std::map<std::string, std::string> data_files(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    const auto ext = e.path().extension();
    if (!e.is_regular_file() || (ext != ".csv" && ext != ".json")) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), root).generic_string()] = {std::istreambuf_iterator<char>(in), {}};
  }
  return files;
}

// Side a may already hold a completed cold run.
Verdict determinism(const std::function<ExperimentConfig(const fs::path&)>& make, const fs::path& work,
                    bool a_done, const std::string& model_note) {
  const auto a = work / "determinism_a", b = work / "determinism_b";
  if (!a_done) {
    fs::remove_all(a);
    run_pipeline(make(a));
  }
  fs::remove_all(b);
  run_pipeline(make(b));
  const auto fa = data_files(a), fb = data_files(b);
  std::vector<std::string> differ;
  for (const auto& [path, content] : fa) {
    if (!fb.contains(path) || fb.at(path) != content) differ.push_back(path);
  }
  for (const auto& [path, content] : fb) {
    if (!fa.contains(path)) differ.push_back(path);
  }
  Checks c;
  c.expect(differ.empty(), fmt::format("{} CSV/JSON files compared across two cold report-all runs{}",
                                       fa.size(), differ.empty() ? "" : ", differing: " + differ.front()));
  auto v = c.verdict();
  v.detail += "; " + model_note;
  return v;
}

// ------------------------------------------------------------ criteria on outputs

Verdict baseline_criterion(const fs::path& out) {
  auto j = load(out / artifacts::kBaselineJson);
  Checks c;
  c.within(num(j["mean_logit_diff"]), 3.73, 0.30, "mean logit diff");
  c.expect(num(j["frac_correct"]) == 1.0, fmt::format("fraction correct {:.3f} (want 1.00)", num(j["frac_correct"])));
  return c.verdict();
}

Verdict head_criterion(const fs::path& out) {
  auto j = load(out / artifacts::kHeadSweepJson);
  auto& g = j["recovery"];
  Checks c;
  c.within(num(g[9][9]), 1.02, 0.15, "L9H9");
  c.within(num(g[9][6]), 0.32, 0.10, "L9H6");
  c.within(num(g[10][0]), 0.11, 0.08, "L10H0");
  c.within(num(g[10][7]), -0.54, 0.15, "L10H7");
  std::set<std::pair<int, int>> top;
  for (const auto& t : j["top_positive"]) top.emplace(t["layer"].get<int>(), t["head"].get<int>());
  c.expect(top == std::set<std::pair<int, int>>{{9, 9}, {9, 6}, {10, 0}}, "top-3 positive = {L9H9, L9H6, L10H0}");
  auto& neg = j["most_negative"];
  c.expect(neg["layer"] == 10 && neg["head"] == 7, fmt::format("most negative L{}H{} (want L10H7)",
                                                               neg.value("layer", -1), neg.value("head", -1)));
  return c.verdict();
}

Verdict resid_criterion(const fs::path& out) {
  auto j = load(out / artifacts::kResidSweepJson);
  const auto labels = j["col_labels"].get<std::vector<std::string>>();
  const auto col = [&](const std::string& l) {
    return static_cast<std::size_t>(std::find(labels.begin(), labels.end(), l) - labels.begin());
  };
  const auto io = col("IO"), s = col("S1"), end = col("END");
  auto& g = j["recovery"];
  Checks c;
  const std::size_t layers = g.size();
  std::size_t io_pos = 0, s_neg = 0;
  for (std::size_t l = 0; l < layers; ++l) io_pos += num(g[l][io]) > 0;
  for (std::size_t l = 0; l < layers / 2; ++l) s_neg += num(g[l][s]) < -0.1;
  c.expect(io_pos == layers, fmt::format("IO recovery > 0 at {}/{} layers", io_pos, layers));
  c.expect(s_neg >= 3, fmt::format("S recovery < -0.1 at {} of the first {} layers (want ≥ 3)", s_neg, layers / 2));
  c.expect(num(g[10][end]) > 0.5 && num(g[11][end]) > 0.5,
           fmt::format("END recovery L10 {:.3f}, L11 {:.3f} (want > 0.5)", num(g[10][end]), num(g[11][end])));
  return c.verdict();
}

Verdict sae_criterion(const fs::path* out, double grad_error) {
  Checks c;
  if (out) {
    auto j = load(*out / artifacts::kSaeJson);
    c.expect(num(j["variance_explained"]) >= 0.99, fmt::format("variance explained {:.4f} (want ≥ 0.99)", num(j["variance_explained"])));
    c.in_range(num(j["l0"]), 40, 150, "L0");
  } else {
    c.expect(false, "variance explained and L0 blocked: no GPT-2 small run");
  }
  c.expect(grad_error <= 1e-3, fmt::format("tiny-instance gradient check worst rel. error {:.2e} (want ≤ 1e-3)", grad_error));
  return c.verdict();
}

Verdict selectivity_criterion(const fs::path& out) {
  auto j = load(out / artifacts::kSelectiveJson);
  Checks c;
  double min_gap = INFINITY;
  std::string weakest;
  for (const auto& n : j["names"]) {
    if (num(n["gap"]) < min_gap) {
      min_gap = num(n["gap"]);
      weakest = n["name"].get<std::string>();
    }
  }
  c.expect(min_gap >= 20, fmt::format("smallest top-feature gap {:.2f} ({}) (want ≥ 20)", min_gap, weakest));
  return c.verdict();
}

Verdict single_ablation_criterion(const fs::path& out) {
  auto j = load(out / artifacts::kAblationJson);
  Checks c;
  c.in_range(num(j["mean_drop_preferred"]), 0.3, 1.3, "mean preferred-name drop");
  c.expect(num(j["mean_abs_change_other"]) < 0.15,
           fmt::format("mean |change| on other prompts {:.3f} (want < 0.15)", num(j["mean_abs_change_other"])));
  return c.verdict();
}

Verdict cumulative_criterion(const fs::path& out) {
  auto j = load(out / artifacts::kAblationJson);
  Checks c;
  const json* row = nullptr;
  for (const auto& r : j["cumulative"]) {
    if (r["k"] == 15) row = &r;
  }
  c.expect(row != nullptr, "k = 15 row present");
  if (row) {
    c.expect(num((*row)["frac_correct"]) >= 0.95, fmt::format("fraction correct {:.3f} (want ≥ 0.95)", num((*row)["frac_correct"])));
    c.expect(num((*row)["mean_delta"]) >= 3.0, fmt::format("mean Δ {:+.3f} (want ≥ 3.0)", num((*row)["mean_delta"])));
  }
  return c.verdict();
}

Verdict fve_criterion(const fs::path& out) {
  auto j = load(out / artifacts::kFveJson);
  Checks c;
  c.expect(num(j["ceiling"]) >= 0.99, fmt::format("ceiling {:.4f} (want ≥ 0.99)", num(j["ceiling"])));
  std::optional<double> mag10, sel15;
  for (const auto& r : j["rows"]) {
    if (r["k"] == 10) mag10 = num(r["by_magnitude"]);
    if (r["k"] == 15) sel15 = num(r["selective_only"]);
  }
  c.expect(mag10 && *mag10 >= 0.70, fmt::format("by-magnitude K=10 {:.4f} (want ≥ 0.70)", mag10.value_or(NAN)));
  c.expect(sel15 && *sel15 >= 0.15 && *sel15 <= 0.45,
           fmt::format("selective K=15 {:.4f} (want [0.15, 0.45])", sel15.value_or(NAN)));
  c.expect(j["monotone_by_magnitude"].get<bool>(), "monotone in K");
  return c.verdict();
}

Verdict stratification_criterion(const fs::path& out) {
  auto j = load(out / artifacts::kStratificationJson);
  Checks c;
  c.expect(j["n_features"] == 10, fmt::format("{} features (want 10)", j["n_features"].get<int>()));
  c.expect(num(j["min_firing_rate"]) == 1.0, fmt::format("min firing rate {:.3f} (want 1.00)", num(j["min_firing_rate"])));
  c.expect(num(j["pearson_r"]) < 0, fmt::format("pearson r {:+.3f} (want < 0)", num(j["pearson_r"])));
  return c.verdict();
}

Verdict robustness_criterion(const fs::path& out) {
  auto j = load(out / artifacts::kRobustnessJson);
  std::map<std::string, json> by;
  for (const auto& r : j["reports"]) by[r.value("shift", "")] = r;
  const auto l9h9 = [](json& r) {
    for (const auto& h : r["head_recovery"]) {
      if (h["layer"] == 9 && h["head"] == 9) return num(h["recovery"]);
    }
    return std::nan("");
  };
  const auto base = [](json& r) { return num(r["baseline"]["mean_logit_diff"]); };
  Checks c;
  auto& ood = by[to_string(ShiftKind::ood_content)];
  auto& ref = by[to_string(ShiftKind::reformulated_frame)];
  auto& held = by[to_string(ShiftKind::heldout_names)];
  c.within(base(ood), 3.47, 0.40, "OOD baseline");
  c.in_range(l9h9(ood), 0.8, 1.3, "OOD L9H9");
  c.within(base(ref), 3.22, 0.40, "reformulated baseline");
  c.in_range(l9h9(ref), 0.75, 1.25, "reformulated L9H9");
  auto& ret = j["retention"][to_string(ShiftKind::reformulated_frame)];
  c.expect(num(ret["mean_causal_retention"]) <= 0.65,
           fmt::format("causal retention {:.3f} (want ≤ 0.65)", num(ret["mean_causal_retention"])));
  c.expect(num(ret["mean_firing_retention"]) >= 0.75,
           fmt::format("firing retention {:.3f} (want ≥ 0.75)", num(ret["mean_firing_retention"])));
  c.within(base(held), 3.83, 0.40, "held-out baseline");
  std::set<std::string> excluded;
  for (const auto& n : held["multi_token_probes"]["excluded"]) excluded.insert(n.get<std::string>());
  const std::set<std::string> probes = {"Beatrice", "Mortimer", "Ophelia", "Genevieve", "Bartholomew"};
  c.expect(excluded == probes, fmt::format("{}/5 multi-token probes excluded", excluded.size()));
  return c.verdict();
}

Verdict deployment_criterion(const fs::path* out) {
  Checks c;
  deployment_analytics(c);
  if (!out) {
    c.expect(false, "AUC, sweep optimum, sensitivity and break-even blocked: no GPT-2 small run");
    return c.verdict();
  }
  const auto m = MonitorMeasurements::from_json(load(*out / artifacts::kMonitorJson));
  double min_auc = 1.0;
  for (const auto& e : m.entries) {
    if (e.condition == Condition::in_dist) min_auc = std::min(min_auc, e.roc_curve().auc);
  }
  c.expect(min_auc == 1.0, fmt::format("min in-dist AUC over {} features {:.4f} (want 1.0)", m.n_features(), min_auc));
  auto rec = load(*out / artifacts::kRecommendationJson);
  c.expect(rec["config"] == "sae_only", fmt::format("optimum {} (want sae_only)", rec["config"].get<std::string>()));
  c.in_range(num(rec["cost_per_1000"]), 5, 20, "optimal cost $");
  c.expect(num(rec["savings_pct"]) >= 97, fmt::format("savings {:.1f}% (want ≥ 97%)", num(rec["savings_pct"])));
  c.expect(!rec["break_even_c_fn"].is_null() && num(rec["break_even_c_fn"]) <= 1.0,
           fmt::format("break-even c_fn ${:.3f} (want ≤ $1)", num(rec["break_even_c_fn"])));
  auto sens = load(*out / artifacts::kSensitivityJson);
  const std::map<double, std::string> want = {{0.005, "sae_only"}, {0.02, "sae_only"}, {0.05, "sae_only"},
                                              {0.10, "sae_only"}, {0.20, "sae_or_heur"}};
  for (const auto& [p, kind] : want) {
    std::string got = "missing";
    for (const auto& r : sens["rows"]) {
      if (std::fabs(num(r["p_err"]) - p) < 1e-12) got = r["optimal_config"].get<std::string>();
    }
    c.expect(got == kind, fmt::format("p_err {} → {} (want {})", p, got, kind));
  }
  return c.verdict();
}

std::optional<fs::path> find_model(const std::string& arg) {
  std::vector<fs::path> candidates;
  if (!arg.empty()) candidates.emplace_back(arg);
  if (const char* env = std::getenv("CIRCUITBENCH_MODEL"); env && *env) candidates.emplace_back(env);
  candidates.push_back(kSource / "data/gpt2/model.bin");
  for (const auto& p : candidates) {
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria for the circuitbench pipeline"};
  std::string model_arg, keep, outputs;
  int threads = 0;
  app.add_option("model", model_arg, "GPT-2 small weight file (model.bin)");
  app.add_option("--keep", keep, "write pipeline outputs here and keep them");
  app.add_option("--outputs", outputs, "check an existing report-all output directory instead of running")
      ->check(CLI::ExistingDirectory);
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) omp_set_num_threads(threads);

  const auto model = find_model(model_arg);
  const fs::path work = keep.empty() ? fs::temp_directory_path() / fmt::format("circuitbench_acceptance_{}", ::getpid())
                                     : fs::path(keep);
  fs::create_directories(work);

  std::vector<std::pair<std::string, std::function<Verdict()>>> criteria;
  std::optional<fs::path> out;
  std::string pipeline_error;
  if (!outputs.empty()) {
    out = outputs;
  } else if (model) {
    std::cerr << "model: " << model->string() << "; running report-all\n";
    try {
      out = work / "determinism_a";
      fs::remove_all(*out);
      run_pipeline(real_config(*model, *out));
    } catch (const std::exception& e) {
      pipeline_error = e.what();
      out.reset();
    }
  } else {
    std::cerr << "model: not found (argument, $CIRCUITBENCH_MODEL, data/gpt2/model.bin)\n";
  }

  const std::string blocked =
      model ? fmt::format("blocked: report-all failed: {}", pipeline_error)
            : "blocked: GPT-2 small weights (model.bin) not available";
  const auto needs_model = [&](auto fn) {
    return [&, fn]() -> Verdict { return out ? fn(*out) : Verdict{false, blocked}; };
  };

  const double grad_error = sae_gradient_check();
  criteria.emplace_back("baseline", needs_model(baseline_criterion));
  criteria.emplace_back("head-sweep", needs_model(head_criterion));
  criteria.emplace_back("resid-sweep", needs_model(resid_criterion));
  criteria.emplace_back("sae-training", [&] {
    return sae_criterion(out ? &*out : nullptr, grad_error);
  });
  criteria.emplace_back("selectivity", needs_model(selectivity_criterion));
  criteria.emplace_back("single-ablation", needs_model(single_ablation_criterion));
  criteria.emplace_back("cumulative-ablation", needs_model(cumulative_criterion));
  criteria.emplace_back("fve", needs_model(fve_criterion));
  criteria.emplace_back("stratification", needs_model(stratification_criterion));
  criteria.emplace_back("robustness", needs_model(robustness_criterion));
  criteria.emplace_back("deployment", [&] {
    return deployment_criterion(out ? &*out : nullptr);
  });
  criteria.emplace_back("determinism", [&] {
    if (!outputs.empty()) return Verdict{false, "not checked: --outputs evaluates a single existing run"};
    if (model) {
      if (!out) return Verdict{false, blocked};
      return determinism([&](const fs::path& dir) { return real_config(*model, dir); }, work,
                         true, "GPT-2 small");
    }
    return determinism([&](const fs::path& dir) { return tiny_config(work, dir); }, work,
                       false, "run on a random-weight 3-layer model because GPT-2 weights are absent");
  });

  std::size_t failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, fmt::format("error: {}", e.what())};
    }
    failed += !v.pass;
    std::cout << fmt::format("{} {:<20} {}\n", v.pass ? "PASS" : "FAIL", name, v.detail) << std::flush;
  }
  std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
  if (keep.empty()) fs::remove_all(work);
  return failed == 0 ? 0 : 1;
}
