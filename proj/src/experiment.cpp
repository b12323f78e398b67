#include "circuitbench/experiment.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <fmt/format.h>

#include "circuitbench/error.hpp"
#include "circuitbench/feature_analysis.hpp"
#include "circuitbench/ioi.hpp"
#include "circuitbench/patching.hpp"
#include "circuitbench/rng.hpp"
#include "circuitbench/sha256.hpp"
#include "circuitbench/svg.hpp"

#ifndef CIRCUITBENCH_VERSION
#define CIRCUITBENCH_VERSION "unknown"
#endif

namespace circuitbench {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config io

namespace {

// Walks one JSON object, reading known keys and rejecting the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected an object", label()));
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  static bool is_count(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!is_count(*v)) throw type_error(key, "a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw type_error(key, "a number");
      out = v->get<double>();
    }
  }

  void read(const std::string& key, float& out) {
    double d = out;
    read(key, d);
    out = static_cast<float>(d);
  }

  void read(const std::string& key, fs::path& out, const fs::path& base) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw type_error(key, "a path string");
      fs::path p = v->get<std::string>();
      if (p.empty()) throw ConfigError(fmt::format("{}: empty path", field(key)));
      out = (!base.empty() && p.is_relative()) ? base / p : p;
    }
  }

  template <typename T>
  void read_list(const std::string& key, std::vector<T>& out) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_array()) throw type_error(key, "an array");
    std::vector<T> values;
    for (const auto& e : *v) {
      if constexpr (std::is_floating_point_v<T>) {
        if (!e.is_number()) throw type_error(key, "an array of numbers");
      } else {
        if (!is_count(e)) throw type_error(key, "an array of non-negative integers");
      }
      values.push_back(e.get<T>());
    }
    out = std::move(values);
  }

  void read_heads(const std::string& key, std::vector<HeadId>& out) {
    const json* v = find(key);
    if (!v) return;
    const auto bad = [&] { return type_error(key, "an array of [layer, head] pairs"); };
    if (!v->is_array()) throw bad();
    std::vector<HeadId> heads;
    for (const auto& e : *v) {
      if (!e.is_array() || e.size() != 2 || !is_count(e[0]) || !is_count(e[1])) {
        throw bad();
      }
      heads.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
    }
    out = std::move(heads);
  }

  template <typename F>
  void child(const std::string& key, F&& fn) {
    if (const json* v = find(key)) {
      Section s(*v, field(key));
      fn(s);
      s.finish();
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(fmt::format("{}: unknown field", field(key)));
    }
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }
  ConfigError type_error(const std::string& key, const char* expected) const {
    return ConfigError(fmt::format("{}: expected {}", field(key), expected));
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(fmt::format("{}: {}", field, message));
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("config: cannot open {}", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config: {} is not valid JSON: {}", path.string(), e.what()));
  }
  return from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  ExperimentConfig c;
  Section root(j, "");
  root.read("global_seed", c.global_seed);
  root.read("weights", c.weights, base_dir);
  root.read("vocab", c.vocab, base_dir);
  root.read("merges", c.merges, base_dir);
  root.read("pools", c.pools, base_dir);
  root.read("output_dir", c.output_dir, base_dir);
  root.child("model", [&](Section& s) {
    s.read("n_layer", c.model.n_layer);
    s.read("n_head", c.model.n_head);
    s.read("d_model", c.model.d_model);
    s.read("d_vocab", c.model.d_vocab);
    s.read("n_ctx", c.model.n_ctx);
    s.read("ln_eps", c.model.ln_eps);
  });
  root.child("baseline", [&](Section& s) { s.read("n_prompts", c.baseline.n_prompts); });
  root.child("patching", [&](Section& s) { s.read("n_pairs", c.patching.n_pairs); });
  root.child("sae", [&](Section& s) {
    s.read("layer", c.sae.layer);
    s.read("n_train", c.sae.n_train);
    s.read("n_heldout", c.sae.n_heldout);
    s.read("d_sae", c.sae.train.d_sae);
    s.read("l1_coefficient", c.sae.train.l1_coefficient);
    s.read("steps", c.sae.train.steps);
    s.read("batch_size", c.sae.train.batch_size);
    s.read("learning_rate", c.sae.train.learning_rate);
    s.read("beta1", c.sae.train.beta1);
    s.read("beta2", c.sae.train.beta2);
    s.read("epsilon", c.sae.train.epsilon);
  });
  root.child("analysis", [&](Section& s) {
    auto& a = c.analysis;
    s.read("n_selectivity", a.n_selectivity);
    s.read("top_k", a.top_k);
    s.read("n_ablation_prompts", a.n_ablation_prompts);
    s.read_list("cumulative_ks", a.cumulative_ks);
    s.read_list("fve_ks", a.fve_ks);
    s.read("n_stratify", a.n_stratify);
    s.read("n_paraphrases", a.n_paraphrases);
    s.read("firing_threshold", a.firing_threshold);
  });
  root.child("robustness", [&](Section& s) {
    auto& r = c.robustness;
    s.read("n_baseline", r.n_baseline);
    s.read("n_pairs", r.n_pairs);
    s.read("n_feature_prompts", r.n_feature_prompts);
    s.read("n_dominant_prompts", r.n_dominant_prompts);
    s.read_heads("heads", r.heads);
  });
  root.child("deployment", [&](Section& s) {
    auto& d = c.deployment;
    s.read("c_fn", d.cost.c_fn);
    s.read("c_fp", d.cost.c_fp);
    s.read("p_err", d.cost.p_err);
    s.read("heuristic_noise", d.cost.heuristic_noise);
    std::vector<double> mix(d.cost.traffic_mix.begin(), d.cost.traffic_mix.end());
    s.read_list("traffic_mix", mix);
    if (mix.size() != 3) {
      throw ConfigError(
          "deployment.traffic_mix: expected 3 weights (in_dist, ood_content, new_frame)");
    }
    std::copy(mix.begin(), mix.end(), d.cost.traffic_mix.begin());
    s.read("n_positive", d.sampling.n_positive);
    s.read("n_negative", d.sampling.n_negative);
    s.read("negative_pool", d.sampling.negative_pool);
    s.read("theta_min", d.theta_min);
    s.read("theta_max", d.theta_max);
    s.read("theta_step", d.theta_step);
    s.read_list("p_err_grid", d.p_err_grid);
    s.read("n_monitor_features", d.n_monitor_features);
    s.read("n_roc_features", d.n_roc_features);
    s.read("compose_theta", d.compose_theta);
  });
  root.finish();
  return c;
}

json ExperimentConfig::to_json() const {
  json heads = json::array();
  for (const auto& [l, h] : robustness.heads) heads.push_back({l, h});
  return {
      {"global_seed", global_seed},
      {"weights", weights.string()},
      {"vocab", vocab.string()},
      {"merges", merges.string()},
      {"pools", pools.string()},
      {"output_dir", output_dir.string()},
      {"model",
       {{"n_layer", model.n_layer},
        {"n_head", model.n_head},
        {"d_model", model.d_model},
        {"d_vocab", model.d_vocab},
        {"n_ctx", model.n_ctx},
        {"ln_eps", model.ln_eps}}},
      {"baseline", {{"n_prompts", baseline.n_prompts}}},
      {"patching", {{"n_pairs", patching.n_pairs}}},
      {"sae",
       {{"layer", sae.layer},
        {"n_train", sae.n_train},
        {"n_heldout", sae.n_heldout},
        {"d_sae", sae.train.d_sae},
        {"l1_coefficient", sae.train.l1_coefficient},
        {"steps", sae.train.steps},
        {"batch_size", sae.train.batch_size},
        {"learning_rate", sae.train.learning_rate},
        {"beta1", sae.train.beta1},
        {"beta2", sae.train.beta2},
        {"epsilon", sae.train.epsilon}}},
      {"analysis",
       {{"n_selectivity", analysis.n_selectivity},
        {"top_k", analysis.top_k},
        {"n_ablation_prompts", analysis.n_ablation_prompts},
        {"cumulative_ks", analysis.cumulative_ks},
        {"fve_ks", analysis.fve_ks},
        {"n_stratify", analysis.n_stratify},
        {"n_paraphrases", analysis.n_paraphrases},
        {"firing_threshold", analysis.firing_threshold}}},
      {"robustness",
       {{"n_baseline", robustness.n_baseline},
        {"n_pairs", robustness.n_pairs},
        {"n_feature_prompts", robustness.n_feature_prompts},
        {"n_dominant_prompts", robustness.n_dominant_prompts},
        {"heads", heads}}},
      {"deployment",
       {{"c_fn", deployment.cost.c_fn},
        {"c_fp", deployment.cost.c_fp},
        {"p_err", deployment.cost.p_err},
        {"heuristic_noise", deployment.cost.heuristic_noise},
        {"traffic_mix", deployment.cost.traffic_mix},
        {"n_positive", deployment.sampling.n_positive},
        {"n_negative", deployment.sampling.n_negative},
        {"negative_pool", deployment.sampling.negative_pool},
        {"theta_min", deployment.theta_min},
        {"theta_max", deployment.theta_max},
        {"theta_step", deployment.theta_step},
        {"p_err_grid", deployment.p_err_grid},
        {"n_monitor_features", deployment.n_monitor_features},
        {"n_roc_features", deployment.n_roc_features},
        {"compose_theta", deployment.compose_theta}}},
  };
}

void ExperimentConfig::validate() const {
  const auto& m = model;
  require(m.n_layer >= 1, "model.n_layer", "must be >= 1");
  require(m.n_head >= 1, "model.n_head", "must be >= 1");
  require(m.d_model >= 1 && m.d_model % m.n_head == 0, "model.d_model",
          "must be a positive multiple of model.n_head");
  require(m.d_vocab > static_cast<std::size_t>(kEndOfText), "model.d_vocab",
          fmt::format("must cover the GPT-2 vocabulary ({} ids)", kEndOfText + 1));
  require(m.n_ctx >= 1, "model.n_ctx", "must be >= 1");
  require(m.ln_eps > 0, "model.ln_eps", "must be > 0");

  require(baseline.n_prompts >= 1, "baseline.n_prompts", "must be >= 1");
  require(patching.n_pairs >= 1, "patching.n_pairs", "must be >= 1");

  require(sae.layer < m.n_layer, "sae.layer", fmt::format("must be < model.n_layer ({})", m.n_layer));
  require(sae.n_train >= 2, "sae.n_train", "must be >= 2");
  require(sae.n_heldout >= 2, "sae.n_heldout", "must be >= 2");
  const auto& t = sae.train;
  require(t.d_sae >= 1, "sae.d_sae", "must be >= 1");
  require(t.l1_coefficient >= 0, "sae.l1_coefficient", "must be >= 0");
  require(t.steps >= 1, "sae.steps", "must be >= 1");
  require(t.batch_size >= 1, "sae.batch_size", "must be >= 1");
  require(t.learning_rate > 0, "sae.learning_rate", "must be > 0");
  require(t.beta1 >= 0 && t.beta1 < 1, "sae.beta1", "must be in [0, 1)");
  require(t.beta2 >= 0 && t.beta2 < 1, "sae.beta2", "must be in [0, 1)");
  require(t.epsilon > 0, "sae.epsilon", "must be > 0");

  const auto& a = analysis;
  require(a.n_selectivity >= 1, "analysis.n_selectivity", "must be >= 1");
  require(a.top_k >= 1, "analysis.top_k", "must be >= 1");
  require(a.n_ablation_prompts >= 1, "analysis.n_ablation_prompts", "must be >= 1");
  for (auto k : a.cumulative_ks) {
    require(k <= a.top_k, "analysis.cumulative_ks", fmt::format("{} exceeds analysis.top_k", k));
  }
  require(!a.fve_ks.empty(), "analysis.fve_ks", "must not be empty");
  for (auto k : a.fve_ks) {
    require(k >= 1 && k <= t.d_sae, "analysis.fve_ks",
            fmt::format("{} is outside [1, sae.d_sae = {}]", k, t.d_sae));
  }
  require(a.n_stratify >= 3 && a.n_stratify <= a.top_k, "analysis.n_stratify",
          "must be in [3, analysis.top_k] (a correlation needs three points)");
  require(a.n_paraphrases >= 1, "analysis.n_paraphrases", "must be >= 1");
  require(std::isfinite(a.firing_threshold), "analysis.firing_threshold", "must be finite");

  const auto& r = robustness;
  require(r.n_baseline >= 1, "robustness.n_baseline", "must be >= 1");
  require(r.n_pairs >= 1, "robustness.n_pairs", "must be >= 1");
  require(r.n_feature_prompts >= 1, "robustness.n_feature_prompts", "must be >= 1");
  require(r.n_dominant_prompts >= 1, "robustness.n_dominant_prompts", "must be >= 1");
  for (const auto& [l, h] : r.heads) {
    require(l < m.n_layer && h < m.n_head, "robustness.heads",
            fmt::format("[{}, {}] is outside the model", l, h));
  }

  const auto& d = deployment;
  try {
    d.cost.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("deployment: {}", e.what()));
  }
  require(d.sampling.n_positive >= 1, "deployment.n_positive", "must be >= 1");
  require(d.sampling.n_negative >= 1, "deployment.n_negative", "must be >= 1");
  require(d.sampling.negative_pool >= d.sampling.n_negative, "deployment.negative_pool",
          "must be >= deployment.n_negative");
  require(d.theta_step > 0, "deployment.theta_step", "must be > 0");
  require(d.theta_max >= d.theta_min, "deployment.theta_max", "must be >= deployment.theta_min");
  require(!d.p_err_grid.empty(), "deployment.p_err_grid", "must not be empty");
  for (double p : d.p_err_grid) {
    require(p > 0 && p < 1, "deployment.p_err_grid", fmt::format("{} is outside (0, 1)", p));
  }
  require(d.n_monitor_features >= 1 && d.n_monitor_features <= a.top_k,
          "deployment.n_monitor_features", "must be in [1, analysis.top_k]");
  require(d.n_roc_features >= 1 && d.n_roc_features <= a.top_k, "deployment.n_roc_features",
          "must be in [1, analysis.top_k]");
  require(std::isfinite(d.compose_theta), "deployment.compose_theta", "must be finite");
}

std::string ExperimentConfig::sha256() const {
  json j = to_json();
  j.erase("output_dir");
  const std::string text = j.dump();
  return to_hex(circuitbench::sha256(
      std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
}

bool is_subcommand(std::string_view name) {
  return std::find(kSubcommands.begin(), kSubcommands.end(), name) != kSubcommands.end();
}

// ---------------------------------------------------------------- records

json RunRecord::to_json() const {
  json outs = json::array();
  for (const auto& e : outputs) outs.push_back({{"path", e.path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
  return {{"experiment", experiment},
          {"config_sha256", config_sha256},
          {"version", version},
          {"global_seed", global_seed},
          {"wall_time_seconds", wall_time_seconds ? json(*wall_time_seconds) : json(nullptr)},
          {"outputs", outs}};
}

RunRecord RunRecord::from_json(const json& j) {
  try {
    RunRecord r;
    r.experiment = j.at("experiment").get<std::string>();
    r.config_sha256 = j.at("config_sha256").get<std::string>();
    r.version = j.at("version").get<std::string>();
    r.global_seed = j.at("global_seed").get<std::uint64_t>();
    if (!j.at("wall_time_seconds").is_null()) r.wall_time_seconds = j["wall_time_seconds"].get<double>();
    for (const auto& e : j.at("outputs")) {
      r.outputs.push_back({e.at("path").get<std::string>(), e.at("sha256").get<std::string>(),
                           e.at("bytes").get<std::uintmax_t>()});
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("run record: {}", e.what()));
  }
}

std::string artifact_version() { return CIRCUITBENCH_VERSION; }

OutputLock::OutputLock(const fs::path& output_dir) : path_(output_dir / ".lock") {
  fs::create_directories(output_dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw ConfigError(fmt::format(
          "output_dir: {} is in use by another run (remove {} if that run is gone)",
          output_dir.string(), path_.string()));
    }
    throw ConfigError(fmt::format("output_dir: cannot create {}", path_.string()));
  }
  const std::string pid = fmt::format("{}\n", ::getpid());
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---------------------------------------------------------------- stages

namespace {

void write_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write {}", tmp.string()));
    out << content;
    if (!out) throw Error(fmt::format("write failed: {}", tmp.string()));
  }
  fs::rename(tmp, path);
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError(fmt::format("{} is not finite ({})", what, v));
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json to_json(const SelectiveFeature& f) {
  return {{"name", f.name}, {"feature", f.feature}, {"gap", f.gap}, {"mean_io", f.mean_io},
          {"mean_s", f.mean_s}};
}

SelectiveFeature selective_from_json(const json& j) {
  return {j.at("name").get<std::string>(), j.at("feature").get<std::size_t>(),
          j.at("gap").get<double>(), j.at("mean_io").get<double>(), j.at("mean_s").get<double>()};
}

json grid_json(const SweepGrid& g) {
  json rows = json::array();
  for (std::size_t r = 0; r < g.rows; ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < g.cols; ++c) row.push_back(g.at(r, c));
    rows.push_back(row);
  }
  return {{"rows", g.rows}, {"cols", g.cols}, {"col_labels", g.col_labels}, {"recovery", rows},
          {"n_pairs", g.n_pairs}, {"n_degenerate", g.n_degenerate}};
}

std::string shift_label(ShiftKind k) {
  switch (k) {
    case ShiftKind::in_distribution: return "in-dist";
    case ShiftKind::ood_content: return "OOD content";
    case ShiftKind::heldout_names: return "held-out names";
    case ShiftKind::reformulated_frame: return "reformulated";
  }
  return "?";
}

}  // namespace

struct Experiment::State {
  ExperimentConfig config;
  RunOptions options;
  fs::path out;
  std::string config_hash;

  std::optional<BpeVocab> vocab_;
  std::optional<WordPools> pools_;
  std::optional<ModelWeights> weights_;
  std::optional<std::vector<PreparedPair>> pairs_;

  std::vector<std::string> written;
  std::vector<std::string> log;

  svg::RenderOptions render() const { return {options.deterministic}; }
  std::uint64_t seed() const { return config.global_seed; }
  std::size_t layer() const { return config.sae.layer; }

  static void require_input(const fs::path& p, const char* field) {
    if (!fs::exists(p)) throw ConfigError(fmt::format("{}: file not found: {}", field, p.string()));
  }

  const BpeVocab& vocab() {
    if (!vocab_) {
      require_input(config.vocab, "vocab");
      require_input(config.merges, "merges");
      vocab_.emplace(BpeVocab::load(config.vocab, config.merges));
    }
    return *vocab_;
  }

  const WordPools& pools() {
    if (!pools_) {
      require_input(config.pools, "pools");
      pools_ = WordPools::load(config.pools);
    }
    return *pools_;
  }

  const ModelWeights& weights() {
    if (!weights_) {
      require_input(config.weights, "weights");
      weights_ = load_weights(config.weights, config.model);
    }
    return *weights_;
  }

  fs::path path(std::string_view rel) const { return out / fs::path(std::string(rel)); }

  void wrote(std::string_view rel) { written.emplace_back(rel); }

  void write_text(std::string_view rel, const std::string& content) {
    write_atomic(path(rel), content);
    wrote(rel);
  }

  void write_json(std::string_view rel, const json& j) { write_text(rel, j.dump(2) + "\n"); }

  fs::path dependency(std::string_view rel, std::string_view producer) const {
    const fs::path p = path(rel);
    if (!fs::exists(p)) {
      throw DependencyError(
          fmt::format("missing {}; run the '{}' subcommand first", p.string(), producer),
          std::string(producer));
    }
    return p;
  }

  SaeParams sae() { return load_sae(dependency(artifacts::kSaeBin, "train-sae")); }

  std::vector<SelectiveFeature> selective() {
    const json j = read_json_file(dependency(artifacts::kSelectiveJson, "selectivity"));
    std::vector<SelectiveFeature> out;
    try {
      for (const auto& f : j.at("features")) out.push_back(selective_from_json(f));
    } catch (const json::exception& e) {
      throw FormatError(fmt::format("{}: {}", artifacts::kSelectiveJson, e.what()));
    }
    return out;
  }

  MonitorMeasurements measurements() {
    return MonitorMeasurements::from_json(
        read_json_file(dependency(artifacts::kMonitorJson, "monitor-roc")));
  }

  std::vector<IoiPrompt> baseline_prompts() {
    return sample_batch(vocab(), pools(), derive_seed(seed(), "baseline"), config.baseline.n_prompts);
  }

  const std::vector<PreparedPair>& prepared_pairs() {
    if (!pairs_) {
      const auto pairs = make_minimal_pairs(vocab(), pools(), derive_seed(seed(), "patching"),
                                            config.patching.n_pairs);
      pairs_ = prepare_pairs(weights(), pairs);
    }
    return *pairs_;
  }

  // ------------------------------------------------------------ stage bodies

  std::string run_baseline() {
    const auto prompts = baseline_prompts();
    const auto r = baseline(weights(), prompts);
    require_finite(r.mean_logit_diff, "baseline mean logit difference");
    std::string csv = "index,structure,io_name,s_name,place,object,logit_diff\n";
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const auto& p = prompts[i];
      csv += fmt::format("{},{},{},{},{},{},{:.6f}\n", i, to_string(p.structure), p.io_name,
                         p.s_name, p.place, p.object, r.deltas[i]);
    }
    write_text(artifacts::kBaselineCsv, csv);
    write_json(artifacts::kBaselineJson, {{"n_prompts", prompts.size()},
                                          {"mean_logit_diff", r.mean_logit_diff},
                                          {"frac_correct", r.frac_correct}});
    return fmt::format("mean logit diff {:+.3f}, fraction correct {:.3f}", r.mean_logit_diff,
                       r.frac_correct);
  }

  std::string run_patch_resid() {
    const auto grid = resid_sweep(weights(), prepared_pairs());
    write_text(artifacts::kResidSweepCsv, grid.to_csv());
    write_json(artifacts::kResidSweepJson, grid_json(grid));
    svg::HeatmapSpec spec;
    spec.title = "Residual stream patching: recovery";
    spec.x_label = "position";
    spec.y_label = "layer";
    write_text(artifacts::kFigResid, svg::heatmap(grid, spec, render()));
    return fmt::format("{} x {} grid over {} pairs ({} degenerate)", grid.rows, grid.cols,
                       grid.n_pairs, grid.n_degenerate);
  }

  std::string run_patch_heads() {
    const auto& pairs = prepared_pairs();
    const auto grid = head_sweep(weights(), pairs);
    std::vector<std::size_t> order(grid.cells.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return grid.cells[a] > grid.cells[b]; });
    const auto cell = [&](std::size_t i) {
      return json{{"layer", i / grid.cols}, {"head", i % grid.cols}, {"recovery", grid.cells[i]}};
    };
    json top = json::array();
    for (std::size_t i = 0; i < std::min<std::size_t>(3, order.size()); ++i) top.push_back(cell(order[i]));
    json sums = json::array();
    for (std::size_t l = 0; l < grid.rows; ++l) {
      const auto s = layer_sum_check(weights(), pairs, grid, l);
      sums.push_back({{"layer", l}, {"all_heads", s.all_heads}, {"max_single", s.max_single},
                      {"holds", s.holds}});
    }
    json j = grid_json(grid);
    j["top_positive"] = top;
    j["most_negative"] = cell(order.back());
    j["layer_sum_checks"] = sums;
    write_text(artifacts::kHeadSweepCsv, grid.to_csv());
    write_json(artifacts::kHeadSweepJson, j);
    svg::HeatmapSpec spec;
    spec.title = "Attention head patching at END: recovery";
    spec.x_label = "head";
    spec.y_label = "layer";
    write_text(artifacts::kFigHeads, svg::heatmap(grid, spec, render()));
    const auto best = order.front();
    return fmt::format("top head L{}H{} recovery {:+.3f}", best / grid.cols, best % grid.cols,
                       grid.cells[best]);
  }

  std::string run_gen_activations() {
    const auto train = sample_batch(vocab(), pools(), derive_seed(seed(), "activations/train"),
                                    config.sae.n_train);
    const auto heldout = sample_batch(vocab(), pools(), derive_seed(seed(), "activations/heldout"),
                                      config.sae.n_heldout);
    const Tensor a = collect_activations(weights(), train, layer());
    const Tensor b = collect_activations(weights(), heldout, layer());
    for (float v : a.values()) require_finite(v, "training activation");
    for (float v : b.values()) require_finite(v, "held-out activation");
    save_activations(path(artifacts::kActivationsTrain), a);
    wrote(artifacts::kActivationsTrain);
    save_activations(path(artifacts::kActivationsHeldout), b);
    wrote(artifacts::kActivationsHeldout);
    write_json(artifacts::kActivationsJson,
               {{"site", fmt::format("resid_post layer {} at END", layer())},
                {"layer", layer()},
                {"d_model", a.dim(1)},
                {"n_train", a.dim(0)},
                {"n_heldout", b.dim(0)},
                {"pool_variant", to_string(PoolVariant::in_dist)},
                {"frame", to_string(Frame::canonical)},
                {"train_seed", derive_seed(seed(), "activations/train")},
                {"heldout_seed", derive_seed(seed(), "activations/heldout")}});
    return fmt::format("{} training and {} held-out activations at layer {}", a.dim(0), b.dim(0),
                       layer());
  }

  std::string run_train_sae() {
    const Tensor data = load_activations(dependency(artifacts::kActivationsTrain, "gen-activations"));
    SaeTrainConfig tc = config.sae.train;
    tc.seed = derive_seed(seed(), "sae-train");
    const auto r = train_sae(data, tc);
    require_finite(r.variance_explained, "SAE variance explained");
    save_sae(path(artifacts::kSaeBin), r.params);
    wrote(artifacts::kSaeBin);
    write_text(artifacts::kSaeLogCsv, training_log_csv(r.log));
    write_json(artifacts::kSaeJson, {{"layer", layer()},
                                     {"d_sae", r.params.d_sae()},
                                     {"n_train", data.dim(0)},
                                     {"l1_coefficient", tc.l1_coefficient},
                                     {"steps", tc.steps},
                                     {"seed", tc.seed},
                                     {"l0", r.l0},
                                     {"variance_explained", r.variance_explained},
                                     {"dead_features", r.dead_features},
                                     {"final_loss", r.log.empty() ? 0.0 : r.log.back().loss.loss}});
    return fmt::format("variance explained {:.4f}, L0 {:.1f}, {} dead features",
                       r.variance_explained, r.l0, r.dead_features);
  }

  std::string run_selectivity() {
    const auto sae = this->sae();
    const auto table = selectivity_table(sae, weights(), vocab(), pools(), layer(), seed(),
                                         config.analysis.n_selectivity);
    const auto top = top_selective(table, config.analysis.top_k);
    json features = json::array();
    for (const auto& f : top) features.push_back(to_json(f));
    json names = json::array();
    double min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < table.names.size(); ++i) {
      names.push_back({{"name", table.names[i]}, {"top_feature", table.top_feature[i]},
                       {"gap", table.top_gap[i]},
                       {"mean_io", table.mean_io(i, table.top_feature[i])},
                       {"mean_s", table.mean_s(i, table.top_feature[i])}});
      min_gap = std::min(min_gap, table.top_gap[i]);
    }
    write_text(artifacts::kSelectivityCsv, table.to_csv());
    write_json(artifacts::kSelectiveJson, {{"layer", layer()},
                                           {"top_k", config.analysis.top_k},
                                           {"n_per_condition", table.n_per_condition},
                                           {"min_top_gap", min_gap},
                                           {"names", names},
                                           {"features", features}});
    std::vector<std::vector<double>> values;
    for (std::size_t i = 0; i < table.names.size(); ++i) {
      values.push_back({table.mean_io(i, table.top_feature[i]), table.mean_s(i, table.top_feature[i])});
    }
    svg::BarsSpec spec{"Top feature per name: mean activation by role", "mean activation",
                       table.names, {"name is IO", "name is S"}};
    write_text(artifacts::kFigSelectivity, svg::bars(values, spec, render()));
    return fmt::format("{} selective features, smallest top gap {:.2f}", top.size(), min_gap);
  }

  std::string run_ablate() {
    const auto sae = this->sae();
    const auto features = selective();
    const auto singles = single_feature_ablations(sae, weights(), vocab(), pools(), features,
                                                  layer(), seed(), config.analysis.n_ablation_prompts);
    std::string single_csv = "feature,name,drop_preferred,change_other\n";
    double mean_drop = 0, mean_abs_other = 0;
    bool specific = true;
    for (const auto& s : singles) {
      single_csv += fmt::format("{},{},{:.6f},{:.6f}\n", s.feature.feature, s.feature.name,
                                s.drop_preferred, s.change_other);
      mean_drop += s.drop_preferred;
      mean_abs_other += std::abs(s.change_other);
      specific = specific && std::abs(s.change_other) < s.drop_preferred;
    }
    if (!singles.empty()) {
      mean_drop /= static_cast<double>(singles.size());
      mean_abs_other /= static_cast<double>(singles.size());
    }

    std::vector<std::size_t> ks, skipped;
    for (auto k : config.analysis.cumulative_ks) (k <= features.size() ? ks : skipped).push_back(k);
    const auto rows = cumulative_ablation(sae, weights(), features, ks, baseline_prompts(), layer());
    std::string cum_csv = "k,mean_delta,frac_correct,mean_delta_preferred,mean_delta_other,n_preferred\n";
    json cum = json::array();
    bool nonincreasing = true;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      require_finite(r.mean_delta, "cumulative ablation mean delta");
      cum_csv += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{}\n", r.k, r.mean_delta, r.frac_correct,
                             r.mean_delta_preferred, r.mean_delta_other, r.n_preferred);
      cum.push_back({{"k", r.k}, {"mean_delta", r.mean_delta}, {"frac_correct", r.frac_correct},
                     {"mean_delta_preferred", r.mean_delta_preferred},
                     {"mean_delta_other", r.mean_delta_other}, {"n_preferred", r.n_preferred}});
      // Soft check: the mean may rise by up to 0.05 between consecutive k.
      if (i > 0 && r.mean_delta > rows[i - 1].mean_delta + 0.05) nonincreasing = false;
    }
    write_text(artifacts::kAblationSingleCsv, single_csv);
    write_text(artifacts::kAblationCumulativeCsv, cum_csv);
    write_json(artifacts::kAblationJson, {{"n_features", singles.size()},
                                          {"mean_drop_preferred", mean_drop},
                                          {"mean_abs_change_other", mean_abs_other},
                                          {"specific_for_every_feature", specific},
                                          {"cumulative", cum},
                                          {"cumulative_nonincreasing", nonincreasing},
                                          {"skipped_ks", skipped}});
    return fmt::format("mean preferred drop {:.3f}, mean |other change| {:.3f}", mean_drop,
                       mean_abs_other);
  }

  std::string run_fve() {
    const Tensor data = load_activations(dependency(artifacts::kActivationsHeldout, "gen-activations"));
    const auto sae = this->sae();
    std::vector<std::size_t> ids;
    for (const auto& f : selective()) ids.push_back(f.feature);
    const auto rows = fve_curve(sae, data, config.analysis.fve_ks, ids);
    const double ceiling = variance_explained(sae, data);
    require_finite(ceiling, "full-SAE variance explained");
    std::string csv = "k,fve_magnitude,fve_selective\n";
    json jr = json::array();
    bool monotone = true, below = true;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      csv += fmt::format("{},{:.6f},{:.6f}\n", r.k, r.by_magnitude, r.selective_only);
      jr.push_back({{"k", r.k}, {"by_magnitude", r.by_magnitude}, {"selective_only", r.selective_only}});
      if (i > 0 && rows[i - 1].k <= r.k && r.by_magnitude < rows[i - 1].by_magnitude) monotone = false;
      if (r.selective_only > r.by_magnitude) below = false;
    }
    write_text(artifacts::kFveCsv, csv);
    write_json(artifacts::kFveJson, {{"n_heldout", data.dim(0)},
                                     {"ceiling", ceiling},
                                     {"n_selective", ids.size()},
                                     {"rows", jr},
                                     {"monotone_by_magnitude", monotone},
                                     {"selective_below_magnitude", below}});
    svg::Series mag{"top-K by magnitude", {}, {}, false};
    svg::Series sel{"top-K name-selective", {}, {}, true};
    for (const auto& r : rows) {
      mag.x.push_back(static_cast<double>(r.k));
      mag.y.push_back(r.by_magnitude);
      sel.x.push_back(static_cast<double>(r.k));
      sel.y.push_back(r.selective_only);
    }
    svg::CurvesSpec spec;
    spec.title = "Fraction of variance explained by the top K features";
    spec.x_label = "K (features kept per input)";
    spec.y_label = "FVE";
    spec.log_x = true;
    spec.hlines.push_back({ceiling, "full SAE"});
    write_text(artifacts::kFigFve, svg::curves({mag, sel}, spec, render()));
    return fmt::format("ceiling {:.4f} over {} held-out activations", ceiling, data.dim(0));
  }

  std::string run_stratify() {
    const auto sae = this->sae();
    auto features = selective();
    features.resize(std::min(features.size(), config.analysis.n_stratify));
    const auto s = stratify(sae, weights(), vocab(), pools(), features, layer(), seed(),
                            config.analysis.n_paraphrases, config.analysis.firing_threshold);
    json rows = json::array();
    double min_rate = 1.0;
    for (const auto& r : s.rows) {
      rows.push_back({{"feature", r.feature.feature}, {"name", r.feature.name},
                      {"firing_rate", r.firing_rate}, {"cv", finite_or_null(r.cv)},
                      {"selectivity_ratio", r.selectivity_ratio},
                      {"selectivity_ratio_raw", finite_or_null(r.selectivity_ratio_raw)},
                      {"peak_to_mean", finite_or_null(r.peak_to_mean)},
                      {"causal_drop", r.causal_drop}});
      min_rate = std::min(min_rate, r.firing_rate);
    }
    write_text(artifacts::kStratificationCsv, s.to_csv());
    write_json(artifacts::kStratificationJson, {{"n_features", s.rows.size()},
                                                {"firing_threshold", config.analysis.firing_threshold},
                                                {"min_firing_rate", min_rate},
                                                {"pearson_r", s.pearson_r},
                                                {"rows", rows}});
    return fmt::format("pearson r(selectivity ratio, causal drop) = {:+.3f}", s.pearson_r);
  }

  std::string run_robustness() {
    const auto sae = this->sae();
    const auto features = selective();
    RobustnessOptions opt;
    opt.sae_layer = layer();
    opt.n_baseline = config.robustness.n_baseline;
    opt.n_pairs = config.robustness.n_pairs;
    opt.n_feature_prompts = config.robustness.n_feature_prompts;
    opt.n_dominant_prompts = config.robustness.n_dominant_prompts;
    opt.firing_threshold = config.analysis.firing_threshold;
    opt.heads = config.robustness.heads;
    std::vector<ShiftReport> reports;
    for (auto kind : {ShiftKind::in_distribution, ShiftKind::ood_content,
                      ShiftKind::reformulated_frame, ShiftKind::heldout_names}) {
      reports.push_back(run_shift(ShiftSpec::of(kind), weights(), sae, vocab(), pools(), features,
                                  seed(), opt));
      require_finite(reports.back().baseline_mean, "shifted baseline mean");
    }
    json jr = json::array();
    for (const auto& r : reports) jr.push_back(circuitbench::to_json(r));
    json retention = json::object();
    for (std::size_t i : {std::size_t{1}, std::size_t{2}}) {
      retention[to_string(reports[i].shift.kind)] =
          circuitbench::to_json(detection_vs_causal_gap(reports[0], reports[i]));
    }
    write_json(artifacts::kRobustnessJson, {{"reports", jr}, {"retention", retention}});
    write_text(artifacts::kRobustnessSummaryCsv, shift_summary_csv(reports));
    write_text(artifacts::kRobustnessFiringCsv, feature_firing_csv(reports));
    write_text(artifacts::kRobustnessDropCsv, feature_drop_csv(reports));

    svg::BarsSpec spec;
    spec.title = "Baseline logit difference and head recovery under distribution shift";
    spec.y_label = "logit diff / recovery";
    spec.groups.push_back("baseline logit diff");
    for (const auto& [l, h] : opt.heads) spec.groups.push_back(fmt::format("L{}H{} recovery", l, h));
    std::vector<std::vector<double>> values;
    for (const auto& r : reports) {
      spec.categories.push_back(shift_label(r.shift.kind));
      std::vector<double> row = {r.baseline_mean};
      for (const auto& h : opt.heads) row.push_back(r.recovery_of(h));
      values.push_back(row);
    }
    write_text(artifacts::kFigRobustness, svg::bars(values, spec, render()));
    return fmt::format("baselines: in-dist {:+.2f}, OOD {:+.2f}, reformulated {:+.2f}, held-out {:+.2f}",
                       reports[0].baseline_mean, reports[1].baseline_mean, reports[2].baseline_mean,
                       reports[3].baseline_mean);
  }

  std::string run_monitor_roc() {
    const auto sae = this->sae();
    auto features = selective();
    features.resize(std::min(features.size(), config.deployment.n_roc_features));
    const auto m = measure_monitors(sae, weights(), vocab(), pools(), features, layer(), seed(),
                                    config.deployment.sampling);
    std::string csv = "feature,name,condition,auc\n";
    double min_in_dist = 1.0;
    for (const auto& e : m.entries) {
      const double auc = e.roc_curve().auc;
      csv += fmt::format("{},{},{},{:.6f}\n", e.feature.feature, e.feature.name,
                         to_string(e.condition), auc);
      if (e.condition == Condition::in_dist) min_in_dist = std::min(min_in_dist, auc);
    }
    write_json(artifacts::kMonitorJson, m.to_json());
    write_text(artifacts::kMonitorRocCsv, csv);
    return fmt::format("{} features measured, smallest in-dist AUC {:.4f}", m.n_features(), min_in_dist);
  }

  std::size_t monitor_features(const MonitorMeasurements& m) const {
    return std::min(config.deployment.n_monitor_features, m.n_features());
  }

  std::vector<double> thetas() const {
    const auto& d = config.deployment;
    return threshold_grid(d.theta_min, d.theta_max, d.theta_step);
  }

  std::string run_compose_table() {
    const auto m = measurements();
    const auto rows = composition_table(m, config.deployment.compose_theta, monitor_features(m));
    json jr = json::array();
    for (const auto& r : rows) {
      jr.push_back({{"config", to_string(r.kind)}, {"condition", to_string(r.condition)},
                    {"tpr", r.tpr}, {"fpr", r.fpr}, {"f1", r.f1}});
    }
    write_text(artifacts::kCompositionCsv, composition_csv(rows));
    write_json(artifacts::kCompositionJson,
               {{"theta", config.deployment.compose_theta},
                {"n_features", monitor_features(m)},
                {"composition_assumption", "independent errors: AND tpr = tpr_a*tpr_b, "
                                           "OR tpr = 1-(1-tpr_a)(1-tpr_b); same for fpr"},
                {"heuristic", "noiseless"},
                {"rows", jr}});
    return fmt::format("{} configuration x condition rows at theta {}", rows.size(),
                       config.deployment.compose_theta);
  }

  std::string run_deploy_sweep() {
    const auto m = measurements();
    const auto grid = thetas();
    const auto r = sweep(m, config.deployment.cost, grid, monitor_features(m));
    require_finite(r.optimum.cost, "optimal expected cost");
    write_text(artifacts::kSweepCsv, r.to_csv());
    write_json(artifacts::kRecommendationJson, r.recommendation());

    std::vector<svg::Series> series;
    for (auto kind : kMonitorKinds) {
      svg::Series s{to_string(kind), {}, {}, kind == MonitorKind::heuristic_only};
      for (const auto& row : r.rows) {
        if (row.kind != kind) continue;
        s.x.push_back(row.theta);
        s.y.push_back(row.cost);
      }
      series.push_back(std::move(s));
    }
    svg::CurvesSpec spec;
    spec.title = "Expected cost per 1000 queries vs threshold";
    spec.x_label = "SAE threshold θ";
    spec.y_label = "cost per 1000 queries ($)";
    spec.y_min = 0.0;
    spec.hlines.push_back({r.baseline_cost, "no monitor"});
    spec.markers.push_back({r.optimum.theta, r.optimum.cost,
                            fmt::format("optimum: {} θ={}", to_string(r.optimum.kind), r.optimum.theta)});
    write_text(artifacts::kFigCost, svg::curves(series, spec, render()));
    return fmt::format("optimum {} at θ={} costs ${:.2f} per 1000 (saves {:.1f}%)",
                       to_string(r.optimum.kind), r.optimum.theta, r.optimum.cost, r.savings_pct);
  }

  std::string run_sensitivity() {
    const auto m = measurements();
    const auto rows = sensitivity(m, config.deployment.cost, config.deployment.p_err_grid, thetas(),
                                  monitor_features(m));
    json jr = json::array();
    std::string summary;
    for (const auto& r : rows) {
      json best = json::object();
      for (std::size_t k = 0; k < kMonitorKinds.size(); ++k) best[to_string(kMonitorKinds[k])] = r.best_cost[k];
      jr.push_back({{"p_err", r.p_err}, {"optimal_config", to_string(r.optimum.kind)},
                    {"optimal_theta", r.optimum.theta}, {"optimal_cost", r.optimum.cost},
                    {"best_cost", best}});
      summary += fmt::format("{}{}: {}", summary.empty() ? "" : ", ", r.p_err, to_string(r.optimum.kind));
    }
    write_text(artifacts::kSensitivityCsv, sensitivity_csv(rows));
    write_json(artifacts::kSensitivityJson, {{"rows", jr}});
    return summary;
  }

  std::string dispatch(std::string_view name) {
    static const std::map<std::string_view, std::string (State::*)()> stages = {
        {"baseline", &State::run_baseline},
        {"patch-resid", &State::run_patch_resid},
        {"patch-heads", &State::run_patch_heads},
        {"gen-activations", &State::run_gen_activations},
        {"train-sae", &State::run_train_sae},
        {"selectivity", &State::run_selectivity},
        {"ablate", &State::run_ablate},
        {"fve", &State::run_fve},
        {"stratify", &State::run_stratify},
        {"robustness", &State::run_robustness},
        {"monitor-roc", &State::run_monitor_roc},
        {"compose-table", &State::run_compose_table},
        {"deploy-sweep", &State::run_deploy_sweep},
        {"sensitivity", &State::run_sensitivity},
    };
    return (this->*stages.at(name))();
  }

  // ------------------------------------------------------------ records

  fs::path record_path(std::string_view name) const {
    return out / "records" / fmt::format("{}.json", name);
  }

  ManifestEntry manifest_entry(const std::string& rel) const {
    const fs::path p = out / rel;
    return {rel, sha256_file_hex(p), fs::file_size(p)};
  }

  RunRecord finish_record(std::string_view name, std::vector<std::string> files,
                          std::chrono::steady_clock::time_point start) {
    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
    RunRecord rec;
    rec.experiment = std::string(name);
    rec.config_sha256 = config_hash;
    rec.version = artifact_version();
    rec.global_seed = seed();
    for (const auto& f : files) rec.outputs.push_back(manifest_entry(f));
    if (!options.deterministic) {
      rec.wall_time_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    write_atomic(record_path(name), rec.to_json().dump(2) + "\n");
    return rec;
  }

  // A stage can be reused when its record matches this configuration and
  // every listed output is still intact.
  std::optional<RunRecord> reusable(std::string_view name) const {
    const fs::path p = record_path(name);
    if (!fs::exists(p)) return std::nullopt;
    try {
      auto rec = RunRecord::from_json(read_json_file(p));
      if (rec.config_sha256 != config_hash || rec.version != artifact_version()) return std::nullopt;
      if (rec.wall_time_seconds.has_value() == options.deterministic) return std::nullopt;
      for (const auto& e : rec.outputs) {
        const fs::path f = out / e.path;
        if (!fs::exists(f) || fs::file_size(f) != e.bytes || sha256_file_hex(f) != e.sha256) {
          return std::nullopt;
        }
      }
      return rec;
    } catch (const Error&) {
      return std::nullopt;
    }
  }

  RunRecord run_stage(std::string_view name) {
    const auto start = std::chrono::steady_clock::now();
    written.clear();
    const std::string summary = dispatch(name);
    auto rec = finish_record(name, written, start);
    log.push_back(fmt::format("{}: {}", name, summary));
    return rec;
  }

  RunRecord run_report_all() {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::string> files;
    bool rerun_rest = false;
    for (auto name : kSubcommands) {
      if (name == "report-all") continue;
      std::optional<RunRecord> rec;
      if (!rerun_rest) rec = reusable(name);
      if (rec) {
        log.push_back(fmt::format("{}: up to date", name));
      } else {
        rec = run_stage(name);
        rerun_rest = true;  // downstream stages consume what this one rewrote
      }
      for (const auto& e : rec->outputs) files.push_back(e.path);
      files.push_back(fmt::format("records/{}.json", name));
    }
    auto rec = finish_record("report-all", files, start);
    log.push_back(fmt::format("report-all: {} files in manifest", rec.outputs.size()));
    return rec;
  }
};

Experiment::Experiment(ExperimentConfig config, RunOptions options)
    : state_(std::make_unique<State>()) {
  config.validate();
  state_->config = std::move(config);
  state_->options = options;
  state_->out = state_->config.output_dir;
  state_->config_hash = state_->config.sha256();
}

Experiment::~Experiment() = default;

const ExperimentConfig& Experiment::config() const noexcept { return state_->config; }

const std::vector<std::string>& Experiment::log() const noexcept { return state_->log; }

RunRecord Experiment::run(std::string_view subcommand) {
  if (!is_subcommand(subcommand)) {
    throw ConfigError(fmt::format("unknown subcommand '{}'", subcommand));
  }
  fs::create_directories(state_->out);
  if (subcommand == "report-all") return state_->run_report_all();
  return state_->run_stage(subcommand);
}

}  // namespace circuitbench
