#include <cmath>
#include <doctest.h>

#include "circuitbench/error.hpp"
#include "circuitbench/feature_analysis.hpp"
#include "circuitbench/patching.hpp"
#include "circuitbench/rng.hpp"
#include "support/fixtures.hpp"

using namespace circuitbench;

namespace {

const ModelWeights& model() { return fixtures::tiny_gpt2_vocab_model(); }
constexpr std::size_t kLayer = 1;

std::vector<IoiPrompt> prompts(std::size_t n, std::uint64_t seed = 3) {
  return sample_batch(fixtures::gpt2_vocab(), fixtures::default_pools(), seed, n);
}

// A small SAE fitted to nothing in particular: seeded init on real site
// activations, with biases nudged so that a reasonable share of features fire.
const SaeParams& tiny_sae() {
  static const SaeParams sae = [] {
    const Tensor acts = collect_activations(model(), prompts(64, 11), kLayer);
    SaeParams p = init_sae(acts, 24, 5);
    SeededRng rng(8);
    for (auto& b : p.b_enc.data()) b = rng.uniform(0.0f, 0.5f);
    return p;
  }();
  return sae;
}

}  // namespace

TEST_CASE("pearson") {
  CHECK(pearson({1, 2, 3, 4}, {1, 2, 3, 4}) == doctest::Approx(1.0));
  CHECK(pearson({1, 2, 3, 4}, {-1, -2, -3, -4}) == doctest::Approx(-1.0));
  // Hand evaluation: sxy = 4.7, sxx = 5, syy = 4.5 -> r = 4.7 / sqrt(22.5).
  CHECK(pearson({1, 2, 3, 4}, {1.1, 1.9, 3.2, 3.8}) == doctest::Approx(4.7 / std::sqrt(22.5)).epsilon(1e-12));
  CHECK(pearson({1, 2, 3, 4}, {1.1, 1.9, 3.2, 3.8}) == doctest::Approx(0.9908).epsilon(1e-4));
  CHECK_THROWS_AS(pearson({1, 2}, {1, 2}), NumericError);
  CHECK_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), NumericError);
  CHECK_THROWS_AS(pearson({1, 2, 3}, {4, 4, 4}), NumericError);
  CHECK_THROWS_AS(pearson({1, 2, 3}, {1, 2}), ShapeError);
}

TEST_CASE("site activations are the resid_post row at END") {
  const auto ps = prompts(3);
  const Tensor acts = collect_activations(model(), ps, kLayer);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto full = forward(model(), ps[i].tokens, CaptureSet::all());
    const Tensor expected = full.cache.at(HookSite::resid_post(kLayer, ps[i].pos.end));
    CHECK(std::vector<float>(acts.row(i).begin(), acts.row(i).end()) == expected.values());
  }
  CHECK_THROWS_AS(collect_activations(model(), ps, model().config.n_layer), ConfigError);
}

TEST_CASE("ablating nothing leaves the logit difference bit-identical") {
  const auto ps = prompts(6);
  const auto base = baseline(model(), ps);
  const auto r = ablate_features(tiny_sae(), model(), {}, ps, kLayer);
  CHECK(r.before == base.deltas);
  CHECK(r.after == base.deltas);
  CHECK(r.frac_correct == base.frac_correct);
}

TEST_CASE("ablation equals a resid_post patch with the edited vector") {
  const auto& sae = tiny_sae();
  const auto ps = prompts(4, 21);
  const std::vector<std::size_t> set = {0, 3, 7, 12};
  const auto r = ablate_features(sae, model(), set, ps, kLayer);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& p = ps[i];
    const auto full = forward(model(), p.tokens, CaptureSet::all());
    const Tensor h = full.cache.at(HookSite::resid_post(kLayer, p.pos.end));

    // Independent double-precision edit of the END vector.
    std::vector<double> pre(sae.d_sae());
    for (std::size_t j = 0; j < sae.d_sae(); ++j) {
      double acc = sae.b_enc.data()[j];
      for (std::size_t d = 0; d < sae.d_model(); ++d) {
        acc += (static_cast<double>(h.data()[d]) - sae.b_dec.data()[d]) * sae.w_enc(d, j);
      }
      pre[j] = std::max(acc, 0.0);
    }
    std::vector<float> edited(h.data().begin(), h.data().end());
    for (std::size_t j : set) {
      for (std::size_t d = 0; d < edited.size(); ++d) {
        edited[d] = static_cast<float>(edited[d] - pre[j] * sae.w_dec(j, d));
      }
    }
    const auto lib = ablate_vector(sae, h.data(), set);
    for (std::size_t d = 0; d < edited.size(); ++d) CHECK(lib[d] == doctest::Approx(edited[d]).epsilon(1e-4));

    PatchSet patch;
    patch.add(HookSite::resid_post(kLayer, p.pos.end), Tensor({edited.size()}, edited));
    const Tensor logits = forward_with_patches(model(), p.tokens, patch);
    const double expected = logit_diff(logits.row(p.pos.end), p.io_token, p.s_token);
    CHECK(r.after[i] == doctest::Approx(expected).epsilon(1e-4));
  }
  CHECK_THROWS_AS(ablate_features(sae, model(), {sae.d_sae()}, ps, kLayer), ConfigError);
}

TEST_CASE("a feature that never fires has zero gap and no ablation effect") {
  SaeParams sae = tiny_sae();
  const std::size_t dead = 4;
  sae.b_enc.data()[dead] = -1e6f;
  const auto t = selectivity_table(sae, model(), fixtures::gpt2_vocab(), fixtures::default_pools(),
                                   kLayer, 9, 4);
  CHECK(t.names.size() == 16);
  CHECK(t.n_per_condition == 4);
  for (std::size_t n = 0; n < t.names.size(); ++n) {
    CHECK(t.gap(n, dead) == 0.0);
    CHECK(t.top_gap[n] == doctest::Approx(t.gap(n, t.top_feature[n])));
    for (std::size_t f = 0; f < sae.d_sae(); ++f) CHECK(t.gap(n, f) <= t.top_gap[n]);
  }
  const auto ps = prompts(5);
  const auto r = ablate_features(sae, model(), {dead}, ps, kLayer);
  CHECK(r.after == r.before);
  CHECK(t.to_csv().rfind("name,top_feature,mean_io,mean_s,gap\n", 0) == 0);
}

TEST_CASE("top selective features: ranked by gap, deduplicated, truncated") {
  SelectivityTable t;
  t.names = {"A", "B", "C", "D"};
  t.mean_io = Tensor({4, 3});
  t.mean_s = Tensor({4, 3});
  t.top_feature = {0, 1, 0, 2};
  t.top_gap = {5, 9, 7, 1};
  const auto top = top_selective(t, 3);
  REQUIRE(top.size() == 3);
  CHECK(top[0].name == "B");
  CHECK(top[1].name == "C");  // feature 0 kept under its larger gap
  CHECK(top[2].name == "D");
  CHECK(top_selective(t, 10).size() == 3);
}

TEST_CASE("probe and single-feature ablation agree with ablate_features") {
  const auto& sae = tiny_sae();
  const auto& vocab = fixtures::gpt2_vocab();
  const auto& pools = fixtures::default_pools();
  const auto ps = paraphrase_set(vocab, pools, "Mary", 4, 12);
  const auto probe = probe_feature(sae, model(), 2, ps, kLayer, 0.5);
  const auto r = ablate_features(sae, model(), {2}, ps, kLayer, {"Mary"});
  CHECK(r.n_preferred == ps.size());
  CHECK(probe.mean_drop == doctest::Approx(r.mean_drop_preferred).epsilon(1e-9));
  CHECK(probe.firing_rate >= 0.0);
  CHECK(probe.firing_rate <= 1.0);
  CHECK(probe.max_act >= probe.mean_act);

  const std::vector<SelectiveFeature> feats = {{"Mary", 2, 1, 1, 0}, {"John", 5, 1, 1, 0}};
  const auto single = single_feature_ablations(sae, model(), vocab, pools, feats, kLayer, 3, 6);
  REQUIRE(single.size() == 2);
  CHECK(std::isfinite(single[0].drop_preferred));
  CHECK(std::isfinite(single[1].change_other));
}

TEST_CASE("cumulative ablation: k = 0 is the baseline") {
  const auto& sae = tiny_sae();
  const auto ps = prompts(8);
  const std::vector<SelectiveFeature> feats = {{"Mary", 1, 3, 1, 0}, {"John", 2, 2, 1, 0}, {"Tom", 6, 1, 1, 0}};
  const auto rows = cumulative_ablation(sae, model(), feats, {0, 1, 3}, ps, kLayer);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].mean_delta == doctest::Approx(baseline(model(), ps).mean_logit_diff));
  CHECK(rows[0].n_preferred == 0);
  for (const auto& row : rows) {
    CHECK(row.frac_correct >= 0.0);
    CHECK(row.frac_correct <= 1.0);
  }
  CHECK_THROWS_AS(cumulative_ablation(sae, model(), feats, {4}, ps, kLayer), ConfigError);
}

TEST_CASE("FVE curves on an exactly sparse dictionary") {
  // Orthonormal decoder with a matching encoder: features are the exact
  // coefficients, so dropping features removes exactly their squares.
  const std::size_t d = 8, m = 8;
  SaeParams sae{Tensor({d, m}), Tensor({m}), Tensor({m, d}), Tensor({d})};
  for (std::size_t i = 0; i < m; ++i) {
    sae.w_enc(i, i) = 1.0f;
    sae.w_dec(i, i) = 1.0f;
  }
  SeededRng rng(4);
  Tensor data({200, d});
  for (auto& x : data.data()) x = rng.uniform01() < 0.4 ? rng.uniform(0.0f, 3.0f) : 0.0f;

  const std::vector<std::size_t> selective = {3, 5, 1};
  const auto curve = fve_curve(sae, data, {0, 1, 2, 3, 5, 8}, selective);
  for (std::size_t i = 1; i < curve.size(); ++i) {
    CHECK(curve[i].by_magnitude >= curve[i - 1].by_magnitude);
    CHECK(curve[i].selective_only <= curve[i].by_magnitude + 1e-12);
  }
  CHECK(curve.back().by_magnitude == doctest::Approx(variance_explained(sae, data)));
  CHECK(curve.back().by_magnitude == doctest::Approx(1.0));
  CHECK_THROWS_AS(fve_curve(sae, data, {9}, {}), ConfigError);

  // Keeping the top K by magnitude out of a hand-checked row.
  const Tensor f = Tensor::from_rows({{0, 3, 1, 0, 2, 0, 0, 0}});
  const Tensor rec = truncated_reconstruction(sae, f, 2);
  CHECK(rec.values() == std::vector<float>{0, 3, 0, 0, 2, 0, 0, 0});
  const Tensor sel = truncated_reconstruction(sae, f, 2, {2, 6});
  CHECK(sel.values() == std::vector<float>{0, 0, 1, 0, 0, 0, 0, 0});
}

TEST_CASE("stratification rows and correlation") {
  const auto& sae = tiny_sae();
  const std::vector<SelectiveFeature> feats = {
      {"Mary", 1, 3, 6, 0}, {"John", 2, 2, 5, 0.5}, {"Tom", 6, 1, 4, 2}, {"Eve", 9, 1, 3, 1}};
  const auto s = stratify(sae, model(), fixtures::gpt2_vocab(), fixtures::default_pools(), feats,
                          kLayer, 5, 10, 0.2);
  REQUIRE(s.rows.size() == 4);
  std::vector<double> ratio, drop;
  for (const auto& r : s.rows) {
    CHECK(r.firing_rate >= 0.0);
    CHECK(r.firing_rate <= 1.0);
    CHECK(r.cv >= 0.0);
    ratio.push_back(r.selectivity_ratio);
    drop.push_back(r.causal_drop);
  }
  CHECK(s.rows[0].selectivity_ratio == doctest::Approx(6 / 0.1));
  CHECK(std::isinf(s.rows[0].selectivity_ratio_raw));
  CHECK(s.rows[1].selectivity_ratio == doctest::Approx(10.0));
  CHECK(s.rows[2].selectivity_ratio_raw == doctest::Approx(2.0));
  CHECK(s.pearson_r == doctest::Approx(pearson(ratio, drop)));
  CHECK(s.to_csv().find("# pearson_r,") != std::string::npos);
}
