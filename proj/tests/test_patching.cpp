#include <cmath>
#include <doctest.h>

#include "circuitbench/error.hpp"
#include "circuitbench/patching.hpp"
#include "circuitbench/rng.hpp"
#include "support/fixtures.hpp"

using namespace circuitbench;

namespace {

const ModelWeights& model() { return fixtures::tiny_gpt2_vocab_model(); }

std::vector<MinimalPair> pairs(std::size_t n, std::uint64_t seed = 7) {
  return make_minimal_pairs(fixtures::gpt2_vocab(), fixtures::default_pools(), seed, n);
}

// Recovery computed the long way: full forward passes with all-position
// logits, no resumption and no cached corrupt residuals.
double oracle_recovery(const MinimalPair& pair, const HookSite& site) {
  const auto& w = model();
  const auto clean = forward(w, pair.clean.tokens, CaptureSet::all());
  const auto corrupt = forward(w, pair.corrupt.tokens);
  PatchSet patch;
  patch.add(site, clean.cache.at(site));
  const auto patched = forward_with_patches(w, pair.corrupt.tokens, patch);
  const std::size_t end = pair.clean.pos.end;
  const auto ld = [&](const Tensor& logits) {
    return logit_diff(logits.row(end), pair.clean.io_token, pair.clean.s_token);
  };
  return *recovery(ld(patched), ld(clean.logits), ld(corrupt.logits));
}

}  // namespace

TEST_CASE("logit_diff") {
  std::vector<float> row(10, 2.0f);
  CHECK(logit_diff(row, 3, 7) == 0.0f);
  row[3] = 5.0f;
  row[7] = 1.3f;
  CHECK(logit_diff(row, 3, 7) == doctest::Approx(3.7));
  CHECK_THROWS(logit_diff(row, 10, 7));
  CHECK_THROWS(logit_diff(row, 3, -1));
}

TEST_CASE("recovery") {
  CHECK(*recovery(2.5, 2.5, -1.0) == 1.0);
  CHECK(*recovery(-1.0, 2.5, -1.0) == 0.0);
  CHECK(*recovery(6.0, 2.5, -1.0) == doctest::Approx(2.0));
  CHECK(*recovery(-4.5, 2.5, -1.0) == doctest::Approx(-1.0));
  CHECK_FALSE(recovery(1.0, 0.3, 0.3 + 1e-7).has_value());
}

TEST_CASE("END fast path agrees with the full logits") {
  const auto p = pairs(1).front().clean;
  const auto full = forward(model(), p.tokens);
  ForwardOptions opt;
  opt.logits = LogitMode::none;
  const auto fast = run_forward(model(), p.tokens, opt);
  CHECK(end_logit_diff(model(), fast, p.io_token, p.s_token) ==
        logit_diff(full.logits.row(p.pos.end), p.io_token, p.s_token));

  const auto b = baseline(model(), {p});
  CHECK(b.deltas.front() == logit_diff(full.logits.row(p.pos.end), p.io_token, p.s_token));
}

TEST_CASE("resid sweep cells match full-forward recomputation") {
  const auto ps = pairs(4);
  const auto prepared = prepare_pairs(model(), ps);
  const auto grid = resid_sweep(model(), prepared);
  REQUIRE(grid.rows == 3);
  REQUIRE(grid.cols == 15);
  CHECK(grid.n_pairs == 4);
  CHECK(grid.n_degenerate == 0);

  for (auto [layer, col] : {std::pair<std::size_t, std::size_t>{0, 2}, {1, 14}, {2, 4}, {2, 10}}) {
    double mean = 0;
    for (const auto& pair : ps) {
      const auto pos = role_ordered_positions(pair.clean)[col];
      mean += oracle_recovery(pair, HookSite::resid_pre(layer, pos));
    }
    mean /= static_cast<double>(ps.size());
    CAPTURE(layer);
    CAPTURE(col);
    CHECK(grid.at(layer, col) == doctest::Approx(mean).epsilon(1e-9));
  }

  // Positions whose tokens agree in clean and corrupt carry identical
  // layer-0 residuals: patching them is a no-op.
  for (std::size_t col : {0u, 1u, 3u, 5u, 8u, 13u, 14u}) CHECK(grid.at(0, col) == 0.0);
}

TEST_CASE("head sweep cells match full-forward recomputation") {
  const auto ps = pairs(3);
  const auto prepared = prepare_pairs(model(), ps);
  const auto grid = head_sweep(model(), prepared);
  REQUIRE(grid.rows == 3);
  REQUIRE(grid.cols == 2);
  CHECK(grid.col_labels == std::vector<std::string>{"H0", "H1"});
  for (std::size_t l = 0; l < 3; ++l) {
    for (std::size_t h = 0; h < 2; ++h) {
      double mean = 0;
      for (const auto& pair : ps) mean += oracle_recovery(pair, HookSite::attn_z(l, h, pair.clean.pos.end));
      CHECK(grid.at(l, h) == doctest::Approx(mean / 3.0).epsilon(1e-9));
    }
  }
  CHECK(heads_recovery(model(), prepared, {{1, 1}}) == grid.at(1, 1));
  const auto check = layer_sum_check(model(), prepared, grid, 2);
  CHECK(check.max_single == std::max(grid.at(2, 0), grid.at(2, 1)));
  CHECK(check.holds == (check.all_heads >= check.max_single));
  CHECK_THROWS_AS(layer_sum_check(model(), prepared, grid, 3), ConfigError);
  CHECK_THROWS_AS(heads_recovery(model(), prepared, {{0, 2}}), ConfigError);
}

TEST_CASE("grid means do not depend on pair order") {
  auto ps = pairs(5, 21);
  const auto a = head_sweep(model(), prepare_pairs(model(), ps));
  SeededRng rng(3);
  rng.shuffle(ps.begin(), ps.end());
  const auto b = head_sweep(model(), prepare_pairs(model(), ps));
  for (std::size_t i = 0; i < a.cells.size(); ++i) CHECK(a.cells[i] == doctest::Approx(b.cells[i]).epsilon(1e-12));
}

TEST_CASE("degenerate pairs are excluded and counted") {
  auto ps = pairs(3);
  ps.push_back({ps[0].clean, ps[0].clean});  // zero gap
  const auto prepared = prepare_pairs(model(), ps);
  CHECK(prepared.back().degenerate);
  const auto with = head_sweep(model(), prepared);
  const auto without = head_sweep(model(), prepare_pairs(model(), {ps.begin(), ps.end() - 1}));
  CHECK(with.n_degenerate == 1);
  CHECK(with.cells == without.cells);

  const auto only = prepare_pairs(model(), {ps.back()});
  CHECK_THROWS_AS(head_sweep(model(), only), NumericError);
}

TEST_CASE("grid CSV") {
  SweepGrid g;
  g.rows = 2;
  g.cols = 2;
  g.cells = {1.0, -0.5, 0.25, 0.0};
  g.col_labels = {"H0", "H1"};
  CHECK(g.to_csv() == "layer,H0,H1\n0,1.000000,-0.500000\n1,0.250000,0.000000\n");

  const auto& v = fixtures::gpt2_vocab();
  const auto p = render_prompt(v, "Mary", "John", "Mary", "store", "drink", Frame::canonical);
  const auto labels = resid_column_labels(v, p);
  CHECK(labels == std::vector<std::string>{"BOS", "When", "IO", "and", "S1", "went", "to", "the",
                                           "PLACE", "comma", "S2", "gave", "a", "OBJ", "END"});
  const auto cols = role_ordered_positions(p);  // BABA: IO is the second name
  CHECK(cols[2] == 4);
  CHECK(cols[4] == 2);
}
