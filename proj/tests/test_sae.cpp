#include <cmath>
#include <doctest.h>

#include "circuitbench/error.hpp"
#include "circuitbench/rng.hpp"
#include "circuitbench/sae.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace circuitbench;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, SeededRng& rng, float scale) {
  Tensor t({rows, cols});
  for (auto& x : t.data()) x = rng.uniform(-scale, scale);
  return t;
}

// Rows that are sparse nonnegative combinations of a few hidden directions
// plus a constant offset: the regime an SAE is built for.
Tensor sparse_dataset(std::size_t n, std::size_t d, std::size_t atoms, std::uint64_t seed) {
  SeededRng rng(seed);
  const Tensor dirs = random_matrix(atoms, d, rng, 1.0f);
  Tensor data({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    auto row = data.row(r);
    for (std::size_t j = 0; j < d; ++j) row[j] = 0.5f;
    for (int k = 0; k < 3; ++k) {
      const auto a = rng.uniform_index(atoms);
      const float mag = rng.uniform(1.0f, 4.0f);
      for (std::size_t j = 0; j < d; ++j) row[j] += mag * dirs(a, j);
    }
  }
  return data;
}

oracle::SaeF64 to_f64(const SaeParams& p) {
  auto cvt = [](const Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
  return {p.d_model(), p.d_sae(), cvt(p.w_enc), cvt(p.b_enc), cvt(p.w_dec), cvt(p.b_dec)};
}

}  // namespace

TEST_CASE("encode and decode basics") {
  SeededRng rng(1);
  const Tensor data = random_matrix(10, 6, rng, 2.0f);
  SaeParams p = init_sae(data, 8, 3);
  p.validate();

  const auto at_bias = encode(p, p.b_dec.data());
  for (float x : at_bias) CHECK(x == 0.0f);

  const Tensor f = encode(p, random_matrix(50, 6, rng, 5.0f));
  for (float x : f.data()) CHECK(x >= 0.0f);

  const auto zero = decode(p, std::vector<float>(8, 0.0f));
  CHECK(zero == p.b_dec.values());

  std::vector<float> one_hot(8, 0.0f);
  one_hot[5] = 2.5f;
  const auto h = decode(p, one_hot);
  for (std::size_t j = 0; j < 6; ++j) CHECK(h[j] == doctest::Approx(p.b_dec.data()[j] + 2.5f * p.w_dec(5, j)));

  CHECK_THROWS_AS(encode(p, Tensor({2, 5})), ShapeError);
}

TEST_CASE("perfect reconstruction with no sparsity penalty has zero loss and gradients") {
  const std::size_t d = 4;
  SaeParams p{Tensor({d, d}), Tensor({d}), Tensor({d, d}), Tensor({d})};
  for (std::size_t i = 0; i < d; ++i) {
    p.w_enc(i, i) = 1.0f;
    p.w_dec(i, i) = 1.0f;
  }
  const Tensor batch = Tensor::from_rows({{1, 2, 3, 4}, {0.5f, 0.25f, 2, 1}});
  const auto lg = loss_and_grads(p, batch, 0.0);
  CHECK(lg.loss.loss == 0.0);
  for (const auto* g : {&lg.grads.w_enc, &lg.grads.b_enc, &lg.grads.w_dec, &lg.grads.b_dec}) {
    for (float x : g->data()) CHECK(x == 0.0f);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  // d = 6, 8 features, batch of 4.
  SeededRng rng(17);
  const Tensor batch = random_matrix(4, 6, rng, 2.0f);
  SaeParams p = init_sae(batch, 8, 5);
  for (auto& x : p.b_enc.data()) x = rng.uniform(-0.3f, 0.3f);
  for (auto& x : p.b_dec.data()) x += rng.uniform(-0.3f, 0.3f);
  const double lambda = 0.5;

  const auto lg = loss_and_grads(p, batch, lambda);

  auto ref = to_f64(p);
  const std::vector<double> hb(batch.data().begin(), batch.data().end());
  const double loss64 = oracle::sae_loss(ref, hb, 4, lambda);
  CHECK(lg.loss.loss == doctest::Approx(loss64).epsilon(1e-5));

  double worst = 0;
  auto check = [&](std::vector<double>& params, const Tensor& grad, const char* name) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double numeric =
          oracle::central_difference([&] { return oracle::sae_loss(ref, hb, 4, lambda); }, params[i], 1e-6);
      const double analytic = grad.data()[i];
      const double rel = std::fabs(analytic - numeric) / std::max(std::fabs(numeric), 1e-6);
      worst = std::max(worst, rel);
      CAPTURE(name);
      CAPTURE(i);
      CAPTURE(numeric);
      CAPTURE(analytic);
      CHECK(rel <= 1e-3);
    }
  };
  check(ref.w_enc, lg.grads.w_enc, "W_enc");
  check(ref.b_enc, lg.grads.b_enc, "b_enc");
  check(ref.w_dec, lg.grads.w_dec, "W_dec");
  check(ref.b_dec, lg.grads.b_dec, "b_dec");
  MESSAGE("worst relative gradient error: " << worst);
}

TEST_CASE("decoder projection removes the radial component") {
  SeededRng rng(2);
  const Tensor data = random_matrix(10, 5, rng, 1.0f);
  const SaeParams p = init_sae(data, 7, 9);
  Tensor g = random_matrix(7, 5, rng, 1.0f);
  project_decoder_grads(p, g);
  for (std::size_t i = 0; i < 7; ++i) {
    double along = 0;
    for (std::size_t j = 0; j < 5; ++j) along += static_cast<double>(g(i, j)) * p.w_dec(i, j);
    CHECK(std::fabs(along) < 1e-6);
  }
}

TEST_CASE("training: unit-norm decoder, reproducibility and decreasing loss") {
  const Tensor data = sparse_dataset(400, 16, 24, 77);
  SaeTrainConfig cfg;
  cfg.d_sae = 32;
  cfg.l1_coefficient = 0.05;
  cfg.batch_size = 32;
  cfg.learning_rate = 3e-3;
  cfg.seed = 11;

  for (std::size_t steps : {1u, 2u, 7u, 25u}) {
    cfg.steps = steps;
    const auto r = train_sae(data, cfg);
    for (std::size_t i = 0; i < cfg.d_sae; ++i) {
      double sq = 0;
      for (float x : r.params.w_dec.row(i)) sq += static_cast<double>(x) * x;
      CHECK(std::fabs(std::sqrt(sq) - 1.0) <= 1e-5);
    }
  }

  cfg.steps = 100;
  const auto a = train_sae(data, cfg);
  const auto b = train_sae(data, cfg);
  CHECK(a.params.w_enc == b.params.w_enc);
  CHECK(a.params.w_dec == b.params.w_dec);
  CHECK(a.params.b_dec == b.params.b_dec);
  REQUIRE(a.log.size() == 100);

  // 10-step moving averages over consecutive windows decrease.
  std::vector<double> window;
  for (std::size_t w = 0; w < 10; ++w) {
    double s = 0;
    for (std::size_t i = 0; i < 10; ++i) s += a.log[w * 10 + i].loss.loss;
    window.push_back(s / 10);
  }
  for (std::size_t w = 1; w < window.size(); ++w) {
    CAPTURE(w);
    CHECK(window[w] < window[w - 1]);
  }

  cfg.seed = 12;
  CHECK(train_sae(data, cfg).params.w_enc != a.params.w_enc);
}

TEST_CASE("no sparsity pressure gives dense, near-perfect reconstructions") {
  const Tensor data = sparse_dataset(300, 12, 20, 5);
  SaeTrainConfig cfg;
  cfg.d_sae = 48;
  cfg.l1_coefficient = 0.0;
  cfg.steps = 3000;
  cfg.batch_size = 64;
  cfg.learning_rate = 3e-3;
  cfg.seed = 2;
  const auto r = train_sae(data, cfg);
  CHECK(r.variance_explained > 0.999);
  CHECK(r.l0 > 0.3 * static_cast<double>(cfg.d_sae));

  cfg.l1_coefficient = 1.0;
  const auto sparse = train_sae(data, cfg);
  CHECK(sparse.l0 < r.l0);
}

TEST_CASE("variance explained edge cases") {
  const Tensor h = Tensor::from_rows({{1, 2}, {3, 5}, {-1, 0}});
  CHECK(fraction_variance_explained(h, h) == 1.0);
  const Tensor mean = Tensor::from_rows({{1, 7.0f / 3}, {1, 7.0f / 3}, {1, 7.0f / 3}});
  CHECK(fraction_variance_explained(h, mean) == doctest::Approx(0.0).epsilon(1e-7));
  CHECK_THROWS_AS(fraction_variance_explained(Tensor({3, 2}, 1.0f), Tensor({3, 2})), NumericError);
  CHECK_THROWS(fraction_variance_explained(Tensor({1, 2}), Tensor({1, 2})));
  CHECK(mean_l0(Tensor::from_rows({{0, 1, 2}, {0, 0, 3}})) == 1.5);
}

TEST_CASE("SAE and activation files round-trip") {
  const auto dir = fixtures::temp_dir("sae");
  SeededRng rng(4);
  const Tensor data = random_matrix(9, 5, rng, 1.0f);
  const SaeParams p = init_sae(data, 6, 1);
  save_sae(dir / "sae.bin", p);
  const SaeParams q = load_sae(dir / "sae.bin");
  CHECK(q.w_enc == p.w_enc);
  CHECK(q.b_dec == p.b_dec);
  CHECK_THROWS_AS(load_activations(dir / "sae.bin"), FormatError);

  save_activations(dir / "act.bin", data);
  CHECK(load_activations(dir / "act.bin") == data);
  CHECK_THROWS_AS(load_sae(dir / "act.bin"), FormatError);
}
