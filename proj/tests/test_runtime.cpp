#include <cmath>
#include <doctest.h>
#include <fstream>

#include "circuitbench/error.hpp"
#include "circuitbench/model.hpp"
#include "circuitbench/runtime.hpp"
#include "circuitbench/tensor_file.hpp"
#include "support/fixtures.hpp"

using namespace circuitbench;

namespace {

struct Reference {
  ModelConfig config;
  ModelWeights weights;
  nlohmann::json cases;
};

Reference load_reference(const std::string& name) {
  const auto meta = fixtures::load_json(fixtures::fixture(name + ".json"));
  ModelConfig c;
  c.n_layer = meta["config"]["n_layer"];
  c.n_head = meta["config"]["n_head"];
  c.d_model = meta["config"]["d_model"];
  c.d_vocab = meta["config"]["d_vocab"];
  c.n_ctx = meta["config"]["n_ctx"];
  return {c, load_weights(fixtures::fixture(name + ".bin"), c), meta["cases"]};
}

// max |a - b| / max(1, max |b|) over a row-major [rows × cols] JSON array.
double relative_error(const Tensor& got, const nlohmann::json& want) {
  double err = 0, scale = 1;
  for (std::size_t r = 0; r < want.size(); ++r) {
    for (std::size_t c = 0; c < want[r].size(); ++c) {
      const double w = want[r][c];
      err = std::max(err, std::fabs(got(r, c) - w));
      scale = std::max(scale, std::fabs(w));
    }
  }
  return err / scale;
}

std::vector<TokenId> tokens_of(const nlohmann::json& c) { return c["tokens"].get<std::vector<TokenId>>(); }

}  // namespace

TEST_CASE("forward matches the reference implementation") {
  for (const auto& name : {"tiny_gpt2_a", "tiny_gpt2_b"}) {
    const auto ref = load_reference(name);
    for (const auto& c : ref.cases) {
      const auto tokens = tokens_of(c);
      CAPTURE(name);
      CAPTURE(tokens.size());
      CaptureSet capture;
      capture.resid_pre = true;
      const auto out = forward(ref.weights, tokens, capture);
      CHECK(out.logits.shape() == Shape{tokens.size(), ref.config.d_vocab});
      CHECK(relative_error(out.logits, c["logits"]) < 1e-4);
      for (std::size_t l = 0; l < ref.config.n_layer; ++l) {
        CHECK(relative_error(out.cache.get(SiteKind::resid_pre, l), c["resid_pre"][l]) < 1e-4);
      }
    }
  }
}

TEST_CASE("last-position fast path equals the full logits row") {
  const auto ref = load_reference("tiny_gpt2_b");
  const auto tokens = tokens_of(ref.cases[2]);
  const auto full = forward(ref.weights, tokens);
  ForwardOptions opt;
  opt.logits = LogitMode::last_position;
  const auto last = run_forward(ref.weights, tokens, opt);
  REQUIRE(last.logits.shape() == Shape{1, ref.config.d_vocab});
  for (std::size_t v = 0; v < ref.config.d_vocab; ++v) {
    CHECK(last.logits(0, v) == full.logits(tokens.size() - 1, v));
    CHECK(unembed(ref.weights, last.final_normed_last, static_cast<TokenId>(v)) ==
          full.logits(tokens.size() - 1, v));
  }
}

TEST_CASE("patching a run with its own activations changes nothing") {
  const auto ref = load_reference("tiny_gpt2_b");
  const auto tokens = tokens_of(ref.cases[2]);
  const auto clean = forward(ref.weights, tokens, CaptureSet::all());
  PatchSet patches;
  patches.add(HookSite::resid_pre(1, 3), clean.cache.at(HookSite::resid_pre(1, 3)));
  patches.add(HookSite::attn_z(2, 1), clean.cache.at(HookSite::attn_z(2, 1)));
  patches.add(HookSite::resid_post(0), clean.cache.at(HookSite::resid_post(0)));
  CHECK(forward_with_patches(ref.weights, tokens, patches) == clean.logits);
}

TEST_CASE("replacing resid_pre of layer 0 at every position reproduces the donor") {
  const auto ref = load_reference("tiny_gpt2_a");
  const auto a = tokens_of(ref.cases[2]);
  std::vector<TokenId> b = a;
  for (auto& t : b) t = (t + 13) % static_cast<TokenId>(ref.config.d_vocab);
  CaptureSet capture;
  capture.resid_pre = true;
  const auto donor = forward(ref.weights, b, capture);
  PatchSet patches;
  patches.add(HookSite::resid_pre(0), donor.cache.get(SiteKind::resid_pre, 0));
  CHECK(forward_with_patches(ref.weights, a, patches) == donor.logits);
}

TEST_CASE("an attn_z patch at the last position leaves earlier positions untouched") {
  const auto ref = load_reference("tiny_gpt2_b");
  const auto tokens = tokens_of(ref.cases[2]);
  const auto clean = forward(ref.weights, tokens, CaptureSet::all());
  const std::size_t last = tokens.size() - 1;
  Tensor z = clean.cache.at(HookSite::attn_z(0, 2, last));
  for (auto& v : z.data()) v += 1.0f;
  PatchSet patches;
  patches.add(HookSite::attn_z(0, 2, last), z);
  const Tensor patched = forward_with_patches(ref.weights, tokens, patches);
  for (std::size_t p = 0; p < last; ++p) {
    for (std::size_t v = 0; v < ref.config.d_vocab; ++v) CHECK(patched(p, v) == clean.logits(p, v));
  }
  bool changed = false;
  for (std::size_t v = 0; v < ref.config.d_vocab; ++v) changed |= patched(last, v) != clean.logits(last, v);
  CHECK(changed);
}

TEST_CASE("resume_forward from a cached residual matches a full run") {
  const auto ref = load_reference("tiny_gpt2_b");
  const auto tokens = tokens_of(ref.cases[2]);
  CaptureSet capture;
  capture.resid_pre = true;
  const auto full = forward(ref.weights, tokens, capture);
  const auto resumed = resume_forward(ref.weights, full.cache.get(SiteKind::resid_pre, 2), 2, {});
  CHECK(resumed.logits == full.logits);

  PatchSet early;
  early.add(HookSite::resid_pre(0, 0), full.cache.at(HookSite::resid_pre(0, 0)));
  ForwardOptions opt;
  opt.patches = &early;
  CHECK_THROWS(resume_forward(ref.weights, full.cache.get(SiteKind::resid_pre, 2), 2, opt));
}

TEST_CASE("cache aliases resid_post to the next resid_pre") {
  const auto ref = load_reference("tiny_gpt2_a");
  const auto tokens = tokens_of(ref.cases[1]);
  CaptureSet capture;
  capture.resid_pre = true;
  capture.resid_post = true;
  const auto out = forward(ref.weights, tokens, capture);
  CHECK(out.cache.get(SiteKind::resid_post, 0) == out.cache.get(SiteKind::resid_pre, 1));
  CHECK(out.cache.contains(SiteKind::resid_post, ref.config.n_layer - 1));
}

TEST_CASE("invalid inputs are rejected") {
  const auto ref = load_reference("tiny_gpt2_a");
  const std::vector<TokenId> bad{0, static_cast<TokenId>(ref.config.d_vocab)};
  CHECK_THROWS(forward(ref.weights, bad));
  const std::vector<TokenId> too_long(ref.config.n_ctx + 1, 0);
  CHECK_THROWS(forward(ref.weights, too_long));
  PatchSet p;
  p.add(HookSite::resid_pre(0, 0), Tensor({ref.config.d_model}));
  CHECK_THROWS(p.add(HookSite::resid_pre(0, 0), Tensor({ref.config.d_model})));
}

TEST_CASE("weight file validation") {
  const auto dir = fixtures::temp_dir("weights");
  const auto ref = load_reference("tiny_gpt2_a");

  SUBCASE("round trip") {
    save_weights(dir / "w.bin", ref.weights);
    const auto w = load_weights(dir / "w.bin", ref.config);
    CHECK(w.wte == ref.weights.wte);
    CHECK(parameter_count(w) == parameter_count(ref.weights));
  }
  SUBCASE("wrong expected config names the tensor") {
    ModelConfig other = ref.config;
    other.d_vocab += 1;
    CHECK_THROWS_WITH_AS(load_weights(fixtures::fixture("tiny_gpt2_a.bin"), other),
                         doctest::Contains("wte"), FormatError);
  }
  SUBCASE("truncated file") {
    std::ifstream in(fixtures::fixture("tiny_gpt2_a.bin"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream(dir / "cut.bin", std::ios::binary).write(bytes.data(), bytes.size() / 2);
    CHECK_THROWS_WITH_AS(load_weights(dir / "cut.bin", ref.config), doctest::Contains("truncated"),
                         FormatError);
  }
  SUBCASE("corrupted payload fails the checksum") {
    std::ifstream in(fixtures::fixture("tiny_gpt2_a.bin"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    bytes[bytes.size() / 2] ^= 0x5a;
    std::ofstream(dir / "bad.bin", std::ios::binary).write(bytes.data(), bytes.size());
    CHECK_THROWS_AS(load_weights(dir / "bad.bin", ref.config), FormatError);
  }
  SUBCASE("missing tensor") {
    auto tensors = read_tensor_file(fixtures::fixture("tiny_gpt2_a.bin"), kModelMagic);
    tensors.pop_back();
    write_tensor_file(dir / "short.bin", kModelMagic, tensors);
    CHECK_THROWS_WITH_AS(load_weights(dir / "short.bin", ref.config), doctest::Contains("ln_f.b"),
                         FormatError);
  }
  SUBCASE("wrong magic") {
    auto tensors = read_tensor_file(fixtures::fixture("tiny_gpt2_a.bin"), kModelMagic);
    write_tensor_file(dir / "sae.bin", kSaeMagic, tensors);
    CHECK_THROWS_AS(load_weights(dir / "sae.bin", ref.config), FormatError);
  }
}
