#include "support/fixtures.hpp"

#include <fstream>
#include <unistd.h>

namespace fixtures {

std::filesystem::path source_dir() { return CIRCUITBENCH_SOURCE_DIR; }

std::filesystem::path fixture(const std::string& name) {
  return source_dir() / "tests" / "fixtures" / name;
}

nlohmann::json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  return nlohmann::json::parse(in);
}

const circuitbench::BpeVocab& gpt2_vocab() {
  static const auto vocab = circuitbench::BpeVocab::load(
      source_dir() / "data" / "gpt2" / "vocab.json", source_dir() / "data" / "gpt2" / "merges.txt");
  return vocab;
}

const circuitbench::WordPools& default_pools() {
  static const auto pools = circuitbench::WordPools::load(source_dir() / "data" / "pools.json");
  return pools;
}

circuitbench::ModelConfig tiny_gpt2_vocab_config() {
  circuitbench::ModelConfig c;
  c.n_layer = 3;
  c.n_head = 2;
  c.d_model = 16;
  c.n_ctx = 32;
  return c;
}

const circuitbench::ModelWeights& tiny_gpt2_vocab_model() {
  static const auto weights = circuitbench::random_weights(tiny_gpt2_vocab_config(), 4242);
  return weights;
}

std::filesystem::path temp_dir(const std::string& tag) {
  static int counter = 0;
  auto dir = std::filesystem::temp_directory_path() /
             ("circuitbench_" + tag + "_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
