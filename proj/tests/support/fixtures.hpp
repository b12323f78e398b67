#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>

#include "circuitbench/bpe.hpp"
#include "circuitbench/ioi.hpp"
#include "circuitbench/model.hpp"

namespace fixtures {

std::filesystem::path source_dir();
std::filesystem::path fixture(const std::string& name);
nlohmann::json load_json(const std::filesystem::path& path);

/// The committed GPT-2 vocabulary, loaded once per process.
const circuitbench::BpeVocab& gpt2_vocab();

/// The shipped default word pools.
const circuitbench::WordPools& default_pools();

/// Small random-weight model sharing GPT-2's vocabulary size, for pipeline
/// tests that need real prompt token ids.
circuitbench::ModelConfig tiny_gpt2_vocab_config();
const circuitbench::ModelWeights& tiny_gpt2_vocab_model();

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

}  // namespace fixtures
