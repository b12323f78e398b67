#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "circuitbench/bpe.hpp"

namespace circuitbench {

enum class Frame { canonical, cleft };
enum class Structure { abba, baba };

/// Which word pools a sampler draws from.
enum class PoolVariant { in_dist, ood_content, heldout_names };

std::string to_string(Frame frame);
std::string to_string(Structure structure);
std::string to_string(PoolVariant variant);

struct WordPools {
  std::vector<std::string> names;
  std::vector<std::string> places;
  std::vector<std::string> objects;
  std::vector<std::string> ood_places;
  std::vector<std::string> ood_objects;
  std::vector<std::string> heldout_names;
  std::vector<std::string> multi_token_probe_names;

  static WordPools from_json(const nlohmann::json& j);
  static WordPools load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  /// Names, places and objects used by `variant`.
  const std::vector<std::string>& names_for(PoolVariant variant) const;
  const std::vector<std::string>& places_for(PoolVariant variant) const;
  const std::vector<std::string>& objects_for(PoolVariant variant) const;
};

/// Token indices (BOS = 0) of the template slots.
struct PositionLabels {
  std::size_t n1 = 0, n2 = 0, n3 = 0, place = 0, object = 0, end = 0;
  std::size_t io = 0;  // first-clause position of the IO name
  std::size_t s = 0;   // first-clause position of the S name
};

struct IoiPrompt {
  std::string text;
  std::vector<TokenId> tokens;  // BOS-prefixed
  Structure structure = Structure::abba;
  Frame frame = Frame::canonical;
  std::string io_name, s_name, place, object;
  TokenId io_token = 0, s_token = 0;
  PositionLabels pos;
};

struct MinimalPair {
  IoiPrompt clean;
  IoiPrompt corrupt;
};

/// Template text for the frame, e.g.
/// "When Mary and John went to the store, John gave a drink to".
std::string render_text(const std::string& n1, const std::string& n2, const std::string& n3,
                        const std::string& place, const std::string& object, Frame frame);

/// Renders and tokenizes one prompt. n3 must be n1 or n2; every filler must
/// be a single token.
IoiPrompt render_prompt(const BpeVocab& vocab, const std::string& n1, const std::string& n2,
                        const std::string& n3, const std::string& place, const std::string& object,
                        Frame frame);

/// Constraints for seeded sampling. Unset fields are drawn uniformly.
struct SampleSpec {
  PoolVariant variant = PoolVariant::in_dist;
  Frame frame = Frame::canonical;
  std::optional<std::string> io_name;
  std::optional<std::string> s_name;
  std::vector<std::string> exclude_names;  // never used as IO or S
  std::optional<Structure> structure;      // otherwise a fair coin per prompt
};

/// n seeded prompts. Multi-token pool entries are skipped; an empty effective
/// pool is an error.
std::vector<IoiPrompt> sample_batch(const BpeVocab& vocab, const WordPools& pools,
                                    std::uint64_t seed, std::size_t n, const SampleSpec& spec = {});

/// Clean prompts plus corrupt twins in which the name pair (A, B) is replaced
/// by a disjoint pair (C, D) in the same slots.
std::vector<MinimalPair> make_minimal_pairs(const BpeVocab& vocab, const WordPools& pools,
                                            std::uint64_t seed, std::size_t n,
                                            PoolVariant variant = PoolVariant::in_dist,
                                            Frame frame = Frame::canonical);

/// IO-role prompts for `name` varying structure, place, object and distractor:
/// the full cross (2 × places × objects × `n_distractors` seeded distractors),
/// shuffled, first n kept.
std::vector<IoiPrompt> paraphrase_set(const BpeVocab& vocab, const WordPools& pools,
                                      const std::string& name, std::uint64_t seed, std::size_t n,
                                      std::size_t n_distractors = 5,
                                      PoolVariant variant = PoolVariant::in_dist,
                                      Frame frame = Frame::canonical);

/// Splits `words` into single-token entries and excluded multi-token ones.
struct TokenFilter {
  std::vector<std::string> kept;
  std::vector<std::string> excluded;
};
TokenFilter filter_single_token(const BpeVocab& vocab, const std::vector<std::string>& words);

}  // namespace circuitbench
