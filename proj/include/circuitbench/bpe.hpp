#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace circuitbench {

using TokenId = std::int32_t;

/// GPT-2's end-of-text token, used as BOS.
inline constexpr TokenId kEndOfText = 50256;

/// Byte-level BPE vocabulary in the released GPT-2 format.
class BpeVocab {
 public:
  /// vocab.json (token -> id map) and merges.txt ("#version" header line,
  /// then one "left right" pair per line, highest priority first).
  static BpeVocab load(const std::filesystem::path& vocab_file,
                       const std::filesystem::path& merges_file);

  /// Same as load(), from in-memory file contents.
  static BpeVocab from_strings(std::string_view vocab_json, std::string_view merges_text);

  std::size_t size() const noexcept { return id_to_token_.size(); }
  std::size_t merge_count() const noexcept { return merge_ranks_.size(); }

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(const std::vector<TokenId>& ids) const;

  /// True iff " " + word encodes to exactly one token.
  bool is_single_token(std::string_view word) const;

  /// Byte-encoded token string, e.g. "ĠMary".
  const std::string& token(TokenId id) const;
  TokenId id(const std::string& token) const;

 private:
  BpeVocab();
  std::vector<std::string> bpe(const std::string& piece) const;

  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> merge_ranks_;  // key: left + ' ' + right
  std::array<std::string, 256> byte_encoder_;
  std::unordered_map<std::uint32_t, std::uint8_t> byte_decoder_;  // code point -> byte
};

/// Splits text with GPT-2's pre-tokenizer pattern
///   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
/// Bytes that are not valid UTF-8 are treated as single punctuation units.
std::vector<std::string> pretokenize(std::string_view text);

}  // namespace circuitbench
