#include "circuitbench/bpe.hpp"

#include <fmt/format.h>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include "circuitbench/error.hpp"

namespace circuitbench {

namespace {

enum class CharClass { letter, number, space, other };

struct Unit {
  std::size_t begin;
  std::size_t len;
  UChar32 cp;  // -1 for invalid byte sequences
  CharClass cls;
};

CharClass classify(UChar32 cp) {
  if (cp < 0) {
    return CharClass::other;
  }
  if (u_isUWhiteSpace(cp)) {
    return CharClass::space;
  }
  const auto mask = U_GET_GC_MASK(cp);
  if (mask & U_GC_L_MASK) {
    return CharClass::letter;
  }
  if (mask & U_GC_N_MASK) {
    return CharClass::number;
  }
  return CharClass::other;
}

std::vector<Unit> split_units(std::string_view text) {
  std::vector<Unit> units;
  units.reserve(text.size());
  const auto* s = reinterpret_cast<const std::uint8_t*>(text.data());
  const auto length = static_cast<std::int32_t>(text.size());
  std::int32_t i = 0;
  while (i < length) {
    const std::int32_t start = i;
    UChar32 c = 0;
    U8_NEXT(s, i, length, c);
    units.push_back({static_cast<std::size_t>(start), static_cast<std::size_t>(i - start), c,
                     classify(c)});
  }
  return units;
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

bool is_contraction_at(const std::vector<Unit>& u, std::size_t i, std::size_t& len) {
  if (u[i].cp != '\'' || i + 1 >= u.size()) {
    return false;
  }
  const UChar32 a = u[i + 1].cp;
  if (a == 's' || a == 't' || a == 'm' || a == 'd') {
    len = 2;
    return true;
  }
  if (i + 2 < u.size()) {
    const UChar32 b = u[i + 2].cp;
    if ((a == 'r' && b == 'e') || (a == 'v' && b == 'e') || (a == 'l' && b == 'l')) {
      len = 3;
      return true;
    }
  }
  return false;
}

}  // namespace

std::vector<std::string> pretokenize(std::string_view text) {
  const auto u = split_units(text);
  std::vector<std::string> pieces;
  const std::size_t n = u.size();
  std::size_t i = 0;
  auto emit = [&](std::size_t from, std::size_t to) {
    const std::size_t b = u[from].begin;
    const std::size_t e = u[to - 1].begin + u[to - 1].len;
    pieces.emplace_back(text.substr(b, e - b));
  };
  while (i < n) {
    std::size_t clen = 0;
    if (is_contraction_at(u, i, clen)) {
      emit(i, i + clen);
      i += clen;
      continue;
    }
    // " ?X+" alternatives: optional single leading space, then a run of one class.
    const std::size_t j = (u[i].cp == ' ' && i + 1 < n) ? i + 1 : i;
    const CharClass head = u[j].cls;
    if (head != CharClass::space && (j == i + 1 || u[i].cls != CharClass::space)) {
      std::size_t k = j + 1;
      while (k < n && u[k].cls == head) {
        ++k;
      }
      emit(i, k);
      i = k;
      continue;
    }
    // Whitespace: \s+(?!\S) takes the run minus the last char when a
    // non-space follows; a lone whitespace char falls through to \s+.
    std::size_t k = i;
    while (k < n && u[k].cls == CharClass::space) {
      ++k;
    }
    if (k == n) {
      emit(i, k);
      i = k;
    } else if (k - i >= 2) {
      emit(i, k - 1);
      i = k - 1;
    } else {
      emit(i, i + 1);
      i += 1;
    }
  }
  return pieces;
}

BpeVocab::BpeVocab() {
  // GPT-2 byte -> printable code point table.
  std::array<bool, 256> printable{};
  for (int b = '!'; b <= '~'; ++b) printable[b] = true;
  for (int b = 0xa1; b <= 0xac; ++b) printable[b] = true;
  for (int b = 0xae; b <= 0xff; ++b) printable[b] = true;
  std::uint32_t next = 256;
  for (int b = 0; b < 256; ++b) {
    const std::uint32_t cp = printable[b] ? static_cast<std::uint32_t>(b) : next++;
    append_utf8(byte_encoder_[b], cp);
    byte_decoder_[cp] = static_cast<std::uint8_t>(b);
  }
}

BpeVocab BpeVocab::load(const std::filesystem::path& vocab_file,
                        const std::filesystem::path& merges_file) {
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
      throw FormatError("cannot open tokenizer file " + p.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  return from_strings(slurp(vocab_file), slurp(merges_file));
}

BpeVocab BpeVocab::from_strings(std::string_view vocab_json, std::string_view merges_text) {
  BpeVocab v;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(vocab_json);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("vocab.json: ") + e.what());
  }
  if (!j.is_object()) {
    throw FormatError("vocab.json: expected an object of token -> id");
  }
  v.id_to_token_.assign(j.size(), std::string());
  std::vector<bool> seen(j.size(), false);
  for (const auto& [tok, idv] : j.items()) {
    if (!idv.is_number_integer()) {
      throw FormatError("vocab.json: non-integer id for token " + tok);
    }
    const auto id = idv.get<std::int64_t>();
    if (id < 0 || static_cast<std::size_t>(id) >= j.size() || seen[id]) {
      throw FormatError(fmt::format("vocab.json: ids must be dense in [0, {}); bad id {}",
                                    j.size(), id));
    }
    seen[id] = true;
    v.id_to_token_[id] = tok;
    v.token_to_id_.emplace(tok, static_cast<TokenId>(id));
  }

  std::size_t line_no = 0;
  std::size_t pos = 0;
  int rank = 0;
  while (pos < merges_text.size()) {
    std::size_t end = merges_text.find('\n', pos);
    if (end == std::string_view::npos) end = merges_text.size();
    std::string_view line = merges_text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || (line_no == 1 && line.starts_with("#version"))) {
      continue;
    }
    const auto sp = line.find(' ');
    if (sp == std::string_view::npos || sp == 0 || sp + 1 >= line.size() ||
        line.find(' ', sp + 1) != std::string_view::npos) {
      throw FormatError(fmt::format("merges.txt line {}: expected \"left right\"", line_no));
    }
    const std::string left(line.substr(0, sp));
    const std::string right(line.substr(sp + 1));
    if (!v.token_to_id_.contains(left + right)) {
      throw FormatError(fmt::format("merges.txt line {}: merge result \"{}\" not in vocabulary",
                                    line_no, left + right));
    }
    v.merge_ranks_.emplace(left + ' ' + right, rank++);
  }
  return v;
}

std::vector<std::string> BpeVocab::bpe(const std::string& piece) const {
  std::vector<std::string> word;
  // Split the byte-encoded piece into code points (each symbol is one char).
  for (std::size_t i = 0; i < piece.size();) {
    std::size_t len = 1;
    const auto c = static_cast<unsigned char>(piece[i]);
    if (c >= 0xe0) len = 3;
    else if (c >= 0xc0) len = 2;
    word.push_back(piece.substr(i, len));
    i += len;
  }
  while (word.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    std::size_t best = 0;
    for (std::size_t i = 0; i + 1 < word.size(); ++i) {
      auto it = merge_ranks_.find(word[i] + ' ' + word[i + 1]);
      if (it != merge_ranks_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = i;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) {
      break;
    }
    const std::string first = word[best];
    const std::string second = word[best + 1];
    std::vector<std::string> merged;
    merged.reserve(word.size());
    for (std::size_t i = 0; i < word.size();) {
      if (i + 1 < word.size() && word[i] == first && word[i + 1] == second) {
        merged.push_back(first + second);
        i += 2;
      } else {
        merged.push_back(word[i]);
        i += 1;
      }
    }
    word = std::move(merged);
  }
  return word;
}

std::vector<TokenId> BpeVocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& piece : pretokenize(text)) {
    std::string mapped;
    for (unsigned char b : piece) {
      mapped += byte_encoder_[b];
    }
    for (const auto& sym : bpe(mapped)) {
      auto it = token_to_id_.find(sym);
      if (it == token_to_id_.end()) {
        throw FormatError("vocabulary lacks byte-level symbol \"" + sym + "\"");
      }
      ids.push_back(it->second);
    }
  }
  return ids;
}

std::string BpeVocab::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  for (auto id : ids) {
    const std::string& tok = token(id);
    const auto* s = reinterpret_cast<const std::uint8_t*>(tok.data());
    const auto length = static_cast<std::int32_t>(tok.size());
    std::int32_t i = 0;
    while (i < length) {
      UChar32 c = 0;
      U8_NEXT(s, i, length, c);
      auto it = byte_decoder_.find(static_cast<std::uint32_t>(c));
      if (c < 0 || it == byte_decoder_.end()) {
        throw FormatError(fmt::format("token {} contains a non byte-level character", id));
      }
      out.push_back(static_cast<char>(it->second));
    }
  }
  return out;
}

bool BpeVocab::is_single_token(std::string_view word) const {
  if (word.empty()) {
    return false;
  }
  return encode(" " + std::string(word)).size() == 1;
}

const std::string& BpeVocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw Error(fmt::format("token id {} out of range", id));
  }
  return id_to_token_[id];
}

TokenId BpeVocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  if (it == token_to_id_.end()) {
    throw Error("unknown token " + token);
  }
  return it->second;
}

}  // namespace circuitbench
