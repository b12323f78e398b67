#include "circuitbench/ioi.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <fstream>
#include <span>

#include "circuitbench/error.hpp"
#include "circuitbench/rng.hpp"

namespace circuitbench {

namespace {

using json = nlohmann::json;

// A template is literal text interleaved with named slots.
struct Piece {
  const char* literal;
  int slot;  // -1: none; 0 n1, 1 n2, 2 n3, 3 place, 4 object
};

constexpr Piece kCanonical[] = {
    {"When", 0}, {" and", 1}, {" went to the", 3}, {",", 2}, {" gave a", 4}, {" to", -1}};
constexpr Piece kCleft[] = {{"After", 0},       {" and", 1},        {" arrived at the", 3},
                            {", it was", 2},    {" who handed a", 4}, {" to", -1}};

std::span<const Piece> pieces_for(Frame frame) {
  if (frame == Frame::canonical) return kCanonical;
  return kCleft;
}

std::vector<std::string> read_list(const json& j, const char* key) {
  if (!j.contains(key)) {
    throw ConfigError(fmt::format("pools: missing field \"{}\"", key));
  }
  if (!j.at(key).is_array()) {
    throw ConfigError(fmt::format("pools: field \"{}\" must be a list of strings", key));
  }
  std::vector<std::string> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_string() || v.get<std::string>().empty()) {
      throw ConfigError(fmt::format("pools: field \"{}\" must be a list of non-empty strings", key));
    }
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::vector<std::string> usable(const BpeVocab& vocab, const std::vector<std::string>& words,
                                const char* what) {
  auto kept = filter_single_token(vocab, words).kept;
  if (kept.empty()) {
    throw ConfigError(fmt::format("no single-token {} in the pool", what));
  }
  return kept;
}

template <typename T>
const T& pick(SeededRng& rng, const std::vector<T>& v) {
  return v[rng.uniform_index(v.size())];
}

IoiPrompt render_roles(const BpeVocab& vocab, const std::string& io, const std::string& s,
                       Structure structure, const std::string& place, const std::string& object,
                       Frame frame) {
  return structure == Structure::abba ? render_prompt(vocab, io, s, s, place, object, frame)
                                      : render_prompt(vocab, s, io, s, place, object, frame);
}

}  // namespace

std::string to_string(Frame frame) { return frame == Frame::canonical ? "canonical" : "cleft"; }

std::string to_string(Structure structure) { return structure == Structure::abba ? "ABBA" : "BABA"; }

std::string to_string(PoolVariant variant) {
  switch (variant) {
    case PoolVariant::in_dist: return "in_dist";
    case PoolVariant::ood_content: return "ood_content";
    case PoolVariant::heldout_names: return "heldout_names";
  }
  return "?";
}

WordPools WordPools::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("pools: expected a JSON object");
  WordPools p;
  p.names = read_list(j, "names");
  p.places = read_list(j, "places");
  p.objects = read_list(j, "objects");
  p.ood_places = read_list(j, "ood_places");
  p.ood_objects = read_list(j, "ood_objects");
  p.heldout_names = read_list(j, "heldout_names");
  p.multi_token_probe_names = read_list(j, "multi_token_probe_names");
  return p;
}

WordPools WordPools::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open pools file " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

json WordPools::to_json() const {
  return {{"names", names},
          {"places", places},
          {"objects", objects},
          {"ood_places", ood_places},
          {"ood_objects", ood_objects},
          {"heldout_names", heldout_names},
          {"multi_token_probe_names", multi_token_probe_names}};
}

const std::vector<std::string>& WordPools::names_for(PoolVariant variant) const {
  return variant == PoolVariant::heldout_names ? heldout_names : names;
}

const std::vector<std::string>& WordPools::places_for(PoolVariant variant) const {
  return variant == PoolVariant::ood_content ? ood_places : places;
}

const std::vector<std::string>& WordPools::objects_for(PoolVariant variant) const {
  return variant == PoolVariant::ood_content ? ood_objects : objects;
}

TokenFilter filter_single_token(const BpeVocab& vocab, const std::vector<std::string>& words) {
  TokenFilter f;
  for (const auto& w : words) {
    (vocab.is_single_token(w) ? f.kept : f.excluded).push_back(w);
  }
  return f;
}

std::string render_text(const std::string& n1, const std::string& n2, const std::string& n3,
                        const std::string& place, const std::string& object, Frame frame) {
  const std::string* fill[] = {&n1, &n2, &n3, &place, &object};
  std::string text;
  for (const auto& piece : pieces_for(frame)) {
    text += piece.literal;
    if (piece.slot >= 0) text += " " + *fill[piece.slot];
  }
  return text;
}

IoiPrompt render_prompt(const BpeVocab& vocab, const std::string& n1, const std::string& n2,
                        const std::string& n3, const std::string& place, const std::string& object,
                        Frame frame) {
  if (n3 != n1 && n3 != n2) {
    throw ConfigError(fmt::format("third name \"{}\" must repeat \"{}\" or \"{}\"", n3, n1, n2));
  }
  if (n1 == n2) {
    throw ConfigError(fmt::format("the two names must differ (got \"{}\" twice)", n1));
  }
  const std::string* fill[] = {&n1, &n2, &n3, &place, &object};
  for (const auto* word : fill) {
    if (!vocab.is_single_token(*word)) {
      throw ConfigError(fmt::format("filler \"{}\" is not a single token", *word));
    }
  }

  IoiPrompt p;
  p.frame = frame;
  std::size_t slot_pos[5] = {};
  std::string text;
  for (const auto& piece : pieces_for(frame)) {
    text += piece.literal;
    if (piece.slot >= 0) {
      slot_pos[piece.slot] = 1 + vocab.encode(text).size();
      text += " " + *fill[piece.slot];
    }
  }
  p.text = std::move(text);
  p.tokens.push_back(kEndOfText);
  for (auto id : vocab.encode(p.text)) p.tokens.push_back(id);
  for (int s = 0; s < 5; ++s) {
    const auto want = vocab.encode(" " + *fill[s]).front();
    if (slot_pos[s] >= p.tokens.size() || p.tokens[slot_pos[s]] != want) {
      throw Error(fmt::format("tokenization of \"{}\" does not align with its slots", p.text));
    }
  }

  p.structure = n3 == n2 ? Structure::abba : Structure::baba;
  p.io_name = n3 == n2 ? n1 : n2;
  p.s_name = n3;
  p.place = place;
  p.object = object;
  p.io_token = vocab.encode(" " + p.io_name).front();
  p.s_token = vocab.encode(" " + p.s_name).front();
  p.pos.n1 = slot_pos[0];
  p.pos.n2 = slot_pos[1];
  p.pos.n3 = slot_pos[2];
  p.pos.place = slot_pos[3];
  p.pos.object = slot_pos[4];
  p.pos.end = p.tokens.size() - 1;
  p.pos.io = p.structure == Structure::abba ? p.pos.n1 : p.pos.n2;
  p.pos.s = p.structure == Structure::abba ? p.pos.n2 : p.pos.n1;
  return p;
}

std::vector<IoiPrompt> sample_batch(const BpeVocab& vocab, const WordPools& pools,
                                    std::uint64_t seed, std::size_t n, const SampleSpec& spec) {
  auto names = usable(vocab, pools.names_for(spec.variant), "names");
  std::erase_if(names, [&](const std::string& nm) {
    return std::ranges::find(spec.exclude_names, nm) != spec.exclude_names.end();
  });
  const auto places = usable(vocab, pools.places_for(spec.variant), "places");
  const auto objects = usable(vocab, pools.objects_for(spec.variant), "objects");
  if (spec.io_name && spec.s_name && *spec.io_name == *spec.s_name) {
    throw ConfigError("IO and S names must differ");
  }
  const std::size_t free_roles = (spec.io_name ? 0 : 1) + (spec.s_name ? 0 : 1);
  std::vector<std::string> candidates;
  for (const auto& nm : names) {
    if (nm != spec.io_name && nm != spec.s_name) candidates.push_back(nm);
  }
  if (candidates.size() < free_roles) {
    throw ConfigError("name pool too small for the requested sampling constraints");
  }

  SeededRng rng(seed);
  std::vector<IoiPrompt> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string io, s;
    if (spec.io_name) io = *spec.io_name;
    if (spec.s_name) s = *spec.s_name;
    if (!spec.io_name) {
      do io = pick(rng, candidates); while (io == s);
    }
    if (!spec.s_name) {
      do s = pick(rng, candidates); while (s == io);
    }
    const auto& place = pick(rng, places);
    const auto& object = pick(rng, objects);
    const Structure structure =
        spec.structure ? *spec.structure : (rng.bernoulli(0.5) ? Structure::abba : Structure::baba);
    out.push_back(render_roles(vocab, io, s, structure, place, object, spec.frame));
  }
  return out;
}

std::vector<MinimalPair> make_minimal_pairs(const BpeVocab& vocab, const WordPools& pools,
                                            std::uint64_t seed, std::size_t n, PoolVariant variant,
                                            Frame frame) {
  const auto names = usable(vocab, pools.names_for(variant), "names");
  if (names.size() < 4) {
    throw ConfigError("minimal pairs need at least 4 single-token names to draw a disjoint pair");
  }
  SampleSpec spec;
  spec.variant = variant;
  spec.frame = frame;
  auto clean = sample_batch(vocab, pools, seed, n, spec);
  SeededRng rng(derive_seed(seed, "corrupt"));
  std::vector<MinimalPair> pairs;
  pairs.reserve(n);
  for (auto& c : clean) {
    std::vector<std::string> others;
    for (const auto& nm : names) {
      if (nm != c.io_name && nm != c.s_name) others.push_back(nm);
    }
    const auto io = pick(rng, others);
    std::string s;
    do s = pick(rng, others); while (s == io);
    auto corrupt = render_roles(vocab, io, s, c.structure, c.place, c.object, frame);
    pairs.push_back({std::move(c), std::move(corrupt)});
  }
  return pairs;
}

std::vector<IoiPrompt> paraphrase_set(const BpeVocab& vocab, const WordPools& pools,
                                      const std::string& name, std::uint64_t seed, std::size_t n,
                                      std::size_t n_distractors, PoolVariant variant, Frame frame) {
  auto others = usable(vocab, pools.names_for(variant), "names");
  std::erase(others, name);
  const auto places = usable(vocab, pools.places_for(variant), "places");
  const auto objects = usable(vocab, pools.objects_for(variant), "objects");
  SeededRng rng(seed);
  rng.shuffle(others.begin(), others.end());
  others.resize(std::min(others.size(), n_distractors));
  if (others.empty()) throw ConfigError("paraphrase set needs at least one distractor name");

  struct Combo {
    Structure structure;
    std::size_t place, object, distractor;
  };
  std::vector<Combo> combos;
  for (auto st : {Structure::abba, Structure::baba}) {
    for (std::size_t p = 0; p < places.size(); ++p) {
      for (std::size_t o = 0; o < objects.size(); ++o) {
        for (std::size_t d = 0; d < others.size(); ++d) combos.push_back({st, p, o, d});
      }
    }
  }
  rng.shuffle(combos.begin(), combos.end());
  combos.resize(std::min(combos.size(), n));
  std::vector<IoiPrompt> out;
  out.reserve(combos.size());
  for (const auto& c : combos) {
    out.push_back(render_roles(vocab, name, others[c.distractor], c.structure, places[c.place],
                               objects[c.object], frame));
  }
  return out;
}

}  // namespace circuitbench
