#include "circuitbench/patching.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "circuitbench/error.hpp"
#include "circuitbench/parallel.hpp"

namespace circuitbench {

namespace {

ForwardOptions end_only() {
  ForwardOptions opt;
  opt.logits = LogitMode::none;
  return opt;
}

// Mean over non-degenerate pairs of per-pair recoveries stored at
// values[task_offset + pair].
double mean_recovery(const std::vector<PreparedPair>& pairs, const std::vector<float>& deltas,
                     std::size_t offset) {
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (p.degenerate) continue;
    sum += *recovery(deltas[offset + i], p.clean_delta, p.corrupt_delta);
    ++n;
  }
  if (n == 0) throw NumericError("every minimal pair has a degenerate clean-to-corrupt gap");
  return sum / static_cast<double>(n);
}

std::size_t count_degenerate(const std::vector<PreparedPair>& pairs) {
  return static_cast<std::size_t>(
      std::ranges::count_if(pairs, [](const PreparedPair& p) { return p.degenerate; }));
}

}  // namespace

float logit_diff(std::span<const float> end_logits, TokenId io, TokenId s) {
  const auto n = static_cast<TokenId>(end_logits.size());
  if (io < 0 || io >= n || s < 0 || s >= n) {
    throw Error(fmt::format("logit_diff: token id out of range (io {}, s {}, vocab {})", io, s, n));
  }
  return end_logits[static_cast<std::size_t>(io)] - end_logits[static_cast<std::size_t>(s)];
}

float end_logit_diff(const ModelWeights& weights, const ForwardResult& run, TokenId io, TokenId s) {
  return unembed(weights, run.final_normed_last, io) - unembed(weights, run.final_normed_last, s);
}

std::optional<double> recovery(double patched, double clean, double corrupt) {
  const double gap = clean - corrupt;
  if (std::abs(gap) < kMinRecoveryGap) return std::nullopt;
  return (patched - corrupt) / gap;
}

BaselineResult baseline(const ModelWeights& weights, const std::vector<IoiPrompt>& prompts) {
  if (prompts.empty()) throw ConfigError("baseline needs at least one prompt");
  BaselineResult r;
  r.deltas.resize(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    const auto& p = prompts[i];
    const auto run = run_forward(weights, p.tokens, end_only());
    r.deltas[i] = end_logit_diff(weights, run, p.io_token, p.s_token);
  });
  double sum = 0;
  std::size_t correct = 0;
  for (float d : r.deltas) {
    sum += d;
    correct += d > 0.0f;
  }
  r.mean_logit_diff = sum / static_cast<double>(prompts.size());
  r.frac_correct = static_cast<double>(correct) / static_cast<double>(prompts.size());
  return r;
}

std::vector<PreparedPair> prepare_pairs(const ModelWeights& weights,
                                        const std::vector<MinimalPair>& pairs) {
  std::vector<PreparedPair> out(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    auto& prep = out[i];
    prep.pair = pairs[i];
    const auto& clean = prep.pair.clean;
    const auto& corrupt = prep.pair.corrupt;
    if (clean.tokens.size() != corrupt.tokens.size()) {
      throw ShapeError("minimal pair prompts differ in length");
    }
    ForwardOptions opt = end_only();
    opt.capture.resid_pre = true;
    opt.capture.attn_z = true;
    auto c = run_forward(weights, clean.tokens, opt);
    opt.capture.attn_z = false;
    auto k = run_forward(weights, corrupt.tokens, opt);
    prep.clean_delta = end_logit_diff(weights, c, clean.io_token, clean.s_token);
    prep.corrupt_delta = end_logit_diff(weights, k, clean.io_token, clean.s_token);
    prep.degenerate = !recovery(0, prep.clean_delta, prep.corrupt_delta).has_value();
    prep.clean = std::move(c.cache);
    prep.corrupt = std::move(k.cache);
  });
  return out;
}

float patched_delta(const ModelWeights& weights, const PreparedPair& prepared,
                    const PatchSet& patches) {
  const std::size_t start = patches.earliest_layer().value_or(weights.config.n_layer);
  ForwardOptions opt = end_only();
  opt.patches = &patches;
  Tensor resid = start < weights.config.n_layer
                     ? prepared.corrupt.get(SiteKind::resid_pre, start)
                     : prepared.corrupt.get(SiteKind::resid_post, weights.config.n_layer - 1);
  const auto run = resume_forward(weights, std::move(resid), start, opt);
  const auto& clean = prepared.pair.clean;
  return end_logit_diff(weights, run, clean.io_token, clean.s_token);
}

std::string SweepGrid::to_csv() const {
  std::string out = "layer";
  for (std::size_t c = 0; c < cols; ++c) {
    out += ',';
    out += c < col_labels.size() ? col_labels[c] : fmt::format("c{}", c);
  }
  out += '\n';
  for (std::size_t r = 0; r < rows; ++r) {
    out += fmt::format("{}", r);
    for (std::size_t c = 0; c < cols; ++c) out += fmt::format(",{:.6f}", at(r, c));
    out += '\n';
  }
  return out;
}

std::vector<std::size_t> role_ordered_positions(const IoiPrompt& prompt) {
  std::vector<std::size_t> cols(prompt.tokens.size());
  for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = c;
  cols[prompt.pos.n1] = prompt.pos.io;
  cols[prompt.pos.n2] = prompt.pos.s;
  return cols;
}

std::vector<std::string> resid_column_labels(const BpeVocab& vocab, const IoiPrompt& prompt) {
  std::vector<std::string> labels;
  for (std::size_t c = 0; c < prompt.tokens.size(); ++c) {
    const auto& p = prompt.pos;
    if (c == 0) labels.emplace_back("BOS");
    else if (c == p.n1) labels.emplace_back("IO");
    else if (c == p.n2) labels.emplace_back("S1");
    else if (c == p.n3) labels.emplace_back("S2");
    else if (c == p.place) labels.emplace_back("PLACE");
    else if (c == p.object) labels.emplace_back("OBJ");
    else if (c == p.end) labels.emplace_back("END");
    else {
      std::string word = vocab.decode({prompt.tokens[c]});
      if (!word.empty() && word.front() == ' ') word.erase(0, 1);
      labels.push_back(word == "," ? "comma" : word);
    }
  }
  return labels;
}

SweepGrid resid_sweep(const ModelWeights& weights, const std::vector<PreparedPair>& pairs) {
  if (pairs.empty()) throw ConfigError("resid sweep needs at least one minimal pair");
  const std::size_t seq = pairs.front().pair.clean.tokens.size();
  for (const auto& p : pairs) {
    if (p.pair.clean.tokens.size() != seq) throw ShapeError("resid sweep pairs differ in length");
  }
  SweepGrid g;
  g.kind = GridKind::resid;
  g.rows = weights.config.n_layer;
  g.cols = seq;
  g.n_pairs = pairs.size();
  g.n_degenerate = count_degenerate(pairs);

  const std::size_t np = pairs.size();
  std::vector<float> deltas(g.rows * g.cols * np);
  parallel_for(deltas.size(), [&](std::size_t task) {
    const std::size_t i = task % np;
    const std::size_t cell = task / np;
    const std::size_t layer = cell / g.cols;
    const auto& prep = pairs[i];
    if (prep.degenerate) return;
    const std::size_t position = role_ordered_positions(prep.pair.clean)[cell % g.cols];
    PatchSet patch;
    patch.add(HookSite::resid_pre(layer, position),
              prep.clean.at(HookSite::resid_pre(layer, position)));
    deltas[task] = patched_delta(weights, prep, patch);
  });
  g.cells.resize(g.rows * g.cols);
  for (std::size_t cell = 0; cell < g.cells.size(); ++cell) {
    g.cells[cell] = mean_recovery(pairs, deltas, cell * np);
  }
  return g;
}

SweepGrid head_sweep(const ModelWeights& weights, const std::vector<PreparedPair>& pairs) {
  if (pairs.empty()) throw ConfigError("head sweep needs at least one minimal pair");
  SweepGrid g;
  g.kind = GridKind::head;
  g.rows = weights.config.n_layer;
  g.cols = weights.config.n_head;
  g.n_pairs = pairs.size();
  g.n_degenerate = count_degenerate(pairs);
  for (std::size_t h = 0; h < g.cols; ++h) g.col_labels.push_back(fmt::format("H{}", h));

  const std::size_t np = pairs.size();
  std::vector<float> deltas(g.rows * g.cols * np);
  parallel_for(deltas.size(), [&](std::size_t task) {
    const std::size_t i = task % np;
    const std::size_t cell = task / np;
    const auto& prep = pairs[i];
    if (prep.degenerate) return;
    const std::size_t layer = cell / g.cols;
    const std::size_t head = cell % g.cols;
    const std::size_t end = prep.pair.clean.pos.end;
    PatchSet patch;
    patch.add(HookSite::attn_z(layer, head, end), prep.clean.at(HookSite::attn_z(layer, head, end)));
    deltas[task] = patched_delta(weights, prep, patch);
  });
  g.cells.resize(g.rows * g.cols);
  for (std::size_t cell = 0; cell < g.cells.size(); ++cell) {
    g.cells[cell] = mean_recovery(pairs, deltas, cell * np);
  }
  return g;
}

double heads_recovery(const ModelWeights& weights, const std::vector<PreparedPair>& pairs,
                      const std::vector<std::pair<std::size_t, std::size_t>>& heads) {
  if (pairs.empty()) throw ConfigError("head recovery needs at least one minimal pair");
  std::vector<float> deltas(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t t) {
    const auto& prep = pairs[t];
    if (prep.degenerate) return;
    const std::size_t end = prep.pair.clean.pos.end;
    PatchSet patch;
    for (const auto& [layer, head] : heads) {
      if (layer >= weights.config.n_layer || head >= weights.config.n_head) {
        throw ConfigError(fmt::format("head ({}, {}) does not exist in this model", layer, head));
      }
      patch.add(HookSite::attn_z(layer, head, end), prep.clean.at(HookSite::attn_z(layer, head, end)));
    }
    deltas[t] = patched_delta(weights, prep, patch);
  });
  return mean_recovery(pairs, deltas, 0);
}

SumCheck layer_sum_check(const ModelWeights& weights, const std::vector<PreparedPair>& pairs,
                         const SweepGrid& head_grid, std::size_t layer) {
  if (head_grid.kind != GridKind::head || layer >= head_grid.rows) {
    throw ConfigError(fmt::format("sum check layer {} is not in the head grid", layer));
  }
  SumCheck s;
  s.layer = layer;
  std::vector<std::pair<std::size_t, std::size_t>> heads;
  s.max_single = head_grid.at(layer, 0);
  for (std::size_t h = 0; h < head_grid.cols; ++h) {
    heads.emplace_back(layer, h);
    s.max_single = std::max(s.max_single, head_grid.at(layer, h));
  }
  s.all_heads = heads_recovery(weights, pairs, heads);
  s.holds = s.all_heads >= s.max_single;
  return s;
}

}  // namespace circuitbench
