#ifndef HALLU_MITIGATION_HPP
#define HALLU_MITIGATION_HPP

// Inference-time distribution transforms and context-length management.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hallu/errors.hpp"
#include "hallu/records.hpp"

namespace hallu {

struct SamplingPolicy {
  double temperature = 1.0;
  std::optional<std::size_t> top_k;
  std::optional<double> top_p;
};

inline void validate_policy(const SamplingPolicy& p) {
  if (!(p.temperature > 0.0) || !std::isfinite(p.temperature)) {
    throw DomainError("sampling policy: temperature must be > 0");
  }
  if (p.top_k && *p.top_k < 1) throw DomainError("sampling policy: top_k must be >= 1");
  if (p.top_p && !(*p.top_p > 0.0 && *p.top_p <= 1.0)) {
    throw DomainError("sampling policy: top_p must lie in (0,1]");
  }
}

namespace detail {

inline void renormalize(std::vector<double>& p) {
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  if (!(s > 0.0)) throw ConstraintError("distribution has no remaining mass");
  for (double& x : p) x /= s;
}

/// Indices sorted by descending probability; equal probabilities keep input order.
inline std::vector<std::size_t> rank_by_probability(const std::vector<double>& p) {
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  return idx;
}

}  // namespace detail

/// Temperature (as p^(1/T), renormalized), then top-k, then top-p, then a
/// final renormalization. Labels are kept; filtered tokens get probability 0.
inline TokenDistribution apply_sampling_policy(const TokenDistribution& dist, const SamplingPolicy& policy) {
  validate_policy(policy);
  if (dist.probs.empty()) throw DomainError("apply_sampling_policy: empty distribution");
  TokenDistribution out = dist;
  auto& p = out.probs;

  // p^(1/T) in the log domain, shifted by the max so the top token maps to 1.
  double max_log = -std::numeric_limits<double>::infinity();
  for (double x : p) {
    if (x > 0.0) max_log = std::max(max_log, std::log(x));
  }
  for (double& x : p) x = x > 0.0 ? std::exp((std::log(x) - max_log) / policy.temperature) : 0.0;
  detail::renormalize(p);

  if (policy.top_k && *policy.top_k < p.size()) {
    const auto order = detail::rank_by_probability(p);
    for (std::size_t r = *policy.top_k; r < order.size(); ++r) p[order[r]] = 0.0;
    detail::renormalize(p);
  }

  if (policy.top_p && *policy.top_p < 1.0) {
    const auto order = detail::rank_by_probability(p);
    double cum = 0.0;
    std::size_t keep = 0;
    while (keep < order.size()) {
      cum += p[order[keep]];
      ++keep;
      if (cum >= *policy.top_p - 1e-12) break;
    }
    for (std::size_t r = keep; r < order.size(); ++r) p[order[r]] = 0.0;
  }
  detail::renormalize(p);
  return out;
}

/// Zeroes every label outside `allowed` and renormalizes the rest.
inline TokenDistribution constrained_distribution(const TokenDistribution& dist,
                                                  const std::set<std::string>& allowed) {
  if (allowed.empty()) throw ConstraintError("no permissible token: allowed set is empty");
  TokenDistribution out = dist;
  double mass = 0.0;
  for (std::size_t i = 0; i < out.probs.size(); ++i) {
    if (!allowed.count(out.labels[i])) out.probs[i] = 0.0;
    mass += out.probs[i];
  }
  if (!(mass > 0.0)) throw ConstraintError("no permissible token in the distribution support");
  for (double& x : out.probs) x /= mass;
  return out;
}

// ---- chunking -------------------------------------------------------------------

struct Chunk {
  std::string text;
  std::size_t start_offset = 0;
  std::size_t end_offset = 0;
  std::size_t index = 0;
};

inline constexpr double kDefaultChunkOverlap = 0.15;

namespace detail {

/// Moves a boundary back to just after the nearest whitespace character within
/// `window` characters; unchanged when none is found or at document edges.
inline std::size_t snap_boundary(std::string_view text, std::size_t pos, std::size_t window) {
  if (pos == 0 || pos >= text.size()) return pos;
  const std::size_t floor = pos > window ? pos - window : 0;
  for (std::size_t b = pos; b > floor; --b) {
    if (std::isspace(static_cast<unsigned char>(text[b - 1]))) return b;
  }
  return pos;
}

}  // namespace detail

/// Sliding-window chunks of `target_size` characters advancing by
/// max(1, floor(target_size * (1 - overlap))). Interior boundaries snap back
/// to whitespace within target_size / 10 characters.
inline std::vector<Chunk> chunk_document(std::string_view text, std::size_t target_size,
                                         double overlap_frac = kDefaultChunkOverlap) {
  if (target_size < 1) throw DomainError("chunk_document: target_size must be >= 1");
  if (!(overlap_frac >= 0.0 && overlap_frac < 0.5)) {
    throw DomainError("chunk_document: overlap fraction must lie in [0, 0.5)");
  }
  std::vector<Chunk> out;
  if (text.empty()) return out;
  const auto stride = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(static_cast<double>(target_size) * (1.0 - overlap_frac))));
  const std::size_t window = target_size / 10;
  for (std::size_t i = 0;; ++i) {
    const std::size_t nominal_start = i * stride;
    const std::size_t nominal_end = std::min(nominal_start + target_size, text.size());
    Chunk c;
    c.index = i;
    c.start_offset = detail::snap_boundary(text, nominal_start, window);
    c.end_offset = detail::snap_boundary(text, nominal_end, window);
    c.text = std::string(text.substr(c.start_offset, c.end_offset - c.start_offset));
    out.push_back(std::move(c));
    if (nominal_end >= text.size()) break;
  }
  return out;
}

struct SummaryNode {
  std::size_t level = 0;  // 0 = map phase
  std::string text;
  std::vector<std::size_t> chunk_indices;  // provenance
  std::vector<std::size_t> children;       // node ids on the previous level
};

struct SummaryTree {
  std::vector<std::vector<SummaryNode>> levels;
  std::size_t depth() const { return levels.size(); }
};

struct MapReduceSummary {
  std::string summary;
  SummaryTree tree;
};

/// Map: summarize every chunk. Reduce: join groups of `fan_in` summaries
/// with `separator` and summarize again, level by level, until one remains.
template <class Summarizer>
MapReduceSummary summarize_map_reduce(const std::vector<Chunk>& chunks, Summarizer&& summarizer,
                                      std::size_t fan_in = 2, const std::string& separator = "\n") {
  if (chunks.empty()) throw DomainError("summarize_map_reduce: no chunks");
  if (fan_in < 2) throw DomainError("summarize_map_reduce: fan_in must be >= 2");
  MapReduceSummary out;
  std::vector<SummaryNode> level;
  for (const auto& c : chunks) {
    level.push_back({0, summarizer(c.text), {c.index}, {}});
  }
  out.tree.levels.push_back(level);
  while (out.tree.levels.back().size() > 1) {
    const auto& prev = out.tree.levels.back();
    std::vector<SummaryNode> next;
    for (std::size_t g = 0; g < prev.size(); g += fan_in) {
      SummaryNode node;
      node.level = out.tree.levels.size();
      std::string joined;
      for (std::size_t k = g; k < std::min(g + fan_in, prev.size()); ++k) {
        if (k > g) joined += separator;
        joined += prev[k].text;
        node.children.push_back(k);
        node.chunk_indices.insert(node.chunk_indices.end(), prev[k].chunk_indices.begin(),
                                  prev[k].chunk_indices.end());
      }
      node.text = summarizer(joined);
      next.push_back(std::move(node));
    }
    out.tree.levels.push_back(std::move(next));
  }
  out.summary = out.tree.levels.back().front().text;
  return out;
}

}  // namespace hallu

#endif  // HALLU_MITIGATION_HPP
