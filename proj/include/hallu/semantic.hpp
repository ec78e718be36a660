#ifndef HALLU_SEMANTIC_HPP
#define HALLU_SEMANTIC_HPP

// Sample -> embed -> cluster -> entropy pipeline for meaning-level uncertainty.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hallu/errors.hpp"
#include "hallu/records.hpp"
#include "hallu/uncertainty.hpp"

namespace hallu {

inline constexpr std::size_t kDefaultEmbeddingDim = 256;
inline constexpr double kDefaultClusterThreshold = 0.35;

using Embedding = std::vector<double>;
using EmbedFn = std::function<Embedding(const std::string&)>;

struct ClusterAssignment {
  std::vector<std::size_t> cluster_of_sample;
  std::vector<double> cluster_masses;
  std::vector<std::size_t> representatives;

  std::size_t num_clusters() const { return cluster_masses.size(); }
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Lowercased whitespace-delimited tokens with surrounding punctuation
/// trimmed; '%' and '$' are kept since they carry meaning in numeric answers.
inline std::vector<std::string> word_tokens(std::string_view text) {
  auto trimmable = [](unsigned char c) { return std::ispunct(c) && c != '%' && c != '$'; };
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && trimmable(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && trimmable(static_cast<unsigned char>(text[e - 1]))) --e;
    if (b < e) {
      std::string tok(text.substr(b, e - b));
      for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

/// Hashing bag-of-words embedding, L2-normalized. Text without tokens maps
/// to the zero vector.
inline Embedding default_embed(const std::string& text, std::size_t dim = kDefaultEmbeddingDim) {
  Embedding v(dim, 0.0);
  for (const auto& tok : word_tokens(text)) v[fnv1a64(tok) % dim] += 1.0;
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

inline EmbedFn default_embedder(std::size_t dim = kDefaultEmbeddingDim) {
  return [dim](const std::string& text) { return default_embed(text, dim); };
}

inline bool is_zero_vector(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

/// 1 - cos(a, b), clamped to [0, 2]. Exactly equal vectors give exactly 0.
/// Returns +inf when either side is the zero vector.
inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("cosine_distance: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  bool equal = true;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
    if (a[i] != b[i]) equal = false;
  }
  if (na == 0.0 || nb == 0.0) return std::numeric_limits<double>::infinity();
  if (equal) return 0.0;
  const double d = 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(d, 0.0, 2.0);
}

/// Average-linkage agglomerative clustering under cosine distance.
///
/// Merging continues while the closest pair of clusters is within
/// `threshold`. Ties go to the lexicographically lowest (i, j) slot pair.
/// Zero vectors never merge. Clusters are numbered by first occurrence and
/// represented by their lowest sample index.
inline ClusterAssignment cluster_embeddings(const std::vector<Embedding>& vectors, double threshold) {
  const std::size_t n = vectors.size();
  if (n == 0) throw DomainError("cluster_embeddings: no vectors");
  if (!(threshold >= 0.0 && threshold <= 2.0)) {
    throw DomainError("cluster_embeddings: threshold must lie in [0,2]");
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, inf));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dist[i][j] = dist[j][i] = cosine_distance(vectors[i], vectors[j]);
    }
  }

  // slot -> member count; slot of each sample; active flags.
  std::vector<std::size_t> size(n, 1);
  std::vector<std::size_t> slot_of(n);
  std::vector<bool> active(n, true);
  for (std::size_t i = 0; i < n; ++i) slot_of[i] = i;

  while (true) {
    double best = inf;
    std::size_t bi = n, bj = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!active[j]) continue;
        if (dist[i][j] < best) {
          best = dist[i][j];
          bi = i;
          bj = j;
        }
      }
    }
    if (bi == n || best > threshold) break;
    // Lance-Williams update for average linkage; j folds into i.
    const double wi = static_cast<double>(size[bi]);
    const double wj = static_cast<double>(size[bj]);
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == bi || k == bj) continue;
      const double d = (wi * dist[bi][k] + wj * dist[bj][k]) / (wi + wj);
      dist[bi][k] = dist[k][bi] = d;
    }
    size[bi] += size[bj];
    active[bj] = false;
    for (std::size_t s = 0; s < n; ++s) {
      if (slot_of[s] == bj) slot_of[s] = bi;
    }
  }

  ClusterAssignment out;
  out.cluster_of_sample.assign(n, 0);
  std::vector<std::size_t> label_of_slot(n, n);
  std::vector<std::size_t> counts;
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t& label = label_of_slot[slot_of[s]];
    if (label == n) {
      label = counts.size();
      counts.push_back(0);
      out.representatives.push_back(s);
    }
    out.cluster_of_sample[s] = label;
    ++counts[label];
  }
  for (std::size_t c : counts) {
    out.cluster_masses.push_back(static_cast<double>(c) / static_cast<double>(n));
  }
  return out;
}

inline double semantic_entropy(const ClusterAssignment& assignment) {
  return entropy_nats(assignment.cluster_masses);
}

struct SemanticEntropyResult {
  double entropy = 0.0;
  ClusterAssignment assignment;
};

inline SemanticEntropyResult semantic_entropy_of_record(const GenerationRecord& record,
                                                       const EmbedFn& embed,
                                                       double threshold = kDefaultClusterThreshold) {
  if (record.samples.size() < 2) {
    throw CapabilityError("semantic entropy requires multiple generations");
  }
  std::vector<Embedding> vectors;
  vectors.reserve(record.samples.size());
  for (const auto& s : record.samples) {
    vectors.push_back(s.embedding ? *s.embedding : embed(s.text));
  }
  SemanticEntropyResult r;
  r.assignment = cluster_embeddings(vectors, threshold);
  r.entropy = semantic_entropy(r.assignment);
  return r;
}

}  // namespace hallu

#endif  // HALLU_SEMANTIC_HPP
