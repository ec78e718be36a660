#ifndef HALLU_UNCERTAINTY_HPP
#define HALLU_UNCERTAINTY_HPP

// Token-level and sample-level uncertainty estimators. All entropies are in nats.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <vector>

#include "hallu/errors.hpp"
#include "hallu/records.hpp"

namespace hallu {

struct EntropyReport {
  std::vector<double> per_position;
  double mean = 0.0;
  double max = 0.0;
};

struct DisagreementReport {
  std::vector<double> mean_vector;
  std::vector<double> per_class_variance;
  double variance = 0.0;  // mean of per_class_variance
};

/// Shannon entropy of a probability vector, with 0 log 0 = 0.
inline double entropy_nats(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

inline double token_entropy(const TokenDistribution& dist) {
  if (dist.probs.empty()) throw DomainError("token_entropy: empty distribution");
  return entropy_nats(dist.probs);
}

inline EntropyReport sequence_entropy_profile(const Sample& sample) {
  if (!sample.token_dists || sample.token_dists->empty()) {
    throw CapabilityError("distribution-level data unavailable for this sample");
  }
  EntropyReport r;
  r.per_position.reserve(sample.token_dists->size());
  for (const auto& d : *sample.token_dists) r.per_position.push_back(token_entropy(d));
  double sum = 0.0;
  for (double h : r.per_position) {
    sum += h;
    r.max = std::max(r.max, h);
  }
  r.mean = std::min(sum / static_cast<double>(r.per_position.size()), r.max);
  return r;
}

/// Plug-in (maximum-likelihood) entropy of the empirical label frequencies.
inline double empirical_label_entropy(std::span<const std::string> labels) {
  if (labels.empty()) throw DomainError("empirical_label_entropy: no labels");
  std::map<std::string_view, std::size_t> counts;
  for (const auto& l : labels) ++counts[l];
  std::vector<double> freqs;
  freqs.reserve(counts.size());
  const double n = static_cast<double>(labels.size());
  for (const auto& [label, c] : counts) freqs.push_back(static_cast<double>(c) / n);
  return entropy_nats(freqs);
}

inline DisagreementReport ensemble_disagreement(const std::vector<std::vector<double>>& prob_vectors) {
  if (prob_vectors.size() < 2) throw DomainError("ensemble_disagreement: need at least 2 vectors");
  const std::size_t dim = prob_vectors.front().size();
  if (dim == 0) throw DomainError("ensemble_disagreement: empty vectors");
  for (const auto& v : prob_vectors) {
    if (v.size() != dim) throw DomainError("ensemble_disagreement: dimension mismatch");
    double s = 0.0;
    for (double p : v) s += p;
    if (std::abs(s - 1.0) > 1e-6) throw DomainError("ensemble_disagreement: vector does not sum to 1");
  }
  const double m = static_cast<double>(prob_vectors.size());
  DisagreementReport r;
  r.mean_vector.assign(dim, 0.0);
  r.per_class_variance.assign(dim, 0.0);
  // Work in offsets from the first vector so identical inputs give exactly 0.
  const auto& base = prob_vectors.front();
  std::vector<double> shift(dim, 0.0);
  for (const auto& v : prob_vectors) {
    for (std::size_t i = 0; i < dim; ++i) shift[i] += v[i] - base[i];
  }
  for (double& x : shift) x /= m;
  for (const auto& v : prob_vectors) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = (v[i] - base[i]) - shift[i];
      r.per_class_variance[i] += d * d;
    }
  }
  for (double& x : r.per_class_variance) x /= m;
  for (std::size_t i = 0; i < dim; ++i) r.mean_vector[i] = base[i] + shift[i];
  for (double x : r.per_class_variance) r.variance += x;
  r.variance /= static_cast<double>(dim);
  return r;
}

namespace detail {

inline std::optional<double> confidence_from_match(const std::string& number, bool percent) {
  double x = 0.0;
  try {
    x = std::stod(number);
  } catch (const std::exception&) {
    return std::nullopt;
  }
  if (percent) x /= 100.0;
  if (x < 0.0 || x > 1.0) return std::nullopt;
  return x;
}

}  // namespace detail

/// Extracts a verbalized confidence. Recognized forms, tried in order:
/// `Confidence: 0.7`, `confidence <few words> 70%`, and a trailing `(0.7)`.
inline std::optional<double> parse_self_declared_confidence(const std::string& text) {
  static const std::regex labelled(
      R"(confidence\s*[:=]\s*([0-9]+(?:\.[0-9]+)?|\.[0-9]+)\s*(%)?)", std::regex::icase);
  static const std::regex loose(
      R"(confidence\b[^0-9\n]{0,40}?([0-9]+(?:\.[0-9]+)?|\.[0-9]+)\s*(%)?)", std::regex::icase);
  static const std::regex trailing(
      R"(\(\s*([0-9]+(?:\.[0-9]+)?|\.[0-9]+)\s*(%)?\s*\)[\s.!]*$)");

  for (const std::regex* re : {&labelled, &loose, &trailing}) {
    std::smatch m;
    if (std::regex_search(text, m, *re)) {
      if (auto c = detail::confidence_from_match(m[1].str(), m[2].matched)) return c;
    }
  }
  return std::nullopt;
}

}  // namespace hallu

#endif  // HALLU_UNCERTAINTY_HPP
