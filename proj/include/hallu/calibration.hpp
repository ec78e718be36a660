#ifndef HALLU_CALIBRATION_HPP
#define HALLU_CALIBRATION_HPP

// Calibration metrics and post-hoc calibrators.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "hallu/errors.hpp"
#include "hallu/uncertainty.hpp"

namespace hallu {

// ---- expected calibration error --------------------------------------------

struct ConfidencePair {
  double confidence = 0.0;
  bool correct = false;
};

struct BinTable {
  std::vector<double> edges;  // M + 1 values, edges[0] = 0, edges[M] = 1
  std::vector<std::size_t> counts;
  std::vector<double> accuracy;         // 0 for empty bins
  std::vector<double> mean_confidence;  // 0 for empty bins

  std::size_t num_bins() const { return counts.size(); }
};

struct EceResult {
  double ece = 0.0;
  BinTable bins;
};

/// Bin index for equal-width bins on [0,1]: right-open, last bin closed.
inline std::size_t bin_index(double confidence, const std::vector<double>& edges) {
  const std::size_t m = edges.size() - 1;
  auto idx = static_cast<std::size_t>(std::floor(confidence * static_cast<double>(m)));
  idx = std::min(idx, m - 1);
  // floor(c * M) can land one bin off near an edge; settle against the stored edges.
  while (idx > 0 && confidence < edges[idx]) --idx;
  while (idx + 1 < m && confidence >= edges[idx + 1]) ++idx;
  return idx;
}

inline EceResult compute_ece(std::span<const ConfidencePair> pairs, std::size_t num_bins = 10) {
  if (pairs.empty()) throw DomainError("compute_ece: no predictions");
  if (num_bins == 0) throw DomainError("compute_ece: bin count must be >= 1");
  EceResult r;
  BinTable& t = r.bins;
  t.edges.resize(num_bins + 1);
  for (std::size_t m = 0; m <= num_bins; ++m) {
    t.edges[m] = static_cast<double>(m) / static_cast<double>(num_bins);
  }
  t.counts.assign(num_bins, 0);
  t.accuracy.assign(num_bins, 0.0);
  t.mean_confidence.assign(num_bins, 0.0);
  for (const auto& p : pairs) {
    if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) {
      throw DomainError("compute_ece: confidence outside [0,1]");
    }
    const std::size_t b = bin_index(p.confidence, t.edges);
    ++t.counts[b];
    t.accuracy[b] += p.correct ? 1.0 : 0.0;
    t.mean_confidence[b] += p.confidence;
  }
  const double n = static_cast<double>(pairs.size());
  for (std::size_t b = 0; b < num_bins; ++b) {
    if (t.counts[b] == 0) continue;
    const double c = static_cast<double>(t.counts[b]);
    t.accuracy[b] /= c;
    t.mean_confidence[b] /= c;
    r.ece += (c / n) * std::abs(t.accuracy[b] - t.mean_confidence[b]);
  }
  return r;
}

// ---- temperature scaling -----------------------------------------------------

struct TemperatureModel {
  double temperature = 1.0;
  double fit_nll = 0.0;  // mean nats per example at `temperature`
  std::size_t n_fit = 0;
};

struct TemperatureFitOptions {
  double lower = 0.05;
  double upper = 20.0;
  double tolerance = 1e-4;
};

inline void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw DomainError("temperature must be positive and finite");
}

/// log softmax(z / T) evaluated with max subtraction.
inline std::vector<double> log_softmax(std::span<const double> logits, double temperature) {
  check_temperature(temperature);
  if (logits.empty()) throw DomainError("log_softmax: empty logits");
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) {
    if (!std::isfinite(z)) throw DomainError("logits must be finite");
    mx = std::max(mx, z / temperature);
  }
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z / temperature - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out;
  out.reserve(logits.size());
  for (double z : logits) out.push_back(z / temperature - lse);
  return out;
}

inline std::vector<double> apply_temperature(std::span<const double> logits, double temperature) {
  auto lp = log_softmax(logits, temperature);
  double sum = 0.0;
  for (double& x : lp) {
    x = std::exp(x);
    sum += x;
  }
  for (double& x : lp) x /= sum;
  return lp;
}

/// Mean negative log-likelihood of `labels` under softmax(z / T).
inline double mean_nll(const std::vector<std::vector<double>>& logit_sets,
                       std::span<const std::size_t> labels, double temperature) {
  double total = 0.0;
  for (std::size_t i = 0; i < logit_sets.size(); ++i) {
    const auto lp = log_softmax(logit_sets[i], temperature);
    total -= lp[labels[i]];
  }
  return total / static_cast<double>(logit_sets.size());
}

/// Golden-section search over ln T for the NLL-minimizing temperature.
inline TemperatureModel fit_temperature(const std::vector<std::vector<double>>& logit_sets,
                                        std::span<const std::size_t> labels,
                                        const TemperatureFitOptions& opt = {}) {
  if (logit_sets.size() != labels.size()) {
    throw DomainError("fit_temperature: logits and labels differ in length");
  }
  if (logit_sets.size() < 2) throw FitError("fit_temperature: need at least 2 examples");
  if (!(opt.lower > 0.0 && opt.lower < opt.upper) || !(opt.tolerance > 0.0)) {
    throw DomainError("fit_temperature: invalid search bounds");
  }
  bool informative = false;
  for (std::size_t i = 0; i < logit_sets.size(); ++i) {
    const auto& z = logit_sets[i];
    if (labels[i] >= z.size()) throw DomainError("fit_temperature: label index out of range");
    if (std::adjacent_find(z.begin(), z.end(), std::not_equal_to<>()) != z.end()) informative = true;
  }
  if (!informative) throw FitError("fit_temperature: every logit vector is constant");

  auto nll_at_log = [&](double log_t) { return mean_nll(logit_sets, labels, std::exp(log_t)); };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(opt.lower);
  double b = std::log(opt.upper);
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = nll_at_log(c);
  double fd = nll_at_log(d);
  while (std::exp(b) - std::exp(a) > opt.tolerance) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = nll_at_log(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = nll_at_log(d);
    }
  }
  TemperatureModel m;
  m.n_fit = logit_sets.size();
  m.temperature = std::exp((a + b) / 2.0);
  m.fit_nll = mean_nll(logit_sets, labels, m.temperature);
  // The search assumes unimodality; never report something worse than T = 1.
  if (opt.lower <= 1.0 && opt.upper >= 1.0) {
    const double nll_one = mean_nll(logit_sets, labels, 1.0);
    if (nll_one < m.fit_nll) {
      m.temperature = 1.0;
      m.fit_nll = nll_one;
    }
  }
  return m;
}

inline double calibrated_token_entropy(std::span<const double> logits, double temperature) {
  return entropy_nats(apply_temperature(logits, temperature));
}

/// Product over positions of the temperature-scaled probability of the chosen token.
inline double calibrated_sequence_probability(const std::vector<std::vector<double>>& per_position_logits,
                                              std::span<const std::size_t> chosen, double temperature) {
  if (per_position_logits.empty()) {
    throw CapabilityError("full per-position distributions are required for re-scaling");
  }
  if (chosen.size() != per_position_logits.size()) {
    throw DomainError("calibrated_sequence_probability: one chosen index per position required");
  }
  double log_p = 0.0;
  for (std::size_t t = 0; t < per_position_logits.size(); ++t) {
    if (chosen[t] >= per_position_logits[t].size()) {
      throw DomainError("calibrated_sequence_probability: chosen index out of range");
    }
    log_p += log_softmax(per_position_logits[t], temperature)[chosen[t]];
  }
  return std::exp(log_p);
}

/// Mean of temperature-scaled softmaxes over stochastic passes.
inline std::vector<double> mc_calibrated_mean(const std::vector<std::vector<double>>& pass_logits,
                                              double temperature) {
  if (pass_logits.empty()) throw DomainError("mc_calibrated_mean: no passes");
  const std::size_t dim = pass_logits.front().size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& z : pass_logits) {
    if (z.size() != dim) throw DomainError("mc_calibrated_mean: dimension mismatch");
    const auto p = apply_temperature(z, temperature);
    for (std::size_t i = 0; i < dim; ++i) mean[i] += p[i];
  }
  for (double& x : mean) x /= static_cast<double>(pass_logits.size());
  return mean;
}

// ---- isotonic regression -------------------------------------------------------

struct ScoredOutcome {
  double score = 0.0;
  bool outcome = false;
};

struct IsotonicModel {
  std::vector<double> breakpoints;  // first score of each pooled block
  std::vector<double> values;
  double sse = 0.0;  // training squared error of the fit
};

/// Least-squares monotone fit by pool-adjacent-violators. Tied scores enter
/// as one weighted block.
inline IsotonicModel fit_isotonic(std::span<const ScoredOutcome> pairs) {
  if (pairs.empty()) throw DomainError("fit_isotonic: no data");
  std::vector<ScoredOutcome> sorted(pairs.begin(), pairs.end());
  for (const auto& p : sorted) {
    if (!std::isfinite(p.score)) throw DomainError("fit_isotonic: non-finite score");
  }
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScoredOutcome& a, const ScoredOutcome& b) { return a.score < b.score; });

  struct Block {
    double start;
    double sum;
    double weight;
  };
  std::vector<Block> stack;
  for (std::size_t i = 0; i < sorted.size();) {
    Block b{sorted[i].score, 0.0, 0.0};
    std::size_t j = i;
    for (; j < sorted.size() && sorted[j].score == sorted[i].score; ++j) {
      b.sum += sorted[j].outcome ? 1.0 : 0.0;
      b.weight += 1.0;
    }
    i = j;
    stack.push_back(b);
    while (stack.size() >= 2) {
      Block& prev = stack[stack.size() - 2];
      const Block& cur = stack.back();
      if (prev.sum / prev.weight <= cur.sum / cur.weight) break;
      prev.sum += cur.sum;
      prev.weight += cur.weight;
      stack.pop_back();
    }
  }

  IsotonicModel m;
  for (const auto& b : stack) {
    m.breakpoints.push_back(b.start);
    m.values.push_back(b.sum / b.weight);
  }
  for (const auto& p : sorted) {
    auto it = std::upper_bound(m.breakpoints.begin(), m.breakpoints.end(), p.score);
    const double f = m.values[static_cast<std::size_t>(it - m.breakpoints.begin()) - 1];
    const double e = (p.outcome ? 1.0 : 0.0) - f;
    m.sse += e * e;
  }
  return m;
}

/// Step-function lookup, clamped to the first/last fitted value outside the
/// training range.
inline double apply_isotonic(const IsotonicModel& model, double score) {
  if (model.values.empty()) throw DomainError("apply_isotonic: model not fitted");
  auto it = std::upper_bound(model.breakpoints.begin(), model.breakpoints.end(), score);
  if (it == model.breakpoints.begin()) return model.values.front();
  return model.values[static_cast<std::size_t>(it - model.breakpoints.begin()) - 1];
}

// ---- Bayesian aggregation ----------------------------------------------------------

struct CredibleSummary {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
};

/// Percentile with linear interpolation between order statistics
/// (position q * (n - 1) in the sorted sample).
inline double interpolated_percentile(std::span<const double> sorted, double q) {
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline CredibleSummary bayesian_aggregate(std::span<const double> prob_samples, double level = 0.95) {
  if (prob_samples.empty()) throw DomainError("bayesian_aggregate: no samples");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("bayesian_aggregate: level must lie in (0,1)");
  std::vector<double> sorted(prob_samples.begin(), prob_samples.end());
  std::sort(sorted.begin(), sorted.end());
  CredibleSummary s;
  s.level = level;
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  const double tail = (1.0 - level) / 2.0;
  s.lower = interpolated_percentile(sorted, tail);
  s.upper = interpolated_percentile(sorted, 1.0 - tail);
  s.lower = std::min(s.lower, s.mean);
  s.upper = std::max(s.upper, s.mean);
  return s;
}

// ---- multi-pass self-evaluation ------------------------------------------------------

enum class Vote { yes, no, unsure };

inline std::optional<Vote> vote_from_string(std::string_view s) {
  std::string lower(s);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "yes") return Vote::yes;
  if (lower == "no") return Vote::no;
  if (lower == "unsure") return Vote::unsure;
  return std::nullopt;
}

/// Fraction of passes that judged the answer correct; "no" and "unsure"
/// count only toward the denominator.
inline double aggregate_self_evaluation(std::span<const Vote> votes) {
  if (votes.empty()) throw DomainError("aggregate_self_evaluation: no votes");
  const auto yes = std::count(votes.begin(), votes.end(), Vote::yes);
  return static_cast<double>(yes) / static_cast<double>(votes.size());
}

// ---- serialized calibration maps -------------------------------------------------------

using CalibrationMap = std::variant<TemperatureModel, IsotonicModel>;

inline nlohmann::json calibration_map_to_json(const CalibrationMap& map) {
  if (const auto* t = std::get_if<TemperatureModel>(&map)) {
    return {{"kind", "temperature"},
            {"temperature", t->temperature},
            {"fit_nll", t->fit_nll},
            {"n_fit", t->n_fit}};
  }
  const auto& iso = std::get<IsotonicModel>(map);
  return {{"kind", "isotonic"},
          {"breakpoints", iso.breakpoints},
          {"values", iso.values},
          {"sse", iso.sse}};
}

inline CalibrationMap calibration_map_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "temperature") {
    TemperatureModel t;
    t.temperature = j.at("temperature").get<double>();
    check_temperature(t.temperature);
    t.fit_nll = j.value("fit_nll", 0.0);
    t.n_fit = j.value("n_fit", std::size_t{0});
    return t;
  }
  if (kind == "isotonic") {
    IsotonicModel m;
    m.breakpoints = j.at("breakpoints").get<std::vector<double>>();
    m.values = j.at("values").get<std::vector<double>>();
    m.sse = j.value("sse", 0.0);
    if (m.breakpoints.size() != m.values.size() || m.values.empty()) {
      throw LoadError("isotonic map: breakpoints and values must be nonempty and equal length");
    }
    for (std::size_t i = 1; i < m.values.size(); ++i) {
      if (m.breakpoints[i] <= m.breakpoints[i - 1] || m.values[i] < m.values[i - 1]) {
        throw LoadError("isotonic map: breakpoints must increase and values must not decrease");
      }
    }
    return m;
  }
  throw LoadError("unknown calibration map kind '" + kind + "'");
}

}  // namespace hallu

#endif  // HALLU_CALIBRATION_HPP
