#ifndef HALLU_CORPUS_HPP
#define HALLU_CORPUS_HPP

// Extraction of calibration training pairs from labelled corpora.
//
// A record contributes when its first sample carries a first-position token
// distribution and its ground truth names a correct answer among the labels.
// The distribution's log-probabilities serve as logits (softmax(log p) = p).

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "hallu/calibration.hpp"
#include "hallu/records.hpp"

namespace hallu {

inline constexpr double kLogProbFloor = -27.631021115928547;  // ln(1e-12)

struct LabelledDistribution {
  std::vector<double> logits;
  std::size_t label = 0;
  std::size_t predicted = 0;
  double confidence = 0.0;
};

inline std::optional<LabelledDistribution> labelled_distribution(const GenerationRecord& r) {
  if (r.samples.empty() || !r.ground_truth || !r.ground_truth->correct_answer) return std::nullopt;
  const auto& dists = r.samples.front().token_dists;
  if (!dists || dists->empty()) return std::nullopt;
  const TokenDistribution& d = dists->front();
  auto it = std::find(d.labels.begin(), d.labels.end(), *r.ground_truth->correct_answer);
  if (it == d.labels.end() || d.probs.empty()) return std::nullopt;
  LabelledDistribution out;
  out.label = static_cast<std::size_t>(it - d.labels.begin());
  for (double p : d.probs) out.logits.push_back(p > 0.0 ? std::max(std::log(p), kLogProbFloor) : kLogProbFloor);
  out.predicted = static_cast<std::size_t>(std::max_element(d.probs.begin(), d.probs.end()) - d.probs.begin());
  out.confidence = d.probs[out.predicted];
  return out;
}

struct TemperatureData {
  std::vector<std::vector<double>> logits;
  std::vector<std::size_t> labels;
};

inline TemperatureData temperature_pairs(const std::vector<GenerationRecord>& records) {
  TemperatureData out;
  for (const auto& r : records) {
    if (auto ld = labelled_distribution(r)) {
      out.logits.push_back(std::move(ld->logits));
      out.labels.push_back(ld->label);
    }
  }
  return out;
}

/// (top probability, top-1 correct) per labelled record.
inline std::vector<ConfidencePair> confidence_pairs(const std::vector<GenerationRecord>& records) {
  std::vector<ConfidencePair> out;
  for (const auto& r : records) {
    if (auto ld = labelled_distribution(r)) out.push_back({ld->confidence, ld->predicted == ld->label});
  }
  return out;
}

/// Same pairs rescored after temperature scaling.
inline std::vector<ConfidencePair> confidence_pairs(const std::vector<GenerationRecord>& records,
                                                    double temperature) {
  std::vector<ConfidencePair> out;
  for (const auto& r : records) {
    if (auto ld = labelled_distribution(r)) {
      const auto p = apply_temperature(ld->logits, temperature);
      const auto top = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
      out.push_back({p[top], top == ld->label});
    }
  }
  return out;
}

inline std::vector<ScoredOutcome> isotonic_pairs(const std::vector<GenerationRecord>& records) {
  std::vector<ScoredOutcome> out;
  for (const auto& p : confidence_pairs(records)) out.push_back({p.confidence, p.correct});
  return out;
}

}  // namespace hallu

#endif  // HALLU_CORPUS_HPP
