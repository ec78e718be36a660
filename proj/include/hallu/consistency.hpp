#ifndef HALLU_CONSISTENCY_HPP
#define HALLU_CONSISTENCY_HPP

// Self-consistency consensus, cross-paraphrase consistency, and reasoning/answer
// entropy decomposition over sampled generations.

#include <algorithm>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hallu/errors.hpp"
#include "hallu/records.hpp"
#include "hallu/semantic.hpp"

namespace hallu {

struct ConsensusResult {
  std::string consensus_answer;
  double support = 0.0;
  std::vector<std::size_t> dissenters;
  ClusterAssignment assignment;
};

namespace detail {

inline const std::string& answer_or_text(const Sample& s) { return s.answer ? *s.answer : s.text; }

inline ClusterAssignment cluster_texts(const std::vector<std::string>& texts, const EmbedFn& embed,
                                       double threshold) {
  std::vector<Embedding> vecs;
  vecs.reserve(texts.size());
  for (const auto& t : texts) vecs.push_back(embed(t));
  return cluster_embeddings(vecs, threshold);
}

/// Index of the heaviest cluster; ties go to the lexicographically smallest
/// representative text.
inline std::size_t winning_cluster(const ClusterAssignment& a, const std::vector<std::string>& texts) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < a.num_clusters(); ++k) {
    const double mk = a.cluster_masses[k];
    const double mb = a.cluster_masses[best];
    if (mk > mb || (mk == mb && texts[a.representatives[k]] < texts[a.representatives[best]])) {
      best = k;
    }
  }
  return best;
}

inline ConsensusResult consensus_over(const std::vector<std::string>& texts, const EmbedFn& embed,
                                      double threshold) {
  ConsensusResult r;
  r.assignment = cluster_texts(texts, embed, threshold);
  const std::size_t win = winning_cluster(r.assignment, texts);
  r.consensus_answer = texts[r.assignment.representatives[win]];
  r.support = r.assignment.cluster_masses[win];
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (r.assignment.cluster_of_sample[i] != win) r.dissenters.push_back(i);
  }
  return r;
}

}  // namespace detail

/// Majority answer across samples. Uses each sample's `answer` when present,
/// otherwise its full text.
inline ConsensusResult self_consistency_consensus(const GenerationRecord& record, const EmbedFn& embed,
                                                  double threshold = kDefaultClusterThreshold) {
  if (record.samples.size() < 2) {
    throw CapabilityError("self-consistency requires at least 2 samples");
  }
  std::vector<std::string> texts;
  texts.reserve(record.samples.size());
  for (const auto& s : record.samples) texts.push_back(detail::answer_or_text(s));
  return detail::consensus_over(texts, embed, threshold);
}

struct IntrinsicConsistency {
  double agreement = 0.0;
  std::vector<std::pair<std::string, std::string>> contradictions;
  std::vector<std::string> answers;  // one reduced answer per record
};

/// Agreement across paraphrased variants of one query. Each record is first
/// reduced to its own consensus answer (or its single sample).
inline IntrinsicConsistency intrinsic_consistency(const std::vector<GenerationRecord>& records,
                                                  const EmbedFn& embed,
                                                  double threshold = kDefaultClusterThreshold) {
  if (records.size() < 2) throw CapabilityError("intrinsic consistency requires at least 2 records");
  IntrinsicConsistency out;
  for (const auto& r : records) {
    if (r.samples.empty()) throw DomainError("record '" + r.id + "' has no samples");
    out.answers.push_back(r.samples.size() >= 2
                              ? self_consistency_consensus(r, embed, threshold).consensus_answer
                              : detail::answer_or_text(r.samples.front()));
  }
  const auto a = detail::cluster_texts(out.answers, embed, threshold);
  out.agreement = *std::max_element(a.cluster_masses.begin(), a.cluster_masses.end());
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t j = i + 1; j < records.size(); ++j) {
      if (a.cluster_of_sample[i] != a.cluster_of_sample[j]) {
        out.contradictions.emplace_back(records[i].id, records[j].id);
      }
    }
  }
  return out;
}

struct RaceThresholds {
  double reasoning_cluster_threshold = kDefaultClusterThreshold;
  double answer_cluster_threshold = kDefaultClusterThreshold;
  double flag_answer_support = 0.8;
  double flag_reasoning_entropy = 0.5;
  double flag_mi_max = 0.2;
};

struct RaceReport {
  double h_reasoning = 0.0;
  double h_answer = 0.0;
  double h_joint = 0.0;
  double mutual_information = 0.0;      // clamped at 0
  double mutual_information_raw = 0.0;  // h_reasoning + h_answer - h_joint
  double answer_support = 0.0;
  bool flag_right_answer_wrong_reasoning = false;
};

/// Plug-in entropies over the reasoning-cluster x answer-cluster contingency
/// table. The flag marks a stable answer reached through scattered reasoning.
inline RaceReport race_metrics(const GenerationRecord& record, const EmbedFn& embed,
                               const RaceThresholds& th = {}) {
  if (record.samples.size() < 2) throw CapabilityError("RACE requires at least 2 samples");
  std::vector<std::string> reasonings, answers;
  for (const auto& s : record.samples) {
    if (!s.reasoning || !s.answer) {
      throw CapabilityError("RACE requires reasoning and answer on every sample");
    }
    reasonings.push_back(*s.reasoning);
    answers.push_back(*s.answer);
  }
  const auto rc = detail::cluster_texts(reasonings, embed, th.reasoning_cluster_threshold);
  const auto ac = detail::cluster_texts(answers, embed, th.answer_cluster_threshold);

  std::map<std::pair<std::size_t, std::size_t>, std::size_t> joint;
  for (std::size_t i = 0; i < record.samples.size(); ++i) {
    ++joint[{rc.cluster_of_sample[i], ac.cluster_of_sample[i]}];
  }
  std::vector<double> joint_masses;
  for (const auto& [cell, count] : joint) {
    joint_masses.push_back(static_cast<double>(count) / static_cast<double>(record.samples.size()));
  }

  RaceReport r;
  r.h_reasoning = semantic_entropy(rc);
  r.h_answer = semantic_entropy(ac);
  r.h_joint = entropy_nats(joint_masses);
  r.mutual_information_raw = r.h_reasoning + r.h_answer - r.h_joint;
  r.mutual_information = std::max(r.mutual_information_raw, 0.0);
  r.answer_support = *std::max_element(ac.cluster_masses.begin(), ac.cluster_masses.end());
  r.flag_right_answer_wrong_reasoning = r.answer_support >= th.flag_answer_support &&
                                        r.h_reasoning >= th.flag_reasoning_entropy &&
                                        r.mutual_information <= th.flag_mi_max;
  return r;
}

}  // namespace hallu

#endif  // HALLU_CONSISTENCY_HPP
