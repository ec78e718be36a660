#ifndef HALLU_MOCKGEN_HPP
#define HALLU_MOCKGEN_HPP

// Seeded synthetic corpora with ground-truth failure labels.
//
// Every record carries one next-token distribution softmax(z) over option
// labels; its true label is drawn from softmax(z / true_temperature), so a
// temperature fit on the corpus recovers true_temperature. Injected failures
// are generated well clear of the default router thresholds:
//   model   - near-uniform distribution (>= 1.2 nats) and split answers
//   context - unanimous answers reached through lexically disjoint reasoning
//   data    - a claim contradicting the generated fact store

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hallu/calibration.hpp"
#include "hallu/errors.hpp"
#include "hallu/grounding.hpp"
#include "hallu/records.hpp"
#include "hallu/uncertainty.hpp"

namespace hallu {

struct MockSpec {
  std::size_t n_records = 100;
  std::size_t samples_per_record = 5;
  double true_temperature = 1.0;
  std::map<FailureClass, double> inject_rates;
  std::size_t vocab_size = 4;
  std::uint64_t seed = 0;
};

inline void validate_mock_spec(const MockSpec& s) {
  if (s.n_records < 1) throw DomainError("mock spec: n_records must be >= 1");
  if (s.samples_per_record < 2) throw DomainError("mock spec: samples_per_record must be >= 2");
  if (!(s.true_temperature > 0.0 && s.true_temperature <= 20.0)) {
    throw DomainError("mock spec: true_temperature must lie in (0, 20]");
  }
  // ln 3 < 1.2, so fewer than 4 options cannot reach the model-class entropy floor.
  if (s.vocab_size < 4) throw DomainError("mock spec: vocab_size must be >= 4");
  double total = 0.0;
  for (const auto& [cls, rate] : s.inject_rates) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw DomainError("mock spec: inject rates must lie in [0,1]");
    total += rate;
  }
  if (total > 1.0 + 1e-12) throw DomainError("mock spec: inject rates sum above 1");
}

inline MockSpec mock_spec_from_json(const nlohmann::json& j) {
  MockSpec s;
  try {
    s.n_records = j.value("n_records", s.n_records);
    s.samples_per_record = j.value("samples_per_record", s.samples_per_record);
    s.true_temperature = j.value("true_temperature", s.true_temperature);
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    s.seed = j.value("seed", s.seed);
    if (auto it = j.find("inject_rates"); it != j.end()) {
      for (auto e = it->begin(); e != it->end(); ++e) {
        auto cls = failure_class_from_string(e.key());
        if (!cls) throw DomainError("mock spec: unknown failure class '" + e.key() + "'");
        s.inject_rates[*cls] = e->get<double>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("mock spec: ") + e.what());
  }
  validate_mock_spec(s);
  return s;
}

inline nlohmann::json to_json(const MockSpec& s) {
  nlohmann::json rates = nlohmann::json::object();
  for (const auto& [cls, r] : s.inject_rates) rates[to_string(cls)] = r;
  return {{"n_records", s.n_records},       {"samples_per_record", s.samples_per_record},
          {"true_temperature", s.true_temperature}, {"inject_rates", rates},
          {"vocab_size", s.vocab_size},     {"seed", s.seed}};
}

namespace detail {

// mt19937_64 is fully specified; the distributions below are written out so
// corpora are identical across standard library implementations.
class MockRng {
 public:
  explicit MockRng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t index(std::size_t n) { return std::min(static_cast<std::size_t>(uniform() * n), n - 1); }

  double normal(double sd) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::size_t categorical(const std::vector<double>& p) {
    const double u = uniform();
    double cum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      cum += p[i];
      if (u < cum) return i;
    }
    return p.size() - 1;
  }

 private:
  std::mt19937_64 engine_;
};

inline constexpr double kCleanEntropyCeiling = 0.7;
inline constexpr double kModelEntropyFloor = 1.2;
inline constexpr int kMaxRedraws = 10000;

inline std::string option_label(std::size_t k) { return "opt" + std::to_string(k); }

inline double round2(double x) { return std::round(x * 100.0) / 100.0; }

inline std::vector<double> draw_logits(MockRng& rng, std::size_t vocab, bool high_entropy) {
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    std::vector<double> z(vocab);
    if (high_entropy) {
      for (double& x : z) x = rng.normal(0.25);
    } else {
      for (double& x : z) x = rng.normal(0.5);
      const double margin = rng.uniform(3.0, 6.0) + std::log(static_cast<double>(vocab - 1) / 3.0);
      z[rng.index(vocab)] += margin;
    }
    const double h = entropy_nats(apply_temperature(z, 1.0));
    if (high_entropy ? h >= kModelEntropyFloor : h <= kCleanEntropyCeiling) return z;
  }
  throw DomainError("mockgen: could not draw logits with the required entropy");
}

struct MockOutput {
  std::vector<GenerationRecord> corpus;
  FactStore store;
};

inline MockOutput generate(const MockSpec& spec) {
  validate_mock_spec(spec);
  MockRng rng(spec.seed);
  MockOutput out;
  std::vector<std::string> labels;
  for (std::size_t k = 0; k < spec.vocab_size; ++k) labels.push_back(option_label(k));

  auto rate = [&](FailureClass c) {
    auto it = spec.inject_rates.find(c);
    return it == spec.inject_rates.end() ? 0.0 : it->second;
  };

  for (std::size_t i = 0; i < spec.n_records; ++i) {
    std::optional<FailureClass> injected;
    {
      const double u = rng.uniform();
      double cum = 0.0;
      for (FailureClass c : {FailureClass::model, FailureClass::context, FailureClass::data}) {
        cum += rate(c);
        if (u < cum) {
          injected = c;
          break;
        }
      }
    }
    const bool is_model = injected == FailureClass::model;
    const auto z = draw_logits(rng, spec.vocab_size, is_model);
    const auto probs = apply_temperature(z, 1.0);
    const std::size_t truth = rng.categorical(apply_temperature(z, spec.true_temperature));
    const auto ranked = [&] {
      std::vector<std::size_t> idx(spec.vocab_size);
      for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
      return idx;
    }();
    const double true_value = round2(rng.uniform(0.5, 10.0));
    const double wrong_value = round2(true_value + rng.uniform(0.5, 2.0));

    GenerationRecord r;
    r.id = "mock-" + std::to_string(i);
    r.prompt = "Q" + std::to_string(i) + ": which option does the report support, and what is metric " +
               std::to_string(i) + "?";
    TokenDistribution dist{labels, probs, nlohmann::json::object()};
    for (std::size_t j = 0; j < spec.samples_per_record; ++j) {
      const std::size_t choice = is_model ? ranked[j % 3] : ranked[0];
      Sample s;
      s.answer = labels[choice];
      s.text = labels[choice];
      s.token_dists = std::vector<TokenDistribution>{dist};
      s.token_logprobs = std::vector<double>{std::log(probs[choice])};
      s.self_confidence = round2(probs[choice]);
      if (injected == FailureClass::context) {
        s.reasoning = "route" + std::to_string(j) + " evidence" + std::to_string(j) + " step" + std::to_string(j);
      } else if (is_model) {
        s.reasoning = labels[choice] + "-rationale";
      } else {
        s.reasoning = "the report states " + labels[choice];
      }
      r.samples.push_back(std::move(s));
    }
    const std::string key = "metric_" + std::to_string(i);
    const double claimed = injected == FailureClass::data ? wrong_value : true_value;
    r.reference_claims = std::vector<Claim>{{key, claimed, std::string("%"), nlohmann::json::object()}};
    out.store.insert(key, FactEntry{true_value, std::string("%"), std::nullopt});

    GroundTruthLabel gt;
    gt.is_hallucinated = injected.has_value();
    gt.failure_class = injected;
    gt.correct_answer = labels[truth];
    r.ground_truth = gt;
    out.corpus.push_back(std::move(r));
  }
  return out;
}

}  // namespace detail

inline std::vector<GenerationRecord> generate_corpus(const MockSpec& spec) {
  return detail::generate(spec).corpus;
}

inline FactStore generate_fact_store(const MockSpec& spec) { return detail::generate(spec).store; }

}  // namespace hallu

#endif  // HALLU_MOCKGEN_HPP
