#ifndef HALLU_RECORDS_HPP
#define HALLU_RECORDS_HPP

// Data model for generation logs and the JSONL exchange format.
//
// Every object keeps the keys it does not understand in `extra`, so a log
// written by a newer producer survives a parse/write cycle unchanged.

#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include <json.hpp>

#include "hallu/errors.hpp"

namespace hallu {

using json = nlohmann::json;

enum class FailureClass { model, context, data };

inline const char* to_string(FailureClass c) {
  switch (c) {
    case FailureClass::model: return "model";
    case FailureClass::context: return "context";
    case FailureClass::data: return "data";
  }
  return "model";
}

inline std::optional<FailureClass> failure_class_from_string(std::string_view s) {
  if (s == "model") return FailureClass::model;
  if (s == "context") return FailureClass::context;
  if (s == "data") return FailureClass::data;
  return std::nullopt;
}

struct TokenDistribution {
  std::vector<std::string> labels;
  std::vector<double> probs;
  json extra = json::object();

  bool operator==(const TokenDistribution&) const = default;
};

struct Sample {
  std::string text;
  std::optional<std::vector<TokenDistribution>> token_dists;
  std::optional<std::vector<double>> token_logprobs;
  std::optional<std::vector<double>> embedding;
  std::optional<std::string> reasoning;
  std::optional<std::string> answer;
  std::optional<double> self_confidence;
  json extra = json::object();

  bool operator==(const Sample&) const = default;
};

using ClaimValue = std::variant<std::string, double>;

struct Claim {
  std::string key;
  ClaimValue value;
  std::optional<std::string> unit;
  json extra = json::object();

  bool operator==(const Claim&) const = default;
};

struct GroundTruthLabel {
  bool is_hallucinated = false;
  std::optional<FailureClass> failure_class;
  std::optional<std::string> correct_answer;
  json extra = json::object();

  bool operator==(const GroundTruthLabel&) const = default;
};

struct GenerationRecord {
  std::string id;
  std::string prompt;
  std::vector<Sample> samples;
  std::optional<std::vector<Claim>> reference_claims;
  std::optional<GroundTruthLabel> ground_truth;
  json extra = json::object();

  bool operator==(const GenerationRecord&) const = default;
};

struct Diagnostic {
  std::string field;
  std::string reason;

  bool operator==(const Diagnostic&) const = default;
};

namespace detail {

inline constexpr double kProbSumTolerance = 1e-6;

inline void check_distribution(const TokenDistribution& d, const std::string& path,
                               std::vector<Diagnostic>& out) {
  if (d.probs.size() != d.labels.size()) {
    out.push_back({path + ".probs", "length " + std::to_string(d.probs.size()) +
                                        " differs from token_labels length " +
                                        std::to_string(d.labels.size())});
  }
  double sum = 0.0;
  bool in_range = true;
  for (double p : d.probs) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) in_range = false;
    sum += p;
  }
  if (!in_range) out.push_back({path + ".probs", "probability outside [0,1]"});
  if (d.probs.empty() || std::abs(sum - 1.0) > kProbSumTolerance) {
    std::ostringstream os;
    os << "probs sum to " << sum << ", expected 1";
    out.push_back({path + ".probs", os.str()});
  }
  std::unordered_set<std::string> seen;
  for (const auto& l : d.labels) {
    if (!seen.insert(l).second) {
      out.push_back({path + ".token_labels", "duplicate label '" + l + "'"});
      break;
    }
  }
}

}  // namespace detail

/// Checks every type invariant of one record; empty result means valid.
inline std::vector<Diagnostic> validate_record(const GenerationRecord& r) {
  std::vector<Diagnostic> out;
  if (r.id.empty()) out.push_back({"id", "must be nonempty"});
  if (r.samples.empty()) out.push_back({"samples", "at least one sample required"});
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const Sample& s = r.samples[i];
    const std::string base = "samples[" + std::to_string(i) + "]";
    if (s.token_dists) {
      if (s.token_dists->empty()) {
        out.push_back({base + ".token_dists", "present but empty"});
      }
      for (std::size_t k = 0; k < s.token_dists->size(); ++k) {
        detail::check_distribution((*s.token_dists)[k],
                                   base + ".token_dists[" + std::to_string(k) + "]", out);
      }
    }
    if (s.token_logprobs) {
      for (double lp : *s.token_logprobs) {
        if (std::isnan(lp) || lp > 0.0) {
          out.push_back({base + ".token_logprobs", "log-probabilities must be <= 0"});
          break;
        }
      }
    }
    if (s.embedding) {
      for (double v : *s.embedding) {
        if (!std::isfinite(v)) {
          out.push_back({base + ".embedding", "non-finite component"});
          break;
        }
      }
    }
    if (s.self_confidence) {
      double c = *s.self_confidence;
      if (!(c >= 0.0 && c <= 1.0)) {
        out.push_back({base + ".self_confidence", "must lie in [0,1]"});
      }
    }
  }
  if (r.reference_claims) {
    for (std::size_t i = 0; i < r.reference_claims->size(); ++i) {
      const Claim& c = (*r.reference_claims)[i];
      if (c.key.empty()) {
        out.push_back({"reference_claims[" + std::to_string(i) + "].key", "must be nonempty"});
      }
      if (const double* v = std::get_if<double>(&c.value); v && !std::isfinite(*v)) {
        out.push_back({"reference_claims[" + std::to_string(i) + "].value", "non-finite"});
      }
    }
  }
  if (r.ground_truth && r.ground_truth->failure_class && !r.ground_truth->is_hallucinated) {
    out.push_back({"ground_truth.failure_class", "present although is_hallucinated is false"});
  }
  return out;
}

// ---- JSON mapping ---------------------------------------------------------

namespace detail {

inline json take_extra(const json& obj, std::initializer_list<const char*> known) {
  json extra = json::object();
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool is_known = false;
    for (const char* k : known) {
      if (it.key() == k) {
        is_known = true;
        break;
      }
    }
    if (!is_known) extra[it.key()] = it.value();
  }
  return extra;
}

inline void merge_extra(json& obj, const json& extra) {
  for (auto it = extra.begin(); it != extra.end(); ++it) {
    if (!obj.contains(it.key())) obj[it.key()] = it.value();
  }
}

template <class T>
std::optional<T> opt_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  return it->template get<T>();
}

inline const json& require(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw std::invalid_argument(std::string("missing field '") + key + "'");
  return *it;
}

inline void require_object(const json& j, const char* what) {
  if (!j.is_object()) throw std::invalid_argument(std::string(what) + " must be an object");
}

}  // namespace detail

inline json to_json(const TokenDistribution& d) {
  json j = {{"token_labels", d.labels}, {"probs", d.probs}};
  detail::merge_extra(j, d.extra);
  return j;
}

inline TokenDistribution token_distribution_from_json(const json& j) {
  detail::require_object(j, "token_dists entry");
  TokenDistribution d;
  // "labels" is accepted as a shorter spelling on input.
  const char* key = j.contains("token_labels") || !j.contains("labels") ? "token_labels" : "labels";
  d.labels = detail::require(j, key).get<std::vector<std::string>>();
  d.probs = detail::require(j, "probs").get<std::vector<double>>();
  d.extra = detail::take_extra(j, {key, "probs"});
  return d;
}

inline json to_json(const Sample& s) {
  json j = {{"text", s.text}};
  if (s.token_dists) {
    json arr = json::array();
    for (const auto& d : *s.token_dists) arr.push_back(to_json(d));
    j["token_dists"] = std::move(arr);
  }
  if (s.token_logprobs) j["token_logprobs"] = *s.token_logprobs;
  if (s.embedding) j["embedding"] = *s.embedding;
  if (s.reasoning) j["reasoning"] = *s.reasoning;
  if (s.answer) j["answer"] = *s.answer;
  if (s.self_confidence) j["self_confidence"] = *s.self_confidence;
  detail::merge_extra(j, s.extra);
  return j;
}

inline Sample sample_from_json(const json& j) {
  detail::require_object(j, "sample");
  Sample s;
  s.text = detail::require(j, "text").get<std::string>();
  if (auto it = j.find("token_dists"); it != j.end() && !it->is_null()) {
    std::vector<TokenDistribution> dists;
    for (const auto& d : *it) dists.push_back(token_distribution_from_json(d));
    s.token_dists = std::move(dists);
  }
  s.token_logprobs = detail::opt_field<std::vector<double>>(j, "token_logprobs");
  s.embedding = detail::opt_field<std::vector<double>>(j, "embedding");
  s.reasoning = detail::opt_field<std::string>(j, "reasoning");
  s.answer = detail::opt_field<std::string>(j, "answer");
  s.self_confidence = detail::opt_field<double>(j, "self_confidence");
  s.extra = detail::take_extra(j, {"text", "token_dists", "token_logprobs", "embedding",
                                   "reasoning", "answer", "self_confidence"});
  return s;
}

inline json claim_value_to_json(const ClaimValue& v) {
  return std::visit([](const auto& x) { return json(x); }, v);
}

inline ClaimValue claim_value_from_json(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number()) return j.get<double>();
  throw std::invalid_argument("claim value must be a string or number");
}

inline json to_json(const Claim& c) {
  json j = {{"key", c.key}, {"value", claim_value_to_json(c.value)}};
  if (c.unit) j["unit"] = *c.unit;
  detail::merge_extra(j, c.extra);
  return j;
}

inline Claim claim_from_json(const json& j) {
  detail::require_object(j, "claim");
  Claim c;
  c.key = detail::require(j, "key").get<std::string>();
  c.value = claim_value_from_json(detail::require(j, "value"));
  c.unit = detail::opt_field<std::string>(j, "unit");
  c.extra = detail::take_extra(j, {"key", "value", "unit"});
  return c;
}

inline json to_json(const GroundTruthLabel& g) {
  json j = {{"is_hallucinated", g.is_hallucinated}};
  if (g.failure_class) j["failure_class"] = to_string(*g.failure_class);
  if (g.correct_answer) j["correct_answer"] = *g.correct_answer;
  detail::merge_extra(j, g.extra);
  return j;
}

inline GroundTruthLabel ground_truth_from_json(const json& j) {
  detail::require_object(j, "ground_truth");
  GroundTruthLabel g;
  g.is_hallucinated = detail::require(j, "is_hallucinated").get<bool>();
  if (auto fc = detail::opt_field<std::string>(j, "failure_class")) {
    g.failure_class = failure_class_from_string(*fc);
    if (!g.failure_class) throw std::invalid_argument("unknown failure_class '" + *fc + "'");
  }
  g.correct_answer = detail::opt_field<std::string>(j, "correct_answer");
  g.extra = detail::take_extra(j, {"is_hallucinated", "failure_class", "correct_answer"});
  return g;
}

inline json to_json(const GenerationRecord& r) {
  json samples = json::array();
  for (const auto& s : r.samples) samples.push_back(to_json(s));
  json j = {{"id", r.id}, {"prompt", r.prompt}, {"samples", std::move(samples)}};
  if (r.reference_claims) {
    json arr = json::array();
    for (const auto& c : *r.reference_claims) arr.push_back(to_json(c));
    j["reference_claims"] = std::move(arr);
  }
  if (r.ground_truth) j["ground_truth"] = to_json(*r.ground_truth);
  detail::merge_extra(j, r.extra);
  return j;
}

inline GenerationRecord record_from_json(const json& j) {
  detail::require_object(j, "record");
  GenerationRecord r;
  r.id = detail::require(j, "id").get<std::string>();
  r.prompt = j.value("prompt", std::string{});
  const json& samples = detail::require(j, "samples");
  if (!samples.is_array()) throw std::invalid_argument("samples must be an array");
  for (const auto& s : samples) r.samples.push_back(sample_from_json(s));
  if (auto it = j.find("reference_claims"); it != j.end() && !it->is_null()) {
    std::vector<Claim> claims;
    for (const auto& c : *it) claims.push_back(claim_from_json(c));
    r.reference_claims = std::move(claims);
  }
  if (auto it = j.find("ground_truth"); it != j.end() && !it->is_null()) {
    r.ground_truth = ground_truth_from_json(*it);
  }
  r.extra = detail::take_extra(j, {"id", "prompt", "samples", "reference_claims", "ground_truth"});
  return r;
}

// ---- JSONL streams ----------------------------------------------------------

/// Parses a JSONL corpus. Blank lines are skipped. Throws ParseError for
/// malformed lines and ValidationError for the first invariant violation.
inline std::vector<GenerationRecord> parse_records(std::istream& in) {
  std::vector<GenerationRecord> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    GenerationRecord rec;
    try {
      rec = record_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
    auto diags = validate_record(rec);
    if (!diags.empty()) {
      throw ValidationError(rec.id, diags.front().field, diags.front().reason);
    }
    if (!ids.insert(rec.id).second) throw ValidationError(rec.id, "id", "duplicate id in corpus");
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<GenerationRecord> parse_records(const std::string& text) {
  std::istringstream in(text);
  return parse_records(in);
}

inline void write_records(std::ostream& out, const std::vector<GenerationRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::string write_records(const std::vector<GenerationRecord>& records) {
  std::ostringstream os;
  write_records(os, records);
  return os.str();
}

}  // namespace hallu

#endif  // HALLU_RECORDS_HPP
