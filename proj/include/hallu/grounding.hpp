#ifndef HALLU_GROUNDING_HPP
#define HALLU_GROUNDING_HPP

// Fact-checking of structured claims against a key/value reference store.

#include <cctype>
#include <cmath>
#include <istream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hallu/errors.hpp"
#include "hallu/records.hpp"

namespace hallu {

struct FactEntry {
  ClaimValue value;
  std::optional<std::string> unit;
  std::optional<std::string> as_of;

  bool operator==(const FactEntry&) const = default;
};

class FactStore {
 public:
  FactStore() = default;

  void insert(std::string key, FactEntry entry) {
    if (key.empty()) throw LoadError("fact store: empty key");
    if (!entries_.emplace(std::move(key), std::move(entry)).second) {
      throw LoadError("fact store: duplicate key");
    }
  }

  const FactEntry* find(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<std::string, FactEntry>& entries() const { return entries_; }

  bool operator==(const FactStore&) const = default;

 private:
  std::map<std::string, FactEntry> entries_;
};

inline nlohmann::json to_json(const FactStore& store) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, e] : store.entries()) {
    nlohmann::json entry = {{"value", claim_value_to_json(e.value)}};
    if (e.unit) entry["unit"] = *e.unit;
    if (e.as_of) entry["as_of"] = *e.as_of;
    j[key] = std::move(entry);
  }
  return j;
}

/// Loads `{key: {value, unit?, as_of?}}`. Duplicate keys anywhere in the raw
/// text are rejected rather than silently overwritten.
inline FactStore load_fact_store(const std::string& text) {
  std::vector<std::set<std::string>> seen_keys;
  std::string duplicate;
  nlohmann::json::parser_callback_t cb = [&](int depth, nlohmann::json::parse_event_t event,
                                             nlohmann::json& parsed) {
    using E = nlohmann::json::parse_event_t;
    (void)depth;
    if (event == E::object_start) seen_keys.emplace_back();
    if (event == E::object_end && !seen_keys.empty()) seen_keys.pop_back();
    if (event == E::key && !seen_keys.empty()) {
      const auto k = parsed.get<std::string>();
      if (!seen_keys.back().insert(k).second && duplicate.empty()) duplicate = k;
    }
    return true;
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text, cb);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("fact store: malformed JSON: ") + e.what());
  }
  if (!duplicate.empty()) throw LoadError("fact store: duplicate key '" + duplicate + "'");
  if (!j.is_object()) throw LoadError("fact store: top level must be an object");

  FactStore store;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& v = it.value();
    if (!v.is_object() || !v.contains("value")) {
      throw LoadError("fact store: entry '" + it.key() + "' must be an object with a value");
    }
    FactEntry e;
    try {
      e.value = claim_value_from_json(v.at("value"));
      if (v.contains("unit") && !v["unit"].is_null()) e.unit = v["unit"].get<std::string>();
      if (v.contains("as_of") && !v["as_of"].is_null()) e.as_of = v["as_of"].get<std::string>();
    } catch (const std::exception& ex) {
      throw LoadError("fact store: entry '" + it.key() + "': " + ex.what());
    }
    if (const double* d = std::get_if<double>(&e.value); d && !std::isfinite(*d)) {
      throw LoadError("fact store: entry '" + it.key() + "' has a non-finite value");
    }
    store.insert(it.key(), std::move(e));
  }
  return store;
}

inline FactStore load_fact_store(std::istream& in) {
  return load_fact_store(std::string(std::istreambuf_iterator<char>(in), {}));
}

enum class VerdictStatus { match, mismatch, unknown };

inline const char* to_string(VerdictStatus s) {
  switch (s) {
    case VerdictStatus::match: return "match";
    case VerdictStatus::mismatch: return "mismatch";
    case VerdictStatus::unknown: return "unknown";
  }
  return "unknown";
}

struct ClaimVerdict {
  std::string key;
  ClaimValue claimed;
  std::optional<std::string> claimed_unit;
  std::optional<ClaimValue> reference;
  std::optional<std::string> reference_unit;
  VerdictStatus status = VerdictStatus::unknown;
};

struct FactTolerance {
  double rel = 0.0;
  double abs = 0.0;
};

namespace detail {

inline std::string normalize_text(const std::string& s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

inline bool claim_matches(const Claim& c, const FactEntry& ref, const FactTolerance& tol) {
  const double* num = std::get_if<double>(&c.value);
  const double* ref_num = std::get_if<double>(&ref.value);
  if (num && ref_num) {
    if (c.unit != ref.unit) return false;
    return std::abs(*num - *ref_num) <= std::max(tol.abs, tol.rel * std::abs(*ref_num));
  }
  const std::string* str = std::get_if<std::string>(&c.value);
  const std::string* ref_str = std::get_if<std::string>(&ref.value);
  if (str && ref_str) return normalize_text(*str) == normalize_text(*ref_str);
  return false;
}

}  // namespace detail

/// One verdict per claim, in claim order. Numbers match within
/// max(abs, rel * |reference|) with identical units; strings match after
/// case folding and whitespace normalization.
inline std::vector<ClaimVerdict> check_claims(const std::vector<Claim>& claims, const FactStore& store,
                                              const FactTolerance& tol = {}) {
  if (!(tol.rel >= 0.0) || !(tol.abs >= 0.0)) throw DomainError("check_claims: tolerances must be >= 0");
  std::vector<ClaimVerdict> out;
  out.reserve(claims.size());
  for (const auto& c : claims) {
    ClaimVerdict v;
    v.key = c.key;
    v.claimed = c.value;
    v.claimed_unit = c.unit;
    if (const FactEntry* ref = store.find(c.key)) {
      v.reference = ref->value;
      v.reference_unit = ref->unit;
      v.status = detail::claim_matches(c, *ref, tol) ? VerdictStatus::match : VerdictStatus::mismatch;
    }
    out.push_back(std::move(v));
  }
  return out;
}

inline nlohmann::json to_json(const ClaimVerdict& v) {
  nlohmann::json j = {{"key", v.key}, {"claimed", claim_value_to_json(v.claimed)},
                      {"status", to_string(v.status)}};
  if (v.claimed_unit) j["claimed_unit"] = *v.claimed_unit;
  j["reference"] = v.reference ? claim_value_to_json(*v.reference) : nlohmann::json(nullptr);
  if (v.reference_unit) j["reference_unit"] = *v.reference_unit;
  return j;
}

}  // namespace hallu

#endif  // HALLU_GROUNDING_HPP
