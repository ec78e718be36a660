#ifndef HALLU_PIPELINE_HPP
#define HALLU_PIPELINE_HPP

// Detect -> route -> mitigate -> validate -> refine over offline generation logs.
//
// Mitigation is advisory: the router recommends interventions, and a
// regenerated record (same id plus ".retry") is validated against the
// signals that triggered the original verdict.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hallu/consistency.hpp"
#include "hallu/errors.hpp"
#include "hallu/grounding.hpp"
#include "hallu/records.hpp"
#include "hallu/semantic.hpp"
#include "hallu/uncertainty.hpp"

namespace hallu {

using Tier = FailureClass;

struct DetectConfig {
  double cluster_threshold = kDefaultClusterThreshold;
  EmbedFn embed = default_embedder();
  RaceThresholds race;
  FactTolerance fact_tolerance;
  double min_delta = 0.05;
};

struct DetectionSignals {
  std::string record_id;
  std::optional<double> h_p_mean;
  std::optional<double> h_p_max;
  std::optional<double> h_s;
  std::optional<double> consensus_support;
  std::optional<std::string> consensus_answer;
  std::optional<double> self_confidence;
  std::optional<RaceReport> race;
  std::optional<std::vector<ClaimVerdict>> fact_verdicts;
  std::map<std::string, double> external_signals;

  bool empty() const {
    return !h_p_mean && !h_s && !consensus_support && !self_confidence && !race && !fact_verdicts &&
           external_signals.empty();
  }
};

// ---- signal catalogue ------------------------------------------------------------

inline constexpr std::string_view kExternalPrefix = "external.";

inline const std::vector<std::string>& builtin_signal_ids() {
  static const std::vector<std::string> ids = {
      "h_p_mean",         "h_p_max", "h_s",           "consensus_support", "self_confidence",
      "race_h_reasoning", "race_h_answer", "race_mi", "race_flag",         "fact_mismatches",
      "fact_unknowns"};
  return ids;
}

inline bool is_known_signal(const std::string& id) {
  if (id.rfind(kExternalPrefix, 0) == 0) return id.size() > kExternalPrefix.size();
  const auto& ids = builtin_signal_ids();
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

inline std::optional<double> signal_value(const DetectionSignals& s, const std::string& id) {
  if (id == "h_p_mean") return s.h_p_mean;
  if (id == "h_p_max") return s.h_p_max;
  if (id == "h_s") return s.h_s;
  if (id == "consensus_support") return s.consensus_support;
  if (id == "self_confidence") return s.self_confidence;
  if (s.race) {
    if (id == "race_h_reasoning") return s.race->h_reasoning;
    if (id == "race_h_answer") return s.race->h_answer;
    if (id == "race_mi") return s.race->mutual_information;
    if (id == "race_flag") return s.race->flag_right_answer_wrong_reasoning ? 1.0 : 0.0;
  }
  if (s.fact_verdicts && (id == "fact_mismatches" || id == "fact_unknowns")) {
    const auto want = id == "fact_mismatches" ? VerdictStatus::mismatch : VerdictStatus::unknown;
    return static_cast<double>(std::count_if(s.fact_verdicts->begin(), s.fact_verdicts->end(),
                                             [&](const ClaimVerdict& v) { return v.status == want; }));
  }
  if (id.rfind(kExternalPrefix, 0) == 0) {
    auto it = s.external_signals.find(id.substr(kExternalPrefix.size()));
    if (it != s.external_signals.end()) return it->second;
  }
  return std::nullopt;
}

// ---- detection --------------------------------------------------------------------

/// Computes every signal whose inputs the record carries. Missing inputs
/// leave the corresponding signal absent.
inline DetectionSignals detect(const GenerationRecord& record, const DetectConfig& config,
                               const FactStore* store = nullptr) {
  DetectionSignals s;
  s.record_id = record.id;

  double hp_sum = 0.0, hp_max = 0.0;
  std::size_t hp_n = 0;
  for (const auto& sample : record.samples) {
    if (!sample.token_dists || sample.token_dists->empty()) continue;
    const auto profile = sequence_entropy_profile(sample);
    hp_sum += profile.mean;
    hp_max = std::max(hp_max, profile.max);
    ++hp_n;
  }
  if (hp_n > 0) {
    s.h_p_mean = hp_sum / static_cast<double>(hp_n);
    s.h_p_max = hp_max;
  }

  if (record.samples.size() >= 2) {
    s.h_s = semantic_entropy_of_record(record, config.embed, config.cluster_threshold).entropy;
    const auto consensus = self_consistency_consensus(record, config.embed, config.cluster_threshold);
    s.consensus_support = consensus.support;
    s.consensus_answer = consensus.consensus_answer;
    const bool race_ready = std::all_of(record.samples.begin(), record.samples.end(),
                                        [](const Sample& x) { return x.reasoning && x.answer; });
    if (race_ready) s.race = race_metrics(record, config.embed, config.race);
  }

  double conf_sum = 0.0;
  std::size_t conf_n = 0;
  for (const auto& sample : record.samples) {
    auto c = sample.self_confidence ? sample.self_confidence : parse_self_declared_confidence(sample.text);
    if (c) {
      conf_sum += *c;
      ++conf_n;
    }
  }
  if (conf_n > 0) s.self_confidence = conf_sum / static_cast<double>(conf_n);

  if (store && record.reference_claims && !record.reference_claims->empty()) {
    s.fact_verdicts = check_claims(*record.reference_claims, *store, config.fact_tolerance);
  }

  if (auto it = record.extra.find("external_signals"); it != record.extra.end() && it->is_object()) {
    for (auto e = it->begin(); e != it->end(); ++e) {
      if (e->is_number()) s.external_signals[e.key()] = e->get<double>();
    }
  }
  return s;
}

/// detect() over a corpus with a bounded worker pool; output order follows input.
inline std::vector<DetectionSignals> detect_all(const std::vector<GenerationRecord>& records,
                                                const DetectConfig& config, const FactStore* store = nullptr,
                                                std::size_t workers = 0) {
  std::vector<DetectionSignals> out(records.size());
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(records.size(), 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < records.size(); ++i) out[i] = detect(records[i], config, store);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < records.size(); i += workers) {
          out[i] = detect(records[i], config, store);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

// ---- routing ----------------------------------------------------------------------

enum class Comparator { less, less_equal, greater, greater_equal };

inline const char* to_string(Comparator c) {
  switch (c) {
    case Comparator::less: return "<";
    case Comparator::less_equal: return "<=";
    case Comparator::greater: return ">";
    case Comparator::greater_equal: return ">=";
  }
  return "<";
}

inline std::optional<Comparator> comparator_from_string(std::string_view s) {
  if (s == "<") return Comparator::less;
  if (s == "<=" || s == "≤") return Comparator::less_equal;
  if (s == ">") return Comparator::greater;
  if (s == ">=" || s == "≥") return Comparator::greater_equal;
  return std::nullopt;
}

inline bool compare(double value, Comparator c, double threshold) {
  switch (c) {
    case Comparator::less: return value < threshold;
    case Comparator::less_equal: return value <= threshold;
    case Comparator::greater: return value > threshold;
    case Comparator::greater_equal: return value >= threshold;
  }
  return false;
}

struct RouterRule {
  std::string name;
  std::string signal;
  Comparator comparator = Comparator::greater;
  double threshold = 0.0;
  Tier tier = Tier::model;
  std::vector<std::string> recommended_mitigations;

  bool fires(const DetectionSignals& s) const {
    const auto v = signal_value(s, signal);
    return v && compare(*v, comparator, threshold);
  }
};

inline void validate_rule(const RouterRule& r) {
  if (r.name.empty()) throw ConfigError("router rule with empty name");
  if (!is_known_signal(r.signal)) {
    throw ConfigError("rule '" + r.name + "': unknown signal '" + r.signal + "'");
  }
  if (!std::isfinite(r.threshold)) throw ConfigError("rule '" + r.name + "': threshold must be finite");
}

/// Rule order is priority order; thresholds are starting points, not tuned values.
inline std::vector<RouterRule> default_rules() {
  using C = Comparator;
  return {
      {"high_token_entropy", "h_p_mean", C::greater, 0.9, Tier::model, {"temperature_calibration_review"}},
      {"high_semantic_entropy", "h_s", C::greater, 0.45, Tier::model,
       {"self_consistency_decoding", "sampling_policy_tightening"}},
      {"low_consensus", "consensus_support", C::less, 0.6, Tier::model, {"self_consistency_decoding"}},
      {"reasoning_answer_incoherence", "race_flag", C::greater_equal, 1.0, Tier::context,
       {"chain_of_thought_review", "prompt_restructuring"}},
      {"low_prompt_similarity", "external.prompt_similarity", C::less, 0.5, Tier::context,
       {"prompt_restructuring"}},
      {"fact_mismatch", "fact_mismatches", C::greater_equal, 1.0, Tier::data,
       {"grounding_refresh", "source_verification"}},
  };
}

inline nlohmann::json to_json(const RouterRule& r) {
  return {{"name", r.name},
          {"signal", r.signal},
          {"comparator", to_string(r.comparator)},
          {"threshold", r.threshold},
          {"tier", to_string(r.tier)},
          {"recommended_mitigations", r.recommended_mitigations}};
}

/// Parses and checks a rules list. Errors name the offending rule.
inline std::vector<RouterRule> rules_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("rules file must contain a JSON array");
  std::vector<RouterRule> rules;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    const std::string label =
        e.is_object() && e.contains("name") && e["name"].is_string() ? e["name"].get<std::string>()
                                                                    : "#" + std::to_string(i);
    try {
      if (!e.is_object()) throw ConfigError("not an object");
      RouterRule r;
      r.name = e.at("name").get<std::string>();
      r.signal = e.at("signal").get<std::string>();
      auto cmp = comparator_from_string(e.at("comparator").get<std::string>());
      if (!cmp) throw ConfigError("unknown comparator '" + e.at("comparator").get<std::string>() + "'");
      r.comparator = *cmp;
      r.threshold = e.at("threshold").get<double>();
      auto tier = failure_class_from_string(e.at("tier").get<std::string>());
      if (!tier) throw ConfigError("unknown tier '" + e.at("tier").get<std::string>() + "'");
      r.tier = *tier;
      r.recommended_mitigations =
          e.value("recommended_mitigations", std::vector<std::string>{});
      validate_rule(r);
      rules.push_back(std::move(r));
    } catch (const ConfigError& ex) {
      const std::string msg = ex.what();
      if (msg.rfind("rule '", 0) == 0) throw;
      throw ConfigError("rule '" + label + "': " + msg);
    } catch (const std::exception& ex) {
      throw ConfigError("rule '" + label + "': " + ex.what());
    }
  }
  return rules;
}

struct ValidationResult {
  struct SignalDelta {
    std::string rule;
    std::string signal;
    double before = 0.0;
    std::optional<double> after;
    std::optional<double> delta;  // after - before
    bool resolved = false;
  };
  bool improved = false;
  std::vector<SignalDelta> deltas;
};

struct TierVerdict {
  std::string record_id;
  std::vector<std::string> fired_rules;
  std::optional<Tier> tier;
  std::vector<std::string> recommendations;
  std::optional<ValidationResult> validation;

  bool is_pass() const { return !tier.has_value(); }
};

inline TierVerdict route(const DetectionSignals& signals, const std::vector<RouterRule>& rules) {
  TierVerdict v;
  v.record_id = signals.record_id;
  std::set<std::string> seen;
  for (const auto& rule : rules) {
    if (!rule.fires(signals)) continue;
    if (!v.tier) v.tier = rule.tier;
    v.fired_rules.push_back(rule.name);
    for (const auto& m : rule.recommended_mitigations) {
      if (seen.insert(m).second) v.recommendations.push_back(m);
    }
  }
  return v;
}

/// Re-evaluates the rules that fired on `before`. Each must either no longer
/// fire on `after` or have moved in its safe direction by at least
/// `min_delta` (and by a nonzero amount).
inline ValidationResult validate(const DetectionSignals& before, const DetectionSignals& after,
                                 const std::vector<RouterRule>& rules, double min_delta) {
  if (before.record_id != after.record_id) {
    throw DomainError("validate: record ids differ ('" + before.record_id + "' vs '" + after.record_id + "')");
  }
  ValidationResult r;
  r.improved = true;
  for (const auto& rule : rules) {
    if (!rule.fires(before)) continue;
    ValidationResult::SignalDelta d;
    d.rule = rule.name;
    d.signal = rule.signal;
    d.before = *signal_value(before, rule.signal);
    d.after = signal_value(after, rule.signal);
    if (d.after) {
      d.delta = *d.after - d.before;
      const bool upper_bound_rule =
          rule.comparator == Comparator::greater || rule.comparator == Comparator::greater_equal;
      const double gain = upper_bound_rule ? -*d.delta : *d.delta;
      d.resolved = !compare(*d.after, rule.comparator, rule.threshold) || (gain > 0.0 && gain >= min_delta);
    }
    if (!d.resolved) r.improved = false;
    r.deltas.push_back(std::move(d));
  }
  return r;
}

// ---- the cycle ------------------------------------------------------------------------

inline constexpr std::string_view kRetrySuffix = ".retry";

struct LedgerEntry {
  std::string record_id;
  DetectionSignals signals;
  TierVerdict verdict;
  std::string action_taken;
  std::string outcome;  // pass | improved | residual | pending
  std::string timestamp;
};

struct RuleOutcomeStats {
  std::size_t fired = 0;
  std::size_t improved = 0;
  std::size_t residual = 0;
  std::size_t pending = 0;
};

struct LedgerSummary {
  std::size_t total = 0;
  std::size_t pass = 0;
  std::size_t tiered = 0;
  std::map<std::string, std::size_t> per_tier{{"model", 0}, {"context", 0}, {"data", 0}};
  std::size_t improved = 0;
  std::size_t residuals = 0;
  std::size_t pending = 0;
  std::map<std::string, RuleOutcomeStats> per_rule;  // pattern -> outcome mapping
};

struct CycleLedger {
  std::vector<LedgerEntry> entries;
  LedgerSummary summary;
};

using Clock = std::function<std::string()>;

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline bool is_retry_id(const std::string& id) {
  return id.size() > kRetrySuffix.size() &&
         id.compare(id.size() - kRetrySuffix.size(), kRetrySuffix.size(), kRetrySuffix) == 0;
}

/// Runs the full cycle over a corpus. Retry records whose base id is present
/// are consumed as validation targets and get no entry of their own.
inline CycleLedger run_cycle(const std::vector<GenerationRecord>& records, const DetectConfig& config,
                             const FactStore* store, const std::vector<RouterRule>& rules,
                             const Clock& clock = utc_timestamp) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!index.emplace(records[i].id, i).second) {
      throw DomainError("run_cycle: duplicate record id '" + records[i].id + "'");
    }
  }
  std::vector<std::size_t> primary;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& id = records[i].id;
    if (is_retry_id(id) && index.count(id.substr(0, id.size() - kRetrySuffix.size()))) continue;
    primary.push_back(i);
  }

  const auto signals = detect_all(records, config, store);

  CycleLedger ledger;
  auto& sum = ledger.summary;
  for (std::size_t i : primary) {
    LedgerEntry e;
    e.record_id = records[i].id;
    e.signals = signals[i];
    e.verdict = route(e.signals, rules);
    e.timestamp = clock();
    ++sum.total;
    if (e.verdict.is_pass()) {
      e.action_taken = "none";
      e.outcome = "pass";
      ++sum.pass;
    } else {
      ++sum.tiered;
      ++sum.per_tier[to_string(*e.verdict.tier)];
      auto retry = index.find(e.record_id + std::string(kRetrySuffix));
      if (retry != index.end()) {
        DetectionSignals after = signals[retry->second];
        after.record_id = e.record_id;
        e.verdict.validation = validate(e.signals, after, rules, config.min_delta);
        e.action_taken = "validated against " + retry->first;
        e.outcome = e.verdict.validation->improved ? "improved" : "residual";
        ++(e.verdict.validation->improved ? sum.improved : sum.residuals);
      } else {
        e.action_taken = "flagged for external mitigation";
        e.outcome = "pending";
        ++sum.pending;
      }
      for (const auto& name : e.verdict.fired_rules) {
        auto& st = sum.per_rule[name];
        ++st.fired;
        if (e.outcome == "improved") ++st.improved;
        if (e.outcome == "residual") ++st.residual;
        if (e.outcome == "pending") ++st.pending;
      }
    }
    ledger.entries.push_back(std::move(e));
  }
  return ledger;
}

// ---- serialization ----------------------------------------------------------------------

inline nlohmann::json to_json(const RaceReport& r) {
  return {{"h_reasoning", r.h_reasoning},
          {"h_answer", r.h_answer},
          {"h_joint", r.h_joint},
          {"mutual_information", r.mutual_information},
          {"mutual_information_raw", r.mutual_information_raw},
          {"answer_support", r.answer_support},
          {"flag_right_answer_wrong_reasoning", r.flag_right_answer_wrong_reasoning}};
}

inline nlohmann::json to_json(const DetectionSignals& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j = {{"record_id", s.record_id},
                      {"h_p_mean", opt(s.h_p_mean)},
                      {"h_p_max", opt(s.h_p_max)},
                      {"h_s", opt(s.h_s)},
                      {"consensus_support", opt(s.consensus_support)},
                      {"self_confidence", opt(s.self_confidence)}};
  j["consensus_answer"] = s.consensus_answer ? nlohmann::json(*s.consensus_answer) : nlohmann::json(nullptr);
  j["race"] = s.race ? to_json(*s.race) : nlohmann::json(nullptr);
  if (s.fact_verdicts) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : *s.fact_verdicts) arr.push_back(to_json(v));
    j["fact_verdicts"] = std::move(arr);
  } else {
    j["fact_verdicts"] = nullptr;
  }
  j["external_signals"] = s.external_signals;
  return j;
}

inline nlohmann::json to_json(const ValidationResult& v) {
  nlohmann::json deltas = nlohmann::json::array();
  for (const auto& d : v.deltas) {
    deltas.push_back({{"rule", d.rule},
                      {"signal", d.signal},
                      {"before", d.before},
                      {"after", d.after ? nlohmann::json(*d.after) : nlohmann::json(nullptr)},
                      {"delta", d.delta ? nlohmann::json(*d.delta) : nlohmann::json(nullptr)},
                      {"resolved", d.resolved}});
  }
  return {{"improved", v.improved}, {"deltas", std::move(deltas)}};
}

inline nlohmann::json to_json(const TierVerdict& v) {
  nlohmann::json j = {{"record_id", v.record_id},
                      {"fired_rules", v.fired_rules},
                      {"tier", v.tier ? nlohmann::json(to_string(*v.tier)) : nlohmann::json(nullptr)},
                      {"recommendations", v.recommendations}};
  j["validation"] = v.validation ? to_json(*v.validation) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const LedgerSummary& s) {
  nlohmann::json rules = nlohmann::json::object();
  for (const auto& [name, st] : s.per_rule) {
    rules[name] = {{"fired", st.fired}, {"improved", st.improved}, {"residual", st.residual},
                   {"pending", st.pending}};
  }
  return {{"total", s.total},       {"pass", s.pass},           {"tiered", s.tiered},
          {"per_tier", s.per_tier}, {"improved", s.improved},   {"residuals", s.residuals},
          {"pending", s.pending},   {"per_rule", std::move(rules)}};
}

inline nlohmann::json to_json(const CycleLedger& ledger) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : ledger.entries) {
    entries.push_back({{"record_id", e.record_id},
                       {"signals", to_json(e.signals)},
                       {"verdict", to_json(e.verdict)},
                       {"action_taken", e.action_taken},
                       {"outcome", e.outcome},
                       {"timestamp", e.timestamp}});
  }
  return {{"entries", std::move(entries)}, {"summary", to_json(ledger.summary)}};
}

inline std::string ledger_markdown(const CycleLedger& ledger) {
  const auto& s = ledger.summary;
  std::ostringstream md;
  md << "# Hallucination cycle summary\n\n";
  md << "| metric | count |\n|---|---|\n";
  md << "| records | " << s.total << " |\n";
  md << "| pass | " << s.pass << " |\n";
  md << "| tiered | " << s.tiered << " |\n";
  for (const auto& [tier, n] : s.per_tier) md << "| tier: " << tier << " | " << n << " |\n";
  md << "| improved after retry | " << s.improved << " |\n";
  md << "| residual errors | " << s.residuals << " |\n";
  md << "| pending external mitigation | " << s.pending << " |\n";
  if (!s.per_rule.empty()) {
    md << "\n## Rule outcomes\n\n| rule | fired | improved | residual | pending |\n|---|---|---|---|---|\n";
    for (const auto& [name, st] : s.per_rule) {
      md << "| " << name << " | " << st.fired << " | " << st.improved << " | " << st.residual << " | "
         << st.pending << " |\n";
    }
  }
  std::vector<const LedgerEntry*> residual;
  for (const auto& e : ledger.entries) {
    if (e.outcome == "residual") residual.push_back(&e);
  }
  if (!residual.empty()) {
    md << "\n## Residual errors\n\n";
    for (const auto* e : residual) {
      md << "- `" << e->record_id << "` (" << to_string(*e->verdict.tier) << "): ";
      for (std::size_t k = 0; k < e->verdict.fired_rules.size(); ++k) {
        md << (k ? ", " : "") << e->verdict.fired_rules[k];
      }
      md << "\n";
    }
  }
  return md.str();
}

}  // namespace hallu

#endif  // HALLU_PIPELINE_HPP
