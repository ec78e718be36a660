#include <gtest/gtest.h>

#include <random>

#include "hallu/mockgen.hpp"
#include "hallu/pipeline.hpp"

using namespace hallu;

namespace {

TokenDistribution dist(std::vector<double> p) {
  TokenDistribution d;
  for (std::size_t i = 0; i < p.size(); ++i) d.labels.push_back("t" + std::to_string(i));
  d.probs = std::move(p);
  return d;
}

GenerationRecord answers_record(const std::string& id, const std::vector<std::string>& answers) {
  GenerationRecord r;
  r.id = id;
  for (const auto& a : answers) {
    Sample s;
    s.text = a;
    s.answer = a;
    r.samples.push_back(s);
  }
  return r;
}

GenerationRecord entropy_record(const std::string& id, std::vector<double> p) {
  GenerationRecord r;
  r.id = id;
  Sample s;
  s.text = "out";
  s.token_dists = std::vector<TokenDistribution>{dist(std::move(p))};
  r.samples.push_back(s);
  return r;
}

std::string fixed_clock() { return "2024-01-01T00:00:00Z"; }

}  // namespace

TEST(Detect, TokenDistsOnly) {
  const auto s = detect(entropy_record("a", {0.6, 0.3, 0.1}), DetectConfig{});
  ASSERT_TRUE(s.h_p_mean);
  EXPECT_NEAR(*s.h_p_mean, 0.898, 0.005);
  EXPECT_FALSE(s.h_s);
  EXPECT_FALSE(s.consensus_support);
  EXPECT_FALSE(s.race);
  EXPECT_FALSE(s.fact_verdicts);
  EXPECT_FALSE(s.self_confidence);
}

TEST(Detect, FourAgreeingOfFive) {
  const auto s = detect(answers_record("q", {"18.5%", "18.5%", "18.5%", "22%", "18.5%"}), DetectConfig{});
  ASSERT_TRUE(s.h_s);
  EXPECT_NEAR(*s.h_s, 0.50, 0.005);
  EXPECT_DOUBLE_EQ(*s.consensus_support, 0.8);
  EXPECT_EQ(*s.consensus_answer, "18.5%");
  EXPECT_FALSE(s.h_p_mean);
}

TEST(Detect, FactMismatch) {
  const auto store = load_fact_store(std::string(R"({"boc_policy_rate": {"value": 5.00, "unit": "%"}})"));
  auto r = answers_record("f", {"The current policy rate is 4.25%"});
  r.reference_claims = std::vector<Claim>{{"boc_policy_rate", 4.25, std::string("%"), json::object()}};
  const auto s = detect(r, DetectConfig{}, &store);
  ASSERT_TRUE(s.fact_verdicts);
  EXPECT_EQ((*s.fact_verdicts)[0].status, VerdictStatus::mismatch);
  EXPECT_EQ(*signal_value(s, "fact_mismatches"), 1.0);
  EXPECT_FALSE(detect(r, DetectConfig{}, nullptr).fact_verdicts);
}

TEST(Detect, ExternalAndSelfConfidence) {
  auto r = answers_record("e", {"Yes (Confidence: 0.65)"});
  r.extra["external_signals"] = {{"prompt_similarity", 0.3}, {"ignored", "text"}};
  const auto s = detect(r, DetectConfig{});
  EXPECT_NEAR(*s.self_confidence, 0.65, 1e-12);
  EXPECT_EQ(s.external_signals.size(), 1u);
  EXPECT_EQ(*signal_value(s, "external.prompt_similarity"), 0.3);
  const auto v = route(s, default_rules());
  EXPECT_EQ(v.tier, Tier::context);
  EXPECT_EQ(v.fired_rules, (std::vector<std::string>{"low_prompt_similarity"}));
}

TEST(Route, HighTokenEntropyIsModelTier) {
  DetectionSignals s;
  s.record_id = "x";
  s.h_p_mean = 1.2;
  const auto v = route(s, default_rules());
  EXPECT_EQ(v.tier, Tier::model);
  EXPECT_EQ(v.fired_rules, (std::vector<std::string>{"high_token_entropy"}));
  EXPECT_EQ(v.recommendations, (std::vector<std::string>{"temperature_calibration_review"}));
}

TEST(Route, MismatchIsDataTier) {
  DetectionSignals s;
  s.record_id = "x";
  ClaimVerdict cv;
  cv.key = "k";
  cv.claimed = 4.25;
  cv.reference = 5.0;
  cv.status = VerdictStatus::mismatch;
  s.fact_verdicts = std::vector<ClaimVerdict>{cv};
  const auto v = route(s, default_rules());
  EXPECT_EQ(v.tier, Tier::data);
  EXPECT_EQ(v.recommendations.front(), "grounding_refresh");
}

TEST(Route, PassWhenNothingFires) {
  DetectionSignals s;
  s.record_id = "x";
  s.h_p_mean = 0.2;
  s.h_s = 0.0;
  s.consensus_support = 1.0;
  const auto v = route(s, default_rules());
  EXPECT_TRUE(v.is_pass());
  EXPECT_TRUE(v.fired_rules.empty());
  EXPECT_TRUE(v.recommendations.empty());
}

TEST(Route, FirstFiredRuleDecidesTierAndRecommendationsDedupe) {
  DetectionSignals s;
  s.record_id = "x";
  s.h_s = 1.0;
  s.consensus_support = 0.4;
  s.external_signals["prompt_similarity"] = 0.1;
  const auto v = route(s, default_rules());
  EXPECT_EQ(v.tier, Tier::model);
  EXPECT_EQ(v.fired_rules,
            (std::vector<std::string>{"high_semantic_entropy", "low_consensus", "low_prompt_similarity"}));
  EXPECT_EQ(v.recommendations, (std::vector<std::string>{"self_consistency_decoding", "sampling_policy_tightening",
                                                         "prompt_restructuring"}));
}

TEST(Validate, DropBelowThresholdImproves) {
  DetectionSignals before, after;
  before.record_id = after.record_id = "x";
  before.h_p_mean = 1.2;
  after.h_p_mean = 0.4;
  const auto r = validate(before, after, default_rules(), 0.05);
  EXPECT_TRUE(r.improved);
  ASSERT_EQ(r.deltas.size(), 1u);
  EXPECT_NEAR(*r.deltas[0].delta, -0.8, 1e-12);
}

TEST(Validate, IdenticalIsNotImproved) {
  DetectionSignals s;
  s.record_id = "x";
  s.h_p_mean = 1.2;
  EXPECT_FALSE(validate(s, s, default_rules(), 0.05).improved);
}

TEST(Validate, ConjunctiveOverFiredRules) {
  DetectionSignals before, after;
  before.record_id = after.record_id = "x";
  before.h_p_mean = 1.2;
  before.h_s = 0.9;
  after.h_p_mean = 0.4;
  after.h_s = 0.9;
  EXPECT_FALSE(validate(before, after, default_rules(), 0.05).improved);
  after.h_s = 0.8;  // still fires but moved by 0.1 >= min_delta
  EXPECT_TRUE(validate(before, after, default_rules(), 0.05).improved);
  EXPECT_FALSE(validate(before, after, default_rules(), 0.2).improved);
}

TEST(Validate, LowerBoundRuleSafeDirectionIsUp) {
  DetectionSignals before, after;
  before.record_id = after.record_id = "x";
  before.consensus_support = 0.4;
  after.consensus_support = 0.3;
  EXPECT_FALSE(validate(before, after, default_rules(), 0.05).improved);
  after.consensus_support = 0.5;
  EXPECT_TRUE(validate(before, after, default_rules(), 0.05).improved);
}

TEST(Validate, MissingAfterSignalIsUnresolved) {
  DetectionSignals before, after;
  before.record_id = after.record_id = "x";
  before.h_p_mean = 1.2;
  EXPECT_FALSE(validate(before, after, default_rules(), 0.05).improved);
}

TEST(Validate, IdMismatchIsDomainError) {
  DetectionSignals a, b;
  a.record_id = "a";
  b.record_id = "b";
  EXPECT_THROW(validate(a, b, default_rules(), 0.05), DomainError);
}

TEST(RunCycle, AllPass) {
  std::vector<GenerationRecord> recs;
  for (int i = 0; i < 5; ++i) recs.push_back(answers_record("r" + std::to_string(i), {"same", "same", "same"}));
  const auto l = run_cycle(recs, DetectConfig{}, nullptr, default_rules(), fixed_clock);
  EXPECT_EQ(l.summary.total, 5u);
  EXPECT_EQ(l.summary.pass, 5u);
  EXPECT_EQ(l.summary.tiered, 0u);
  EXPECT_EQ(l.summary.residuals, 0u);
  for (const auto& e : l.entries) EXPECT_EQ(e.outcome, "pass");
}

TEST(RunCycle, InjectedDataFaultsRouteToData) {
  MockSpec spec;
  spec.n_records = 200;
  spec.inject_rates = {{FailureClass::data, 0.3}};
  spec.seed = 5;
  const auto out = detail::generate(spec);
  const auto l = run_cycle(out.corpus, DetectConfig{}, &out.store, default_rules(), fixed_clock);
  ASSERT_EQ(l.entries.size(), out.corpus.size());
  std::size_t injected = 0;
  for (std::size_t i = 0; i < l.entries.size(); ++i) {
    const auto& gt = *out.corpus[i].ground_truth;
    if (gt.failure_class == FailureClass::data) {
      ++injected;
      EXPECT_EQ(l.entries[i].verdict.tier, Tier::data) << l.entries[i].record_id;
    } else {
      EXPECT_TRUE(l.entries[i].verdict.is_pass()) << l.entries[i].record_id;
    }
  }
  EXPECT_GT(injected, 0u);
  EXPECT_EQ(l.summary.per_tier.at("data"), injected);
  EXPECT_EQ(l.summary.pending, injected);
}

TEST(RunCycle, RetryRecordValidates) {
  std::vector<GenerationRecord> recs = {entropy_record("q1", {0.25, 0.25, 0.25, 0.25}),
                                        entropy_record("q1.retry", {0.95, 0.03, 0.02}),
                                        entropy_record("q2", {0.3, 0.3, 0.4}),
                                        entropy_record("q2.retry", {0.3, 0.3, 0.4}),
                                        entropy_record("lonely.retry", {1.0})};
  const auto l = run_cycle(recs, DetectConfig{}, nullptr, default_rules(), fixed_clock);
  ASSERT_EQ(l.entries.size(), 3u);
  EXPECT_EQ(l.entries[0].record_id, "q1");
  EXPECT_EQ(l.entries[0].outcome, "improved");
  EXPECT_EQ(l.entries[1].outcome, "residual");
  EXPECT_EQ(l.entries[2].record_id, "lonely.retry");
  EXPECT_EQ(l.entries[2].outcome, "pass");
  EXPECT_EQ(l.summary.improved, 1u);
  EXPECT_EQ(l.summary.residuals, 1u);
  EXPECT_EQ(l.summary.per_rule.at("high_token_entropy").fired, 2u);
  EXPECT_NE(ledger_markdown(l).find("`q2`"), std::string::npos);
}

TEST(RunCycle, DuplicateIdsRejected) {
  std::vector<GenerationRecord> recs = {entropy_record("a", {1.0}), entropy_record("a", {1.0})};
  EXPECT_THROW(run_cycle(recs, DetectConfig{}, nullptr, default_rules(), fixed_clock), DomainError);
}

TEST(RunCycle, DeterministicAndConserving) {
  MockSpec spec;
  spec.n_records = 120;
  spec.inject_rates = {{FailureClass::model, 0.2}, {FailureClass::context, 0.2}, {FailureClass::data, 0.2}};
  spec.seed = 9;
  const auto out = detail::generate(spec);
  const auto a = run_cycle(out.corpus, DetectConfig{}, &out.store, default_rules(), fixed_clock);
  const auto b = run_cycle(out.corpus, DetectConfig{}, &out.store, default_rules(), fixed_clock);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(a.summary.pass + a.summary.tiered, a.summary.total);
  EXPECT_LE(a.summary.residuals, a.summary.tiered);
}

TEST(Router, RaisingThresholdNeverAddsFirings) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int t = 0; t < 500; ++t) {
    DetectionSignals s;
    s.record_id = "x";
    s.h_p_mean = u(rng);
    s.h_s = u(rng);
    s.consensus_support = u(rng) / 2.0;
    for (auto rule : default_rules()) {
      const bool upper = rule.comparator == Comparator::greater || rule.comparator == Comparator::greater_equal;
      const bool before = rule.fires(s);
      rule.threshold += 0.1;
      // Upper-bound rules can only stop firing; lower-bound rules can only start.
      if (upper && !before) {
        EXPECT_FALSE(rule.fires(s));
      }
      if (!upper && before) {
        EXPECT_TRUE(rule.fires(s));
      }
    }
  }
}

TEST(Rules, JsonRoundTripAndErrorsNameRule) {
  json arr = json::array();
  for (const auto& r : default_rules()) arr.push_back(to_json(r));
  const auto back = rules_from_json(arr);
  ASSERT_EQ(back.size(), default_rules().size());
  EXPECT_EQ(back[3].name, "reasoning_answer_incoherence");

  auto bad = arr;
  bad[1]["signal"] = "h_banana";
  try {
    rules_from_json(bad);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("high_semantic_entropy"), std::string::npos);
  }
  bad = arr;
  bad[2]["comparator"] = "!=";
  try {
    rules_from_json(bad);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("low_consensus"), std::string::npos);
  }
  bad = arr;
  bad[0].erase("threshold");
  EXPECT_THROW(rules_from_json(bad), ConfigError);
  EXPECT_THROW(rules_from_json(json::object()), ConfigError);
  json unicode = arr;
  unicode[0]["comparator"] = "≥";
  EXPECT_EQ(rules_from_json(unicode)[0].comparator, Comparator::greater_equal);
}
