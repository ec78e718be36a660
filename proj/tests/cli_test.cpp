#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hallu/mockgen.hpp"
#include "hallu/records.hpp"

namespace fs = std::filesystem;
using namespace hallu;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("hallu_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  CliResult run(const std::string& args) const {
    const auto out = path("stdout.txt"), err = path("stderr.txt");
    const std::string cmd = std::string("'") + HALLU_CLI_PATH + "' " + args + " > '" + out.string() + "' 2> '" +
                            err.string() + "'";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  // Writes a mock corpus and store; returns the corpus records.
  std::vector<GenerationRecord> mock(const MockSpec& spec, const std::string& corpus = "c.jsonl",
                                     const std::string& store = "s.json") const {
    const auto out = detail::generate(spec);
    spit(path(corpus), write_records(out.corpus));
    spit(path(store), to_json(out.store).dump());
    return out.corpus;
  }

  std::string q(const std::string& name) const { return "'" + path(name).string() + "'"; }

  fs::path dir_;
};

MockSpec spec_with(std::size_t n, double model, double context, double data, std::uint64_t seed) {
  MockSpec s;
  s.n_records = n;
  s.inject_rates = {{FailureClass::model, model}, {FailureClass::context, context}, {FailureClass::data, data}};
  s.seed = seed;
  return s;
}

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("analyze --format xml --input x").code, 1);
}

TEST_F(Cli, AnalyzeEmptyCorpusIsDataError) {
  spit(path("empty.jsonl"), "");
  const auto r = run("analyze --input " + q("empty.jsonl"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("no records"), std::string::npos);
}

TEST_F(Cli, AnalyzeUnreadableInputIsEnvironmentError) {
  EXPECT_EQ(run("analyze --input " + q("nope.jsonl")).code, 1);
}

TEST_F(Cli, AnalyzeMalformedLineIsDataError) {
  spit(path("bad.jsonl"), "{\"id\": \"a\", \"prompt\": \"p\", \"samples\": [{\"text\": \"x\"}]}\n{oops\n");
  const auto r = run("analyze --input " + q("bad.jsonl"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 2"), std::string::npos);
}

TEST_F(Cli, AnalyzeReportRowsAndFields) {
  const auto corpus = mock(spec_with(60, 0.1, 0.1, 0.1, 5));
  const auto r = run("analyze --input " + q("c.jsonl") + " --store " + q("s.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  ASSERT_EQ(j["records"].size(), corpus.size());
  for (const char* field : {"record_id", "h_p_mean", "h_p_max", "h_s", "consensus_support", "consensus_answer",
                            "self_confidence", "race", "fact_verdicts", "external_signals"}) {
    EXPECT_TRUE(j["records"][0].contains(field)) << field;
  }
  EXPECT_EQ(j["aggregates"]["n_records"], corpus.size());
  EXPECT_TRUE(j["aggregates"]["ece"].is_number());
  const auto md = run("analyze --input " + q("c.jsonl") + " --format md");
  EXPECT_EQ(md.code, 0);
  EXPECT_NE(md.out.find("| mock-59 |"), std::string::npos);
}

TEST_F(Cli, CalibrateTemperatureRecoversGenerator) {
  auto spec = spec_with(3000, 0, 0, 0, 12);
  spec.true_temperature = 1.5;
  mock(spec);
  const auto r = run("calibrate --kind temperature --input " + q("c.jsonl") + " --output " + q("m.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = json::parse(slurp(path("m.json")));
  EXPECT_EQ(m["kind"], "temperature");
  EXPECT_NEAR(m["temperature"].get<double>(), 1.5, 0.1);
  EXPECT_NE(r.err.find("nll"), std::string::npos);
}

TEST_F(Cli, CalibrateIsotonicIsMonotone) {
  mock(spec_with(300, 0, 0, 0, 13));
  const auto r = run("calibrate --kind isotonic --input " + q("c.jsonl"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = json::parse(r.out);
  EXPECT_EQ(m["kind"], "isotonic");
  const auto v = m["values"].get<std::vector<double>>();
  for (std::size_t i = 1; i < v.size(); ++i) EXPECT_LE(v[i - 1], v[i]);
}

TEST_F(Cli, CalibrateUnknownKindAndInsufficientData) {
  mock(spec_with(20, 0, 0, 0, 1));
  EXPECT_EQ(run("calibrate --kind platt --input " + q("c.jsonl")).code, 1);
  spit(path("one.jsonl"), write_records({generate_corpus(spec_with(1, 0, 0, 0, 1))}));
  EXPECT_EQ(run("calibrate --kind temperature --input " + q("one.jsonl")).code, 2);
}

TEST_F(Cli, PipelineCleanCorpusHasNoTiers) {
  mock(spec_with(80, 0, 0, 0, 21));
  const auto r = run("pipeline --input " + q("c.jsonl") + " --store " + q("s.json") + " --summary " + q("sum.md"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["summary"]["tiered"], 0);
  EXPECT_EQ(j["summary"]["pass"], 80);
  EXPECT_NE(slurp(path("sum.md")).find("| tiered | 0 |"), std::string::npos);
}

TEST_F(Cli, PipelineTierCountsMatchInjections) {
  const auto corpus = mock(spec_with(300, 0.1, 0.1, 0.1, 22));
  std::map<std::string, int> injected{{"model", 0}, {"context", 0}, {"data", 0}};
  for (const auto& r : corpus) {
    if (r.ground_truth->failure_class) ++injected[to_string(*r.ground_truth->failure_class)];
  }
  const auto r = run("pipeline --input " + q("c.jsonl") + " --store " + q("s.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  for (const auto& [tier, n] : injected) EXPECT_EQ(j["summary"]["per_tier"][tier], n) << tier;
  EXPECT_EQ(j["summary"]["pending"], injected["model"] + injected["context"] + injected["data"]);
}

TEST_F(Cli, PipelineWithoutStoreSkipsDataRules) {
  mock(spec_with(100, 0, 0, 0.3, 23));
  const auto r = run("pipeline --input " + q("c.jsonl"));
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("fact_mismatch"), std::string::npos);
  EXPECT_EQ(json::parse(r.out)["summary"]["per_tier"]["data"], 0);
}

TEST_F(Cli, PipelineBadRulesNamesRule) {
  mock(spec_with(10, 0, 0, 0, 24));
  spit(path("rules.json"),
       R"([{"name": "ok", "signal": "h_s", "comparator": ">", "threshold": 0.4, "tier": "model"},
           {"name": "broken_rule", "signal": "h_s", "comparator": ">", "threshold": 0.4, "tier": "weather"}])");
  const auto r = run("pipeline --input " + q("c.jsonl") + " --rules " + q("rules.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("broken_rule"), std::string::npos);
}

TEST_F(Cli, PipelineTimestampPin) {
  mock(spec_with(5, 0, 0, 0, 25));
  const auto r = run("pipeline --input " + q("c.jsonl") + " --timestamp 2024-06-05T00:00:00Z");
  ASSERT_EQ(r.code, 0);
  for (const auto& e : json::parse(r.out)["entries"]) EXPECT_EQ(e["timestamp"], "2024-06-05T00:00:00Z");
}

TEST_F(Cli, ConfigValidation) {
  mock(spec_with(10, 0, 0, 0, 26));
  spit(path("cfg.json"), R"({"cluster_threshold": 5})");
  EXPECT_EQ(run("analyze --input " + q("c.jsonl") + " --config " + q("cfg.json")).code, 1);
  spit(path("cfg.json"), R"({"mystery": 1})");
  EXPECT_EQ(run("analyze --input " + q("c.jsonl") + " --config " + q("cfg.json")).code, 1);
  spit(path("cfg.json"), R"({"rules": "absent.json"})");
  EXPECT_EQ(run("pipeline --input " + q("c.jsonl") + " --config " + q("cfg.json")).code, 1);
  spit(path("cfg.json"), R"({"format": "md", "ece_bins": 5})");
  const auto r = run("analyze --input " + q("c.jsonl") + " --config " + q("cfg.json"));
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("# Analysis", 0), 0u);
}

TEST_F(Cli, MockgenSeedOverrideAndSpecErrors) {
  spit(path("spec.json"), R"({"n_records": 12, "seed": 1})");
  ASSERT_EQ(run("mockgen --spec " + q("spec.json") + " --out " + q("a.jsonl") + " --store-out " + q("a.json")).code, 0);
  ASSERT_EQ(run("mockgen --spec " + q("spec.json") + " --seed 2 --out " + q("b.jsonl")).code, 0);
  const auto a = parse_records(slurp(path("a.jsonl")));
  EXPECT_EQ(a.size(), 12u);
  EXPECT_NE(slurp(path("a.jsonl")), slurp(path("b.jsonl")));
  auto spec = spec_with(12, 0, 0, 0, 1);
  spec.inject_rates.clear();
  EXPECT_EQ(slurp(path("a.jsonl")), write_records(generate_corpus(spec)));
  spit(path("bad.json"), R"({"n_records": 0})");
  EXPECT_EQ(run("mockgen --spec " + q("bad.json")).code, 1);
}

TEST_F(Cli, RaceAndFactcheck) {
  mock(spec_with(50, 0, 0.2, 0.2, 27));
  const auto race = run("race --input " + q("c.jsonl"));
  ASSERT_EQ(race.code, 0);
  EXPECT_EQ(json::parse(race.out)["records"].size(), 50u);
  const auto fc = run("factcheck --input " + q("c.jsonl") + " --store " + q("s.json"));
  ASSERT_EQ(fc.code, 0);
  const auto j = json::parse(fc.out);
  EXPECT_EQ(j["summary"]["match"].get<int>() + j["summary"]["mismatch"].get<int>(), 50);
  EXPECT_EQ(run("factcheck --input " + q("c.jsonl")).code, 1);
  spit(path("dup.json"), R"({"a": {"value": 1}, "a": {"value": 2}})");
  EXPECT_EQ(run("factcheck --input " + q("c.jsonl") + " --store " + q("dup.json")).code, 2);
}

TEST_F(Cli, ChunkCommand) {
  spit(path("doc.txt"), std::string(1000, 'x'));
  const auto r = run("chunk --input " + q("doc.txt") + " --target 400 --overlap 0.15 --fan-in 3");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  ASSERT_EQ(j["chunks"].size(), 3u);
  EXPECT_EQ(j["chunks"][1]["start_offset"], 340);
  EXPECT_EQ(j["chunks"][2]["start_offset"], 680);
  EXPECT_EQ(run("chunk --input " + q("doc.txt") + " --overlap 0.6").code, 1);
}
