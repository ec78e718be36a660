// hallu: hallucination metrics, calibration and routing over JSONL generation logs.
//
// exit codes: 0 ok, 1 usage / environment, 2 data / validation

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "hallu/calibration.hpp"
#include "hallu/corpus.hpp"
#include "hallu/mitigation.hpp"
#include "hallu/mockgen.hpp"
#include "hallu/pipeline.hpp"

using namespace hallu;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  double cluster_threshold = kDefaultClusterThreshold;
  std::size_t ece_bins = 10;
  TemperatureFitOptions calibration;
  std::string rules_path;
  FactTolerance fact_tolerance;
  double min_delta = 0.05;
  std::size_t workers = 0;
  std::string format = "json";
};

struct Common {
  std::string input;
  std::string output;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string format;
};

std::string read_file(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_output(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path + "'");
  out << content;
}

json parse_json_file(const std::string& path, bool config_file) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    if (config_file) throw ConfigError("'" + path + "': " + e.what());
    throw LoadError("'" + path + "': " + e.what());
  }
}

RunConfig load_config(const std::string& path) {
  RunConfig c;
  if (path.empty()) return c;
  const json j = parse_json_file(path, true);
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = {"cluster_threshold", "ece_bins",  "calibration", "rules",
                                              "fact_tolerance",    "min_delta", "workers",     "format"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError("config: unknown key '" + it.key() + "'");
  }
  try {
    c.cluster_threshold = j.value("cluster_threshold", c.cluster_threshold);
    c.ece_bins = j.value("ece_bins", c.ece_bins);
    if (j.contains("calibration")) {
      const auto& k = j.at("calibration");
      c.calibration.lower = k.value("lower", c.calibration.lower);
      c.calibration.upper = k.value("upper", c.calibration.upper);
      c.calibration.tolerance = k.value("tolerance", c.calibration.tolerance);
    }
    c.rules_path = j.value("rules", std::string());
    if (j.contains("fact_tolerance")) {
      c.fact_tolerance.rel = j.at("fact_tolerance").value("rel", 0.0);
      c.fact_tolerance.abs = j.at("fact_tolerance").value("abs", 0.0);
    }
    c.min_delta = j.value("min_delta", c.min_delta);
    c.workers = j.value("workers", c.workers);
    c.format = j.value("format", c.format);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!(c.cluster_threshold >= 0.0 && c.cluster_threshold <= 2.0)) {
    throw ConfigError("config: cluster_threshold must lie in [0, 2]");
  }
  if (c.ece_bins < 1) throw ConfigError("config: ece_bins must be >= 1");
  if (!(c.calibration.lower > 0.0 && c.calibration.lower < c.calibration.upper && c.calibration.tolerance > 0.0)) {
    throw ConfigError("config: calibration bounds must satisfy 0 < lower < upper, tolerance > 0");
  }
  if (!(c.fact_tolerance.rel >= 0.0 && c.fact_tolerance.abs >= 0.0)) {
    throw ConfigError("config: fact tolerances must be >= 0");
  }
  if (!(c.min_delta >= 0.0)) throw ConfigError("config: min_delta must be >= 0");
  if (c.format != "json" && c.format != "md") throw ConfigError("config: format must be json or md");
  if (!c.rules_path.empty()) {
    if (!std::filesystem::path(c.rules_path).is_absolute()) {
      c.rules_path = (std::filesystem::path(path).parent_path() / c.rules_path).string();
    }
    if (!std::filesystem::exists(c.rules_path)) throw ConfigError("config: rules file '" + c.rules_path + "' not found");
  }
  return c;
}

std::string effective_format(const Common& common, const RunConfig& cfg) {
  return common.format.empty() ? cfg.format : common.format;
}

DetectConfig detect_config(const RunConfig& c) {
  DetectConfig d;
  d.cluster_threshold = c.cluster_threshold;
  d.race.reasoning_cluster_threshold = c.cluster_threshold;
  d.race.answer_cluster_threshold = c.cluster_threshold;
  d.fact_tolerance = c.fact_tolerance;
  d.min_delta = c.min_delta;
  return d;
}

std::vector<GenerationRecord> load_records(const std::string& path) {
  if (path.empty()) throw UsageError("--input is required");
  std::istringstream in(read_file(path));
  return parse_records(in);
}

std::string num(std::optional<double> v, int prec = 4) {
  if (!v) return "-";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(prec) << *v;
  return ss.str();
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void add_common(CLI::App* app, Common& c, bool with_input = true) {
  if (with_input) app->add_option("--input,-i", c.input, "input file ('-' for stdin)");
  app->add_option("--output,-o", c.output, "output file (default stdout)");
  app->add_option("--config", c.config, "run config JSON")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "seed (used by commands with random draws)");
  app->add_option("--format", c.format, "json or md")->check(CLI::IsMember({"json", "md"}));
}

// ---- analyze ---------------------------------------------------------------------

int cmd_analyze(const Common& common, const std::string& store_path) {
  const RunConfig cfg = load_config(common.config);
  const auto records = load_records(common.input);
  if (records.empty()) throw DomainError("no records");
  std::optional<FactStore> store;
  if (!store_path.empty()) store = load_fact_store(read_file(store_path));

  const auto signals = detect_all(records, detect_config(cfg), store ? &*store : nullptr, cfg.workers);

  auto mean_of = [&](auto get) -> std::optional<double> {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& x : signals) {
      if (auto v = get(x)) {
        s += *v;
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
  };
  auto opt = [](std::optional<double> v) { return v ? json(*v) : json(nullptr); };
  std::size_t race_flags = 0, mismatches = 0;
  for (const auto& s : signals) {
    race_flags += s.race && s.race->flag_right_answer_wrong_reasoning;
    if (auto m = signal_value(s, "fact_mismatches")) mismatches += static_cast<std::size_t>(*m);
  }
  json agg = {{"n_records", records.size()},
              {"mean_h_p", opt(mean_of([](const DetectionSignals& s) { return s.h_p_mean; }))},
              {"mean_h_s", opt(mean_of([](const DetectionSignals& s) { return s.h_s; }))},
              {"mean_consensus_support", opt(mean_of([](const DetectionSignals& s) { return s.consensus_support; }))},
              {"mean_self_confidence", opt(mean_of([](const DetectionSignals& s) { return s.self_confidence; }))},
              {"race_flags", race_flags},
              {"fact_mismatches", mismatches}};
  const auto pairs = confidence_pairs(records);
  if (!pairs.empty()) {
    const auto ece = compute_ece(pairs, cfg.ece_bins);
    agg["ece"] = ece.ece;
    agg["ece_bins"] = {{"edges", ece.bins.edges},
                       {"counts", ece.bins.counts},
                       {"accuracy", ece.bins.accuracy},
                       {"mean_confidence", ece.bins.mean_confidence}};
    agg["n_labelled"] = pairs.size();
  } else {
    agg["ece"] = nullptr;
  }

  if (effective_format(common, cfg) == "md") {
    std::ostringstream md;
    md << "# Analysis\n\n| record | h_p_mean | h_s | consensus | self_conf | race_flag | mismatches |\n"
       << "|---|---|---|---|---|---|---|\n";
    for (const auto& s : signals) {
      md << "| " << s.record_id << " | " << num(s.h_p_mean) << " | " << num(s.h_s) << " | "
         << num(s.consensus_support) << " | " << num(s.self_confidence) << " | "
         << (s.race ? (s.race->flag_right_answer_wrong_reasoning ? "yes" : "no") : "-") << " | "
         << num(signal_value(s, "fact_mismatches"), 0) << " |\n";
    }
    md << "\nrecords: " << records.size() << ", race flags: " << race_flags << ", fact mismatches: " << mismatches;
    if (!pairs.empty()) md << ", ECE: " << num(agg["ece"].get<double>());
    md << "\n";
    write_output(common.output, md.str());
  } else {
    json rows = json::array();
    for (const auto& s : signals) rows.push_back(to_json(s));
    write_output(common.output, dump({{"records", rows}, {"aggregates", agg}}));
  }
  return 0;
}

// ---- calibrate ---------------------------------------------------------------------

int cmd_calibrate(const Common& common, const std::string& kind) {
  const RunConfig cfg = load_config(common.config);
  const auto records = load_records(common.input);
  CalibrationMap map;
  std::ostringstream diag;
  if (kind == "temperature") {
    const auto data = temperature_pairs(records);
    const auto m = fit_temperature(data.logits, data.labels, cfg.calibration);
    const auto before = compute_ece(confidence_pairs(records), cfg.ece_bins).ece;
    const auto after = compute_ece(confidence_pairs(records, m.temperature), cfg.ece_bins).ece;
    diag << "temperature " << m.temperature << " nll " << m.fit_nll << " n " << m.n_fit << " ece " << before
         << " -> " << after;
    map = m;
  } else {
    const auto pairs = isotonic_pairs(records);
    const auto m = fit_isotonic(pairs);
    diag << "isotonic blocks " << m.breakpoints.size() << " sse " << m.sse << " n " << pairs.size();
    map = m;
  }
  std::cerr << diag.str() << "\n";
  write_output(common.output, dump(calibration_map_to_json(map)));
  return 0;
}

// ---- race --------------------------------------------------------------------------

int cmd_race(const Common& common) {
  const RunConfig cfg = load_config(common.config);
  const auto records = load_records(common.input);
  const auto dc = detect_config(cfg);
  json rows = json::array();
  std::ostringstream md;
  md << "# RACE\n\n| record | H_R | H_A | I | support | flag |\n|---|---|---|---|---|---|\n";
  std::size_t flagged = 0;
  for (const auto& r : records) {
    json row = {{"record_id", r.id}};
    try {
      const auto rep = race_metrics(r, dc.embed, dc.race);
      row["race"] = to_json(rep);
      flagged += rep.flag_right_answer_wrong_reasoning;
      md << "| " << r.id << " | " << num(rep.h_reasoning) << " | " << num(rep.h_answer) << " | "
         << num(rep.mutual_information) << " | " << num(rep.answer_support) << " | "
         << (rep.flag_right_answer_wrong_reasoning ? "yes" : "no") << " |\n";
    } catch (const CapabilityError& e) {
      row["race"] = nullptr;
      row["unavailable"] = e.what();
      md << "| " << r.id << " | - | - | - | - | unavailable |\n";
    }
    rows.push_back(std::move(row));
  }
  md << "\nflagged: " << flagged << " of " << records.size() << "\n";
  if (effective_format(common, cfg) == "md") {
    write_output(common.output, md.str());
  } else {
    write_output(common.output, dump({{"records", rows}, {"flagged", flagged}}));
  }
  return 0;
}

// ---- factcheck ---------------------------------------------------------------------

int cmd_factcheck(const Common& common, const std::string& store_path) {
  const RunConfig cfg = load_config(common.config);
  if (store_path.empty()) throw UsageError("--store is required");
  const auto store = load_fact_store(read_file(store_path));
  const auto records = load_records(common.input);
  json rows = json::array();
  std::map<std::string, std::size_t> counts{{"match", 0}, {"mismatch", 0}, {"unknown", 0}};
  std::ostringstream md;
  md << "# Fact check\n\n| record | key | claimed | reference | status |\n|---|---|---|---|---|\n";
  for (const auto& r : records) {
    json verdicts = json::array();
    if (r.reference_claims) {
      for (const auto& v : check_claims(*r.reference_claims, store, cfg.fact_tolerance)) {
        ++counts[to_string(v.status)];
        const json vj = to_json(v);
        md << "| " << r.id << " | " << v.key << " | " << claim_value_to_json(v.claimed).dump() << " | "
           << (v.reference ? claim_value_to_json(*v.reference).dump() : "-") << " | " << to_string(v.status)
           << " |\n";
        verdicts.push_back(vj);
      }
    }
    rows.push_back({{"record_id", r.id}, {"verdicts", verdicts}});
  }
  md << "\nmatch " << counts["match"] << ", mismatch " << counts["mismatch"] << ", unknown " << counts["unknown"]
     << "\n";
  if (effective_format(common, cfg) == "md") {
    write_output(common.output, md.str());
  } else {
    write_output(common.output, dump({{"records", rows}, {"summary", counts}}));
  }
  return 0;
}

// ---- pipeline ----------------------------------------------------------------------

int cmd_pipeline(const Common& common, std::string rules_path, const std::string& store_path,
                 const std::string& summary_path, const std::string& timestamp) {
  const RunConfig cfg = load_config(common.config);
  if (rules_path.empty()) rules_path = cfg.rules_path;
  std::vector<RouterRule> rules =
      rules_path.empty() ? default_rules() : rules_from_json(parse_json_file(rules_path, true));
  std::optional<FactStore> store;
  if (!store_path.empty()) store = load_fact_store(read_file(store_path));
  if (!store) {
    std::vector<RouterRule> kept;
    std::vector<std::string> skipped;
    for (auto& r : rules) {
      if (r.signal == "fact_mismatches" || r.signal == "fact_unknowns") {
        skipped.push_back(r.name);
      } else {
        kept.push_back(std::move(r));
      }
    }
    if (!skipped.empty()) {
      std::cerr << "warning: no fact store given; skipping data rules:";
      for (const auto& s : skipped) std::cerr << " " << s;
      std::cerr << "\n";
    }
    rules = std::move(kept);
  }
  const auto records = load_records(common.input);
  Clock clock = utc_timestamp;
  if (!timestamp.empty()) clock = [timestamp] { return timestamp; };
  const auto ledger = run_cycle(records, detect_config(cfg), store ? &*store : nullptr, rules, clock);
  if (effective_format(common, cfg) == "md") {
    write_output(common.output, ledger_markdown(ledger));
  } else {
    write_output(common.output, dump(to_json(ledger)));
  }
  if (!summary_path.empty()) write_output(summary_path, ledger_markdown(ledger));
  return 0;
}

// ---- mockgen -----------------------------------------------------------------------

int cmd_mockgen(const Common& common, const std::string& spec_path, const std::string& store_out) {
  MockSpec spec;
  if (!spec_path.empty()) {
    try {
      spec = mock_spec_from_json(parse_json_file(spec_path, true));
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
  }
  if (common.seed) spec.seed = *common.seed;
  validate_mock_spec(spec);
  const auto out = detail::generate(spec);
  write_output(common.output, write_records(out.corpus));
  if (!store_out.empty()) write_output(store_out, dump(to_json(out.store)));
  return 0;
}

// ---- chunk -------------------------------------------------------------------------

int cmd_chunk(const Common& common, std::size_t target, double overlap, std::size_t fan_in) {
  const RunConfig cfg = load_config(common.config);
  if (common.input.empty()) throw UsageError("--input is required");
  const std::string text = read_file(common.input);
  if (target < 1) throw UsageError("--target must be >= 1");
  if (!(overlap >= 0.0 && overlap < 0.5)) throw UsageError("--overlap must lie in [0, 0.5)");
  const auto chunks = chunk_document(text, target, overlap);
  if (effective_format(common, cfg) == "md") {
    std::ostringstream md;
    md << "# Chunks\n\n| index | start | end | chars |\n|---|---|---|---|\n";
    for (const auto& c : chunks) {
      md << "| " << c.index << " | " << c.start_offset << " | " << c.end_offset << " | " << c.text.size() << " |\n";
    }
    write_output(common.output, md.str());
    return 0;
  }
  json arr = json::array();
  for (const auto& c : chunks) {
    arr.push_back({{"index", c.index}, {"start_offset", c.start_offset}, {"end_offset", c.end_offset}, {"text", c.text}});
  }
  json out = {{"chunks", arr}, {"target", target}, {"overlap", overlap}};
  if (!chunks.empty()) {
    // No summarizer ships with the tool; the identity tree shows the reduce plan.
    const auto tree = summarize_map_reduce(chunks, [](const std::string& s) { return s; }, fan_in);
    json levels = json::array();
    for (const auto& lvl : tree.tree.levels) {
      json nodes = json::array();
      for (const auto& n : lvl) nodes.push_back({{"chunk_indices", n.chunk_indices}, {"children", n.children}});
      levels.push_back(nodes);
    }
    out["reduce_plan"] = levels;
  }
  write_output(common.output, dump(out));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hallucination detection metrics, calibration and routing over JSONL logs"};
  app.require_subcommand(1);

  Common common;
  std::string store_path, kind = "temperature", rules_path, summary_path, timestamp, spec_path, store_out;
  std::size_t target = 1000, fan_in = 2;
  double overlap = kDefaultChunkOverlap;

  auto* analyze = app.add_subcommand("analyze", "per-record detection signals and corpus aggregates");
  add_common(analyze, common);
  analyze->add_option("--store", store_path, "fact store JSON");

  auto* calibrate = app.add_subcommand("calibrate", "fit a calibration map");
  add_common(calibrate, common);
  calibrate->add_option("--kind", kind, "temperature or isotonic")
      ->check(CLI::IsMember({"temperature", "isotonic"}));

  auto* race = app.add_subcommand("race", "reasoning/answer consistency report");
  add_common(race, common);

  auto* factcheck = app.add_subcommand("factcheck", "check structured claims against a fact store");
  add_common(factcheck, common);
  factcheck->add_option("--store", store_path, "fact store JSON")->required();

  auto* pipeline = app.add_subcommand("pipeline", "detect, route and validate; writes a cycle ledger");
  add_common(pipeline, common);
  pipeline->add_option("--rules", rules_path, "router rules JSON (default rules otherwise)");
  pipeline->add_option("--store", store_path, "fact store JSON");
  pipeline->add_option("--summary", summary_path, "also write the markdown summary here");
  pipeline->add_option("--timestamp", timestamp, "pin ledger timestamps to this value");

  auto* mockgen = app.add_subcommand("mockgen", "generate a labelled synthetic corpus and fact store");
  add_common(mockgen, common, false);
  mockgen->add_option("--spec", spec_path, "mock spec JSON");
  mockgen->add_option("--out", common.output, "corpus JSONL output");
  mockgen->add_option("--store-out", store_out, "fact store JSON output");

  auto* chunk = app.add_subcommand("chunk", "split a text document into overlapping chunks");
  add_common(chunk, common);
  chunk->add_option("--target", target, "target chunk size in characters");
  chunk->add_option("--overlap", overlap, "overlap fraction in [0, 0.5)");
  chunk->add_option("--fan-in", fan_in, "reduce fan-in")->check(CLI::Range(std::size_t{2}, std::size_t{1024}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*analyze) return cmd_analyze(common, store_path);
    if (*calibrate) return cmd_calibrate(common, kind);
    if (*race) return cmd_race(common);
    if (*factcheck) return cmd_factcheck(common, store_path);
    if (*pipeline) return cmd_pipeline(common, rules_path, store_path, summary_path, timestamp);
    if (*mockgen) return cmd_mockgen(common, spec_path, store_out);
    if (*chunk) return cmd_chunk(common, target, overlap, fan_in);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
