#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "mrgnn/cli.hpp"
#include "test_support.hpp"

using namespace mrgnn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(const std::string& command, cli::Options opts) {
  std::ostringstream out, err;
  const int code = cli::run(command, opts, out, err);
  return {code, out.str(), err.str()};
}

cli::Options with_config(const fs::path& config) {
  cli::Options o;
  o.config = config;
  return o;
}

/// Generates a small synthetic corpus in `dir` and writes `pipeline.json`
/// next to it with a tiny model and short training.
fs::path make_corpus(const fs::path& dir, std::uint64_t seed = 11) {
  fs::create_directories(dir);
  write_file(dir / "synth.json", json{{"synth",
                                       {{"bike_nodes", 6},
                                        {"subway_nodes", 3},
                                        {"ridehail_nodes", 3},
                                        {"bins", 150},
                                        {"seed", seed}}},
                                      {"out", "."}}
                                     .dump());
  const Outcome s = run("synth", with_config(dir / "synth.json"));
  REQUIRE_MESSAGE(s.code == 0, s.err);
  json j = json::parse(read_file(dir / cli::kSynthConfigFile));
  j["filters"] = {{"bike_min_orders_per_hour", 0.5}, {"subway_max_zero_run", 42}};
  j["model"] = {{"channels", {4, 4}}, {"kernel", 2}, {"head_hidden", 6}};
  j["train"] = {{"max_epochs", 3}, {"batch_size", 16}, {"patience", 5}};
  j["seeds"] = {1};
  j["out"] = "run";
  write_file(dir / "pipeline.json", j.dump(2));
  return dir / "pipeline.json";
}

void prepare(const fs::path& config, std::optional<fs::path> out = {}) {
  cli::Options o = with_config(config);
  o.out = out;
  const Outcome a = run("ingest", o);
  REQUIRE_MESSAGE(a.code == 0, a.err);
  const Outcome b = run("build-graphs", o);
  REQUIRE_MESSAGE(b.code == 0, b.err);
}

}  // namespace

TEST_CASE("synthetic corpus is deterministic and links are recorded") {
  testing::TempDir dir("cli_synth");
  make_corpus(dir / "a", 5);
  make_corpus(dir / "b", 5);
  for (const char* name : {"bike_trips.csv", "subway_counts.csv", "ridehail_trips.csv", "bike_nodes.csv",
                           "subway_nodes.csv", "ridehail_nodes.csv", cli::kLinkMapFile, cli::kSynthTotalsFile}) {
    CAPTURE(name);
    CHECK(read_file(dir / "a" / name) == read_file(dir / "b" / name));
  }
  make_corpus(dir / "c", 6);
  CHECK(read_file(dir / "a" / "bike_trips.csv") != read_file(dir / "c" / "bike_trips.csv"));

  std::istringstream links(read_file(dir / "a" / cli::kLinkMapFile));
  std::string line;
  std::getline(links, line);
  CHECK(line == "bike_id,subway_id");
  int rows = 0;
  while (std::getline(links, line)) {
    const auto comma = line.find(',');
    const int bike = std::stoi(line.substr(line.find_first_of("0123456789")));
    const std::string subway = line.substr(comma + 1);
    CHECK(std::stoi(subway.substr(subway.find_first_of("0123456789"))) == bike % 3);
    ++rows;
  }
  CHECK(rows == 6);
}

TEST_CASE("ingest conserves synthetic totals and is reproducible") {
  testing::TempDir dir("cli_ingest");
  const fs::path config = make_corpus(dir.path());
  prepare(config);
  const json summary = json::parse(read_file(dir / "run" / cli::kIngestSummaryFile));
  const json totals = json::parse(read_file(dir / cli::kSynthTotalsFile));
  for (const char* m : {"bike", "subway", "ridehail"}) {
    CAPTURE(m);
    const json& s = summary.at("modes").at(m);
    CHECK(s.at("binned_inflow").get<double>() == totals.at("modes").at(m).at("inflow").get<double>());
    CHECK(s.at("binned_outflow").get<double>() == totals.at("modes").at(m).at("outflow").get<double>());
    CHECK(s.at("rows_skipped").get<int>() == 0);
  }
  const std::string first = read_file(dir / "run" / cli::kDatasetFile);
  cli::Options o = with_config(config);
  REQUIRE(run("ingest", o).code == 0);
  CHECK(read_file(dir / "run" / cli::kDatasetFile) == first);
}

TEST_CASE("graph census follows the mode combination") {
  testing::TempDir dir("cli_graphs");
  const fs::path config = make_corpus(dir.path());
  prepare(config);
  CHECK(json::parse(read_file(dir / "run" / cli::kGraphCensusFile)).at("relations").get<int>() == 10);

  json j = json::parse(read_file(config));
  j["modes"] = {"bike"};
  j["out"] = "bike_only";
  write_file(dir / "bike.json", j.dump());
  prepare(dir / "bike.json");
  CHECK(json::parse(read_file(dir / "bike_only" / cli::kGraphCensusFile)).at("relations").get<int>() == 2);
}

TEST_CASE("training, evaluation and resume through the command surface") {
  testing::TempDir dir("cli_train");
  const fs::path config = make_corpus(dir.path());
  json j = json::parse(read_file(config));
  j["seeds"] = {1, 2};
  write_file(config, j.dump());
  prepare(config);

  const Outcome t = run("train", with_config(config));
  REQUIRE_MESSAGE(t.code == 0, t.err);
  CHECK(fs::exists(dir / "run" / "run_1" / "checkpoint.mrck"));
  CHECK(fs::exists(dir / "run" / "run_2" / "checkpoint.mrck"));
  const std::string metrics = read_file(dir / "run" / cli::kTrainMetricsFile);
  CHECK(metrics.find("B-MRGNN,bike+subway+ridehail,1,") != std::string::npos);
  CHECK(metrics.find("B-MRGNN,bike+subway+ridehail,2,") != std::string::npos);
  CHECK(metrics.find("B-MRGNN,bike+subway+ridehail,mean,") != std::string::npos);

  const Outcome e = run("evaluate", with_config(config));
  REQUIRE_MESSAGE(e.code == 0, e.err);
  const std::string eval = read_file(dir / "run" / cli::kEvaluationFile);
  for (const char* row : {"B-MRGNN,", "HA,bike,", "LR,bike,"}) CHECK(eval.find(row) != std::string::npos);
  // Same checkpoints score the same on the test split.
  CHECK(eval.find(metrics.substr(metrics.find("B-MRGNN,bike+subway+ridehail,1,"), 40)) != std::string::npos);

  SUBCASE("interrupted run resumes to the uninterrupted result") {
    const fs::path other = dir / "resumed";
    prepare(config, other);
    cli::Options o = with_config(config);
    o.out = other;
    o.stop_after_epoch = 1;
    const Outcome first = run("train", o);
    REQUIRE_MESSAGE(first.code == 0, first.err);
    CHECK(first.out.find("--resume") != std::string::npos);
    CHECK_FALSE(fs::exists(other / "run_1" / "checkpoint.mrck"));
    o.stop_after_epoch.reset();
    o.resume = true;
    const Outcome second = run("train", o);
    REQUIRE_MESSAGE(second.code == 0, second.err);
    CHECK(read_file(other / "run_1" / "train_log.csv") == read_file(dir / "run" / "run_1" / "train_log.csv"));
    CHECK(read_file(other / cli::kTrainMetricsFile) == metrics);
  }

  SUBCASE("corrupted graph archive is rejected") {
    std::string bytes = read_file(dir / "run" / cli::kGraphFile);
    bytes[bytes.size() / 2] ^= 0x5a;
    write_file(dir / "run" / cli::kGraphFile, bytes);
    const Outcome bad = run("evaluate", with_config(config));
    CHECK(bad.code == cli::kExitData);
    CHECK(bad.err.starts_with("error kind=data code=3 message="));
  }
}

TEST_CASE("ablation rows cover every combination") {
  testing::TempDir dir("cli_ablate");
  const fs::path config = make_corpus(dir.path());
  json j = json::parse(read_file(config));
  j["train"]["max_epochs"] = 1;
  write_file(config, j.dump());
  prepare(config);
  const Outcome a = run("ablate", with_config(config));
  REQUIRE_MESSAGE(a.code == 0, a.err);
  std::istringstream rows(read_file(dir / "run" / cli::kAblationFile));
  std::string line;
  std::getline(rows, line);
  CHECK(line == "combination,rmse,mae,r2,runs,status");
  std::vector<std::string> labels;
  while (std::getline(rows, line)) {
    labels.push_back(line.substr(0, line.find(',')));
    CHECK(line.ends_with(",1,ok"));
  }
  CHECK(labels == std::vector<std::string>{"bike", "bike+subway", "bike+ridehail", "bike+subway+ridehail"});
}

TEST_CASE("errors map onto exit codes") {
  testing::TempDir dir("cli_errors");
  const fs::path config = make_corpus(dir.path());

  SUBCASE("missing column names file and column") {
    std::string trips = read_file(dir / "bike_trips.csv");
    trips.replace(trips.find("pickup_id"), 9, "pickup_xx");
    write_file(dir / "bike_trips.csv", trips);
    const Outcome r = run("ingest", with_config(config));
    CHECK(r.code == cli::kExitData);
    CHECK(r.err.find("bike_trips.csv") != std::string::npos);
    CHECK(r.err.find("pickup_id") != std::string::npos);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  }
  SUBCASE("unknown config key") {
    write_file(dir / "bad.json", R"({"trian": {}})");
    CHECK(run("train", with_config(dir / "bad.json")).code == cli::kExitConfig);
  }
  SUBCASE("malformed json") {
    write_file(dir / "bad.json", "{");
    CHECK(run("ingest", with_config(dir / "bad.json")).code == cli::kExitConfig);
  }
  SUBCASE("missing config file") { CHECK(run("ingest", with_config(dir / "nope.json")).code == cli::kExitConfig); }
  SUBCASE("unknown command") { CHECK(run("fly", {}).code == cli::kExitConfig); }
  SUBCASE("invalid value") {
    json j = json::parse(read_file(config));
    j["splits"] = {0.5, 0.5, 0.5};
    write_file(dir / "bad.json", j.dump());
    CHECK(run("ingest", with_config(dir / "bad.json")).code == cli::kExitConfig);
  }
  SUBCASE("train before ingest") { CHECK(run("train", with_config(config)).code == cli::kExitData); }
}

TEST_CASE("seed flag overrides the configured seeds") {
  cli::Options o;
  o.seed = 42;
  o.out = "somewhere";
  const ExperimentConfig c = cli::resolve_config(o);
  CHECK(c.train.seeds == std::vector<std::uint64_t>{42});
  CHECK(c.synth_seed == 42);
  CHECK(c.out_dir == fs::path("somewhere"));
}

#ifdef MRGNN_CLI_BINARY
TEST_CASE("command line binary") {
  testing::TempDir dir("cli_binary");
  const std::string bin = MRGNN_CLI_BINARY;
  auto status = [](const std::string& cmd) {
    const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status(bin + " --help") == 0);
  CHECK(status(bin + " --bogus synth") == cli::kExitConfig);
  CHECK(status(bin + " --seed 3 --out " + (dir / "s").string() + " synth") == 0);
  CHECK(fs::exists(dir / "s" / cli::kLinkMapFile));
  CHECK(status(bin + " --config " + (dir / "missing.json").string() + " ingest") == cli::kExitConfig);
}
#endif
