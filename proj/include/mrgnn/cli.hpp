#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mrgnn/config.hpp"

namespace mrgnn::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

struct Options {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  bool resume = false;
  /// Hidden: end each training run after this many epochs, keeping resumable state.
  std::optional<int> stop_after_epoch;
};

// Output names, relative to the output directory.
inline constexpr const char* kDatasetFile = "dataset.mrds";
inline constexpr const char* kIngestSummaryFile = "ingest_summary.json";
inline constexpr const char* kGraphFile = "graphs.mrgs";
inline constexpr const char* kGraphCensusFile = "graph_census.json";
inline constexpr const char* kTrainMetricsFile = "train_metrics.csv";
inline constexpr const char* kEvaluationFile = "evaluation.csv";
inline constexpr const char* kAblationFile = "ablation.csv";
inline constexpr const char* kAblationRunsFile = "ablation_runs.csv";
inline constexpr const char* kSynthTotalsFile = "synth_totals.json";
inline constexpr const char* kSynthConfigFile = "synth_config.json";
inline constexpr const char* kLinkMapFile = "link_map.csv";

/// Per-seed training artifacts: run_<seed>/{checkpoint.mrck, train_log.csv, state.mrts}.
std::filesystem::path run_dir(const std::filesystem::path& out, std::uint64_t seed);

/// Config file (or defaults when absent) with flag overrides applied.
ExperimentConfig resolve_config(const Options& options);

void cmd_ingest(const ExperimentConfig& config, std::ostream& log);
void cmd_build_graphs(const ExperimentConfig& config, std::ostream& log);
void cmd_train(const ExperimentConfig& config, const Options& options, std::ostream& log);
void cmd_evaluate(const ExperimentConfig& config, std::ostream& log);
void cmd_ablate(const ExperimentConfig& config, std::ostream& log);
void cmd_synth(const ExperimentConfig& config, std::ostream& log);

/// Runs one command and maps exceptions onto exit codes, writing a single
/// `error kind=<kind> code=<n> message=<text>` line to `err` on failure.
int run(const std::string& command, const Options& options, std::ostream& out, std::ostream& err);

}  // namespace mrgnn::cli
