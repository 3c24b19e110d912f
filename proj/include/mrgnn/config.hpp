#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include <json.hpp>

#include "mrgnn/graphs.hpp"
#include "mrgnn/ingest.hpp"
#include "mrgnn/model.hpp"
#include "mrgnn/synthetic.hpp"
#include "mrgnn/train.hpp"

namespace mrgnn {

/// Raw inputs for one mode. Trip modes use `records` as a trip file; the
/// subway uses it as a turnstile count file read with `schema`.
struct ModeSource {
  std::filesystem::path records;
  std::filesystem::path nodes;
  CountSchema schema = CountSchema::cumulative;
};

/// Declarative experiment description. Every field not present in the file
/// keeps the default below.
struct ExperimentConfig {
  Mode target = Mode::bike;
  std::vector<Mode> modes{Mode::bike, Mode::subway, Mode::ridehail};
  std::map<Mode, ModeSource> sources;

  std::optional<Timestamp> span_start;
  std::optional<Timestamp> span_end;
  std::int64_t bin_width = 4 * 3600;
  std::array<double, 3> splits{0.6, 0.2, 0.2};
  int window = 6;
  FilterParams filters;
  GraphParams graph;
  ModelConfig model;
  TrainConfig train;
  std::filesystem::path out_dir = "out";

  SyntheticSpec synth;
  std::uint64_t synth_seed = 1;

  /// Checks every value; paths only when `require_sources`.
  void validate(bool require_sources) const;
  ExperimentSpec experiment_spec() const;
};

/// Relative paths resolve against `base_dir`. Unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

}  // namespace mrgnn
