#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrgnn/data.hpp"

namespace mrgnn {

// ---------------------------------------------------------------------------
// Raw records

enum class TripSchema { bike, ridehail };
enum class CountSchema { cumulative, delta };

struct TripEvent {
  Timestamp pickup_time = 0;
  std::size_t pickup_node = 0;
  Timestamp dropoff_time = 0;
  std::size_t dropoff_node = 0;
};

struct TripLoad {
  std::vector<TripEvent> events;
  std::size_t rows = 0;
  std::size_t skipped = 0;
};

/// Reads `pickup_time, pickup_id, dropoff_time, dropoff_id` rows (extra
/// columns are ignored). Rows with bad timestamps or ids not in `nodes` are
/// skipped and counted.
TripLoad load_trip_records(const std::filesystem::path& path, const NodeSet& nodes, TripSchema schema);

/// Entries/exits attributed to the period starting at `period_start`.
struct PeriodCount {
  std::size_t node = 0;
  Timestamp period_start = 0;
  double entries = 0.0;
  double exits = 0.0;
};

struct CountLoad {
  std::vector<PeriodCount> counts;
  std::size_t rows = 0;
  std::size_t skipped = 0;
  /// Negative deltas (counter resets) clamped to zero.
  std::size_t anomalies = 0;
};

/// Reads `station_id, period_start, entries, exits` rows; an optional
/// `turnstile_id` column splits a station into independent counter streams.
/// Cumulative streams are differenced between consecutive readings.
CountLoad load_turnstile_counts(const std::filesystem::path& path, const NodeSet& nodes, CountSchema schema);

/// Differencing of one cumulative counter stream; negative steps clamp to 0.
struct DeltaResult {
  std::vector<double> deltas;
  std::size_t anomalies = 0;
};
DeltaResult cumulative_deltas(const std::vector<double>& readings);

/// Parses "YYYY-MM-DDTHH:MM[:SS]" (a space may replace 'T', trailing 'Z' allowed) as UTC.
std::optional<Timestamp> parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

// ---------------------------------------------------------------------------
// Node registries

struct RawNode {
  std::string id;
  double lon = 0.0;
  double lat = 0.0;
};

std::vector<RawNode> load_node_registry(const std::filesystem::path& path);

/// Equirectangular projection to meters around a shared origin, so distances
/// are comparable across modes.
std::map<Mode, NodeSet> project_registries(const std::map<Mode, std::vector<RawNode>>& registries);

/// Inverse of the projection used by project_registries for a given origin.
RawNode unproject(const std::string& id, Point p, double origin_lon, double origin_lat);

// ---------------------------------------------------------------------------
// Binning, filtering, splitting, windowing

struct Span {
  Timestamp start = 0;
  Timestamp end = 0;
  std::int64_t bin_width = 4 * 3600;

  /// Throws ConfigError when the width does not divide the span.
  std::size_t bins() const;
};

struct BinCounts {
  std::size_t pickups = 0;
  std::size_t dropoffs = 0;
  std::size_t pickups_outside = 0;
  std::size_t dropoffs_outside = 0;
};

/// outflow counts pickups, inflow counts dropoffs. Pickup and dropoff are
/// binned independently; either end outside the span is dropped and counted.
DemandTensor bin_demand(const std::vector<TripEvent>& events, const NodeSet& nodes, const Span& span,
                        BinCounts* counts = nullptr);

/// entries -> inflow, exits -> outflow.
DemandTensor bin_counts(const std::vector<PeriodCount>& counts, const NodeSet& nodes, const Span& span,
                        BinCounts* outside = nullptr);

enum class FilterRule { min_orders_per_hour, max_zero_run, none };

struct FilterParams {
  double min_orders_per_hour = 3.0;
  std::size_t max_zero_run = 42;
};

/// Rule that applies to each mode: bike -> min_orders_per_hour,
/// subway -> max_zero_run, ridehail -> none.
FilterRule default_rule(Mode mode);

struct FilterResult {
  DemandTensor tensor;
  std::vector<std::string> kept;
  std::vector<std::string> dropped;
};

FilterResult filter_nodes(const DemandTensor& tensor, FilterRule rule, const FilterParams& params = {});

/// Chronological split with per-mode min-max scaling fitted on the training part.
SplitTensors split_and_normalize(const DemandTensor& tensor, std::array<double, 3> ratios = {0.6, 0.2, 0.2});

/// Samples whose T input bins and target bin all fall inside the split.
WindowedDataset make_windows(const std::map<Mode, SplitTensors>& splits, Split split, int window = 6);

// ---------------------------------------------------------------------------
// Persisted dataset

struct PreparedData {
  std::map<Mode, NodeSet> nodes;
  std::map<Mode, SplitTensors> splits;
  int window = 6;

  std::vector<Mode> modes() const;
  /// Same data restricted to a subset of modes.
  PreparedData subset(const std::vector<Mode>& modes) const;
};

void save_dataset(const PreparedData& data, const std::filesystem::path& path);
PreparedData load_dataset(const std::filesystem::path& path);

}  // namespace mrgnn
