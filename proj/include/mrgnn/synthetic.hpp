#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "mrgnn/data.hpp"

namespace mrgnn {

/// Parameters of a synthetic three-mode city with a planted cross-mode
/// dependency: bike inflow at station i in bin t is
///   alpha * subway_outflow[link(i)][t-1] + bike_base(t) + noise.
struct SyntheticSpec {
  int bike_nodes = 20;
  int subway_nodes = 10;
  int ridehail_nodes = 6;
  int bins = 600;
  std::int64_t bin_width = 4 * 3600;
  Timestamp start = 1519862400;  // 2018-03-01T00:00:00Z

  // Mean per-channel demand per bin. Each node draws a level in [0.5, 1.5) x base.
  double bike_base = 20.0;
  double subway_base = 60.0;
  double ridehail_base = 30.0;
  /// Relative amplitude of the daily cycle (0 = flat).
  double daily_amplitude = 0.5;
  /// Std of independent Gaussian noise added to every series.
  double noise = 2.0;
  /// Planted coupling from linked subway outflow to bike inflow.
  double alpha = 1.0;
  /// Innovation std and coefficient of the AR(1) component of subway demand.
  double subway_volatility = 15.0;
  double subway_persistence = 0.3;

  /// Side of the square region and maximum bike-to-linked-subway offset, meters.
  double region = 6000.0;
  double link_radius = 150.0;

  void validate() const;
};

struct SyntheticData {
  std::map<Mode, NodeSet> nodes;
  std::map<Mode, DemandTensor> demand;
  /// (bike index, subway index) pairs of the planted dependency.
  std::vector<std::pair<std::size_t, std::size_t>> links;
  double alpha = 0.0;
};

/// Deterministic for a fixed (spec, seed). Values are nonnegative integer counts.
SyntheticData generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace mrgnn
