#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mrgnn/common.hpp"

namespace mrgnn {

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

struct Point {
  double x = 0.0;  // meters east
  double y = 0.0;  // meters north
};

/// Stations or zones of one mode. Index order is the row/column order of every
/// matrix and tensor that references the mode.
struct NodeSet {
  Mode mode = Mode::bike;
  std::vector<std::string> node_ids;
  std::vector<Point> coordinates;

  std::size_t size() const { return node_ids.size(); }
  /// Throws DataError on duplicate ids, count mismatch or non-finite coordinates.
  void validate() const;
  std::vector<std::size_t> indices_of(const std::vector<std::string>& ids) const;
};

/// Per-mode inflow/outflow counts. Row `bin * nodes + node`, column 0 inflow,
/// column 1 outflow. Bin b covers [bin_start + b*bin_width, bin_start + (b+1)*bin_width).
struct DemandTensor {
  Mode mode = Mode::bike;
  std::vector<std::string> node_ids;
  Timestamp bin_start = 0;
  std::int64_t bin_width = 4 * 3600;
  Eigen::MatrixXd values;

  DemandTensor() = default;
  DemandTensor(Mode m, std::vector<std::string> ids, Timestamp start, std::int64_t width, std::size_t bins);

  std::size_t nodes() const { return node_ids.size(); }
  std::size_t bins() const { return nodes() == 0 ? 0 : static_cast<std::size_t>(values.rows()) / nodes(); }
  double& at(std::size_t bin, std::size_t node, int channel) {
    return values(static_cast<Eigen::Index>(bin * nodes() + node), channel);
  }
  double at(std::size_t bin, std::size_t node, int channel) const {
    return values(static_cast<Eigen::Index>(bin * nodes() + node), channel);
  }
  Timestamp bin_time(std::size_t bin) const { return bin_start + static_cast<Timestamp>(bin) * bin_width; }

  /// Bins [first, first + count) as a new tensor with shifted bin_start.
  DemandTensor slice(std::size_t first, std::size_t count) const;
  /// Keep the given node indices, in the given order.
  DemandTensor select_nodes(const std::vector<std::size_t>& keep) const;
  void validate() const;
};

inline constexpr int kInflow = 0;
inline constexpr int kOutflow = 1;

struct NormalizationStats {
  Mode mode = Mode::bike;
  double min = 0.0;
  double max = 0.0;

  double normalize(double v) const { return max > min ? (v - min) / (max - min) : 0.0; }
  double denormalize(double v) const { return max > min ? v * (max - min) + min : min; }
  double range() const { return max - min; }
};

enum class Split { train, val, test };

std::string_view to_string(Split split);

/// Chronological train/val/test partition of one mode's tensor.
struct SplitTensors {
  DemandTensor train, val, test;
  NormalizationStats stats;
  /// Absolute bin index (in the full span) of each split's first bin.
  std::size_t train_offset = 0, val_offset = 0, test_offset = 0;

  const DemandTensor& get(Split s) const;
  std::size_t offset(Split s) const;
};

/// Sequence activations for one mode: rows ordered (sample, step, node),
/// one column per channel.
struct Hidden {
  int batch = 0;
  int steps = 0;
  int nodes = 0;
  Eigen::MatrixXd data;

  Hidden() = default;
  Hidden(int b, int t, int n, int channels) : batch(b), steps(t), nodes(n), data(Eigen::MatrixXd::Zero(b * t * n, channels)) {}

  int channels() const { return static_cast<int>(data.cols()); }
  Eigen::Index row(int b, int t, int n = 0) const { return (static_cast<Eigen::Index>(b) * steps + t) * nodes + n; }
  auto slice(int b, int t) { return data.middleRows(row(b, t), nodes); }
  auto slice(int b, int t) const { return data.middleRows(row(b, t), nodes); }
};

/// Supervised windows of one split. inputs[m] is (samples, T, N_m, 2);
/// targets[m] rows are (sample, node).
struct WindowedDataset {
  Split split = Split::train;
  int window = 6;
  std::map<Mode, Hidden> inputs;
  std::map<Mode, Eigen::MatrixXd> targets;
  /// Absolute bin index of each sample's target bin.
  std::vector<std::size_t> target_bins;
  std::vector<Timestamp> target_times;

  int samples() const { return static_cast<int>(target_bins.size()); }
  /// Subset of samples in the given order.
  WindowedDataset batch(const std::vector<int>& sample_ids) const;
};

}  // namespace mrgnn
