#include <algorithm>
#include <cmath>
#include <set>

#include "mrgnn/archive.hpp"
#include "mrgnn/ingest.hpp"

namespace mrgnn {

namespace {
constexpr char kDatasetMagic[] = "MRDS\0\0\0\1";
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

// ---------------------------------------------------------------------------
// Data types

void NodeSet::validate() const {
  if (coordinates.size() != node_ids.size()) {
    throw DataError("node set '" + std::string(to_string(mode)) + "': coordinate count does not match node count");
  }
  std::set<std::string> seen;
  for (const auto& id : node_ids) {
    if (!seen.insert(id).second) {
      throw DataError("node set '" + std::string(to_string(mode)) + "': duplicate node id '" + id + "'");
    }
  }
  for (const auto& p : coordinates) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw DataError("node set '" + std::string(to_string(mode)) + "': non-finite coordinate");
    }
  }
}

std::vector<std::size_t> NodeSet::indices_of(const std::vector<std::string>& ids) const {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = std::find(node_ids.begin(), node_ids.end(), id);
    if (it == node_ids.end()) throw DataError("unknown node id '" + id + "'");
    out.push_back(static_cast<std::size_t>(it - node_ids.begin()));
  }
  return out;
}

DemandTensor::DemandTensor(Mode m, std::vector<std::string> ids, Timestamp start, std::int64_t width, std::size_t bins)
    : mode(m), node_ids(std::move(ids)), bin_start(start), bin_width(width) {
  values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(bins * node_ids.size()), 2);
}

DemandTensor DemandTensor::slice(std::size_t first, std::size_t count) const {
  if (first + count > bins()) throw std::out_of_range("tensor slice beyond last bin");
  DemandTensor out(mode, node_ids, bin_time(first), bin_width, count);
  out.values = values.middleRows(static_cast<Eigen::Index>(first * nodes()), static_cast<Eigen::Index>(count * nodes()));
  return out;
}

DemandTensor DemandTensor::select_nodes(const std::vector<std::size_t>& keep) const {
  std::vector<std::string> ids;
  for (auto k : keep) ids.push_back(node_ids.at(k));
  DemandTensor out(mode, std::move(ids), bin_start, bin_width, bins());
  for (std::size_t b = 0; b < bins(); ++b) {
    for (std::size_t i = 0; i < keep.size(); ++i) {
      out.values.row(static_cast<Eigen::Index>(b * keep.size() + i)) =
          values.row(static_cast<Eigen::Index>(b * nodes() + keep[i]));
    }
  }
  return out;
}

void DemandTensor::validate() const {
  if (nodes() == 0) throw DataError("demand tensor has no nodes");
  if (values.cols() != 2 || values.rows() % static_cast<Eigen::Index>(nodes()) != 0) {
    throw DataError("demand tensor shape inconsistent with node count");
  }
  if (!values.allFinite() || (values.array() < 0).any()) {
    throw DataError("demand tensor for '" + std::string(to_string(mode)) + "' has negative or non-finite values");
  }
  if (bin_width <= 0) throw DataError("demand tensor bin width must be positive");
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "unknown";
}

const DemandTensor& SplitTensors::get(Split s) const {
  switch (s) {
    case Split::train:
      return train;
    case Split::val:
      return val;
    case Split::test:
      return test;
  }
  return train;
}

std::size_t SplitTensors::offset(Split s) const {
  switch (s) {
    case Split::train:
      return train_offset;
    case Split::val:
      return val_offset;
    case Split::test:
      return test_offset;
  }
  return 0;
}

WindowedDataset WindowedDataset::batch(const std::vector<int>& sample_ids) const {
  WindowedDataset out;
  out.split = split;
  out.window = window;
  const int b = static_cast<int>(sample_ids.size());
  for (const auto& [mode, x] : inputs) {
    Hidden h(b, x.steps, x.nodes, x.channels());
    const auto& y = targets.at(mode);
    Eigen::MatrixXd t(static_cast<Eigen::Index>(b) * x.nodes, y.cols());
    for (int i = 0; i < b; ++i) {
      const int s = sample_ids[static_cast<std::size_t>(i)];
      h.data.middleRows(h.row(i, 0), x.steps * x.nodes) = x.data.middleRows(x.row(s, 0), x.steps * x.nodes);
      t.middleRows(static_cast<Eigen::Index>(i) * x.nodes, x.nodes) =
          y.middleRows(static_cast<Eigen::Index>(s) * x.nodes, x.nodes);
    }
    out.inputs.emplace(mode, std::move(h));
    out.targets.emplace(mode, std::move(t));
  }
  for (int s : sample_ids) {
    out.target_bins.push_back(target_bins.at(static_cast<std::size_t>(s)));
    out.target_times.push_back(target_times.at(static_cast<std::size_t>(s)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binning

std::size_t Span::bins() const {
  if (bin_width <= 0) throw ConfigError("bin width must be positive");
  if (end <= start) throw ConfigError("span end must be after span start");
  if ((end - start) % bin_width != 0) throw ConfigError("bin width does not divide the span evenly");
  return static_cast<std::size_t>((end - start) / bin_width);
}

namespace {

std::optional<std::size_t> bin_of(const Span& span, Timestamp t) {
  if (t < span.start || t >= span.end) return std::nullopt;
  return static_cast<std::size_t>((t - span.start) / span.bin_width);
}

}  // namespace

DemandTensor bin_demand(const std::vector<TripEvent>& events, const NodeSet& nodes, const Span& span,
                        BinCounts* counts) {
  const std::size_t bins = span.bins();
  DemandTensor out(nodes.mode, nodes.node_ids, span.start, span.bin_width, bins);
  BinCounts c;
  for (const auto& e : events) {
    if (e.pickup_node >= nodes.size() || e.dropoff_node >= nodes.size()) throw DataError("trip event node out of range");
    if (auto b = bin_of(span, e.pickup_time)) {
      out.at(*b, e.pickup_node, kOutflow) += 1.0;
      ++c.pickups;
    } else {
      ++c.pickups_outside;
    }
    if (auto b = bin_of(span, e.dropoff_time)) {
      out.at(*b, e.dropoff_node, kInflow) += 1.0;
      ++c.dropoffs;
    } else {
      ++c.dropoffs_outside;
    }
  }
  if (counts) *counts = c;
  return out;
}

DemandTensor bin_counts(const std::vector<PeriodCount>& counts, const NodeSet& nodes, const Span& span,
                        BinCounts* outside) {
  const std::size_t bins = span.bins();
  DemandTensor out(nodes.mode, nodes.node_ids, span.start, span.bin_width, bins);
  BinCounts c;
  for (const auto& pc : counts) {
    if (pc.node >= nodes.size()) throw DataError("count node out of range");
    if (auto b = bin_of(span, pc.period_start)) {
      out.at(*b, pc.node, kInflow) += pc.entries;
      out.at(*b, pc.node, kOutflow) += pc.exits;
      ++c.pickups;
    } else {
      ++c.pickups_outside;
    }
  }
  if (outside) *outside = c;
  return out;
}

// ---------------------------------------------------------------------------
// Filtering

FilterRule default_rule(Mode mode) {
  switch (mode) {
    case Mode::bike:
      return FilterRule::min_orders_per_hour;
    case Mode::subway:
      return FilterRule::max_zero_run;
    case Mode::ridehail:
      return FilterRule::none;
  }
  return FilterRule::none;
}

FilterResult filter_nodes(const DemandTensor& tensor, FilterRule rule, const FilterParams& params) {
  if (rule != default_rule(tensor.mode)) {
    throw ConfigError("filter rule does not apply to mode '" + std::string(to_string(tensor.mode)) + "'");
  }
  const std::size_t n = tensor.nodes(), bins = tensor.bins();
  std::vector<std::size_t> keep;
  FilterResult result;
  for (std::size_t i = 0; i < n; ++i) {
    bool kept = true;
    if (rule == FilterRule::min_orders_per_hour) {
      double total = 0.0;
      for (std::size_t b = 0; b < bins; ++b) total += tensor.at(b, i, kInflow) + tensor.at(b, i, kOutflow);
      const double hours = static_cast<double>(bins) * static_cast<double>(tensor.bin_width) / 3600.0;
      kept = hours > 0 && total / hours >= params.min_orders_per_hour;
    } else if (rule == FilterRule::max_zero_run) {
      std::size_t run = 0, longest = 0;
      for (std::size_t b = 0; b < bins; ++b) {
        const bool zero = tensor.at(b, i, kInflow) + tensor.at(b, i, kOutflow) == 0.0;
        run = zero ? run + 1 : 0;
        longest = std::max(longest, run);
      }
      kept = longest < params.max_zero_run;
    }
    if (kept) {
      keep.push_back(i);
      result.kept.push_back(tensor.node_ids[i]);
    } else {
      result.dropped.push_back(tensor.node_ids[i]);
    }
  }
  result.tensor = tensor.select_nodes(keep);
  return result;
}

// ---------------------------------------------------------------------------
// Splitting and windowing

SplitTensors split_and_normalize(const DemandTensor& tensor, std::array<double, 3> ratios) {
  for (double r : ratios) {
    if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  const std::size_t bins = tensor.bins();
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(bins)));
  const auto n_val = static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(bins)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= bins) {
    throw DataError("too few bins (" + std::to_string(bins) + ") to form train/val/test splits");
  }
  SplitTensors out;
  out.train = tensor.slice(0, n_train);
  out.val = tensor.slice(n_train, n_val);
  out.test = tensor.slice(n_train + n_val, bins - n_train - n_val);
  out.train_offset = 0;
  out.val_offset = n_train;
  out.test_offset = n_train + n_val;

  out.stats.mode = tensor.mode;
  out.stats.min = out.train.values.minCoeff();
  out.stats.max = out.train.values.maxCoeff();
  const auto& st = out.stats;
  for (DemandTensor* t : {&out.train, &out.val, &out.test}) {
    t->values = t->values.unaryExpr([&st](double v) { return st.normalize(v); });
  }
  return out;
}

WindowedDataset make_windows(const std::map<Mode, SplitTensors>& splits, Split split, int window) {
  if (splits.empty()) throw DataError("no modes to window");
  if (window < 1) throw ConfigError("window length must be at least 1");
  const DemandTensor& ref = splits.begin()->second.get(split);
  const std::size_t bins = ref.bins();
  for (const auto& [mode, s] : splits) {
    const auto& t = s.get(split);
    if (t.bins() != bins || t.bin_start != ref.bin_start || t.bin_width != ref.bin_width) {
      throw DataError("modes do not share the same bin axis in the " + std::string(to_string(split)) + " split");
    }
  }
  if (bins < static_cast<std::size_t>(window) + 1) {
    throw DataError(std::string(to_string(split)) + " split has " + std::to_string(bins) +
                    " bins; at least window+1 = " + std::to_string(window + 1) + " are required");
  }
  const int samples = static_cast<int>(bins) - window;
  const std::size_t offset = splits.begin()->second.offset(split);

  WindowedDataset out;
  out.split = split;
  out.window = window;
  for (const auto& [mode, s] : splits) {
    const auto& t = s.get(split);
    const int n = static_cast<int>(t.nodes());
    Hidden x(samples, window, n, 2);
    Eigen::MatrixXd y(static_cast<Eigen::Index>(samples) * n, 2);
    for (int i = 0; i < samples; ++i) {
      // sample i: inputs are bins i .. i+window-1, target bin i+window
      x.data.middleRows(x.row(i, 0), window * n) = t.values.middleRows(static_cast<Eigen::Index>(i) * n, window * n);
      y.middleRows(static_cast<Eigen::Index>(i) * n, n) =
          t.values.middleRows(static_cast<Eigen::Index>(i + window) * n, n);
    }
    out.inputs.emplace(mode, std::move(x));
    out.targets.emplace(mode, std::move(y));
  }
  for (int i = 0; i < samples; ++i) {
    out.target_bins.push_back(offset + static_cast<std::size_t>(i + window));
    out.target_times.push_back(ref.bin_time(static_cast<std::size_t>(i + window)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset archive

std::vector<Mode> PreparedData::modes() const {
  std::vector<Mode> out;
  for (const auto& [m, _] : splits) out.push_back(m);
  return out;
}

PreparedData PreparedData::subset(const std::vector<Mode>& modes) const {
  PreparedData out;
  out.window = window;
  for (Mode m : canonical_modes(modes)) {
    if (!splits.contains(m) || !nodes.contains(m)) {
      throw DataError("dataset has no '" + std::string(to_string(m)) + "' mode");
    }
    out.splits.emplace(m, splits.at(m));
    out.nodes.emplace(m, nodes.at(m));
  }
  return out;
}

void save_dataset(const PreparedData& data, const std::filesystem::path& path) {
  Archive a;
  a.magic.assign(kDatasetMagic, 8);
  a.version = kDatasetVersion;
  a.manifest["window"] = data.window;
  auto& modes = a.manifest["modes"];
  modes = nlohmann::json::array();
  for (const auto& [mode, s] : data.splits) {
    const auto& ns = data.nodes.at(mode);
    if (ns.node_ids != s.train.node_ids) throw DataError("node set and tensor disagree on node order");
    nlohmann::json m;
    m["mode"] = to_string(mode);
    m["node_ids"] = ns.node_ids;
    m["bin_start"] = s.train.bin_start;
    m["bin_width"] = s.train.bin_width;
    m["offsets"] = {s.train_offset, s.val_offset, s.test_offset};
    m["bins"] = {s.train.bins(), s.val.bins(), s.test.bins()};
    m["stats"] = {s.stats.min, s.stats.max};
    modes.push_back(m);
    const std::string prefix(to_string(mode));
    Eigen::MatrixXd coords(static_cast<Eigen::Index>(ns.size()), 2);
    for (std::size_t i = 0; i < ns.size(); ++i) {
      coords(static_cast<Eigen::Index>(i), 0) = ns.coordinates[i].x;
      coords(static_cast<Eigen::Index>(i), 1) = ns.coordinates[i].y;
    }
    a.arrays[prefix + ".coordinates"] = coords;
    a.arrays[prefix + ".train"] = s.train.values;
    a.arrays[prefix + ".val"] = s.val.values;
    a.arrays[prefix + ".test"] = s.test.values;
  }
  write_archive(a, path);
}

PreparedData load_dataset(const std::filesystem::path& path) {
  Archive a = read_archive(path, std::string_view(kDatasetMagic, 8), kDatasetVersion);
  PreparedData out;
  try {
    out.window = a.manifest.at("window").get<int>();
    for (const auto& m : a.manifest.at("modes")) {
      const Mode mode = parse_mode(m.at("mode").get<std::string>());
      const std::string prefix(to_string(mode));
      NodeSet ns;
      ns.mode = mode;
      ns.node_ids = m.at("node_ids").get<std::vector<std::string>>();
      const auto& coords = a.array(prefix + ".coordinates");
      if (coords.rows() != static_cast<Eigen::Index>(ns.node_ids.size()) || coords.cols() != 2) {
        throw FormatError("coordinate array does not match node list for '" + prefix + "'");
      }
      for (Eigen::Index i = 0; i < coords.rows(); ++i) ns.coordinates.push_back({coords(i, 0), coords(i, 1)});
      ns.validate();

      SplitTensors s;
      const auto start = m.at("bin_start").get<Timestamp>();
      const auto width = m.at("bin_width").get<std::int64_t>();
      const auto offsets = m.at("offsets").get<std::vector<std::size_t>>();
      const auto bins = m.at("bins").get<std::vector<std::size_t>>();
      if (offsets.size() != 3 || bins.size() != 3) throw FormatError("bad split layout for '" + prefix + "'");
      s.train_offset = offsets[0];
      s.val_offset = offsets[1];
      s.test_offset = offsets[2];
      const char* names[3] = {".train", ".val", ".test"};
      DemandTensor* parts[3] = {&s.train, &s.val, &s.test};
      for (int k = 0; k < 3; ++k) {
        *parts[k] = DemandTensor(mode, ns.node_ids, start + static_cast<Timestamp>(offsets[k]) * width, width, 0);
        parts[k]->values = a.array(prefix + names[k]);
        if (parts[k]->values.rows() != static_cast<Eigen::Index>(bins[k] * ns.size()) || parts[k]->values.cols() != 2) {
          throw FormatError("tensor shape mismatch for '" + prefix + names[k] + "'");
        }
      }
      const auto stats = m.at("stats").get<std::vector<double>>();
      s.stats = {mode, stats.at(0), stats.at(1)};
      out.nodes.emplace(mode, std::move(ns));
      out.splits.emplace(mode, std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset manifest malformed in '" + path.string() + "': " + e.what());
  }
  return out;
}

}  // namespace mrgnn
