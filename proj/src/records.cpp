#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <unordered_map>

#include "mrgnn/ingest.hpp"

namespace mrgnn {

namespace {

constexpr double kEarthRadius = 6371008.8;

std::string trim(std::string_view s) {
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '"'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return std::string(s);
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Header-indexed reader over a comma-delimited file.
class DelimitedFile {
 public:
  DelimitedFile(const std::filesystem::path& path, const std::vector<std::string>& required)
      : path_(path), in_(path) {
    if (!in_) throw DataError(path.string() + ": cannot open file");
    std::string header;
    while (std::getline(in_, header)) {
      if (!trim(header).empty()) break;
    }
    if (trim(header).empty()) throw DataError(path.string() + ": empty file");
    auto names = split_row(header);
    for (std::size_t i = 0; i < names.size(); ++i) columns_[names[i]] = i;
    for (const auto& name : required) {
      if (!columns_.contains(name)) throw DataError(path.string() + ": missing required column '" + name + "'");
    }
  }

  bool has(const std::string& column) const { return columns_.contains(column); }
  std::size_t index(const std::string& column) const { return columns_.at(column); }

  /// Next non-blank row, or false at end of file.
  bool next(std::vector<std::string>& row) {
    std::string line;
    while (std::getline(in_, line)) {
      if (trim(line).empty()) continue;
      row = split_row(line);
      return true;
    }
    return false;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::unordered_map<std::string, std::size_t> columns_;
};

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::unordered_map<std::string, std::size_t> id_index(const NodeSet& nodes) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < nodes.node_ids.size(); ++i) index.emplace(nodes.node_ids[i], i);
  return index;
}

const std::string& cell(const std::vector<std::string>& row, std::size_t i) {
  static const std::string empty;
  return i < row.size() ? row[i] : empty;
}

}  // namespace

std::optional<Timestamp> parse_timestamp(std::string_view text) {
  std::string s = trim(text);
  if (!s.empty() && s.back() == 'Z') s.pop_back();
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  char sep = 0;
  int consumed = 0;
  int n = std::sscanf(s.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &consumed);
  if (n < 6 || (sep != 'T' && sep != ' ')) return std::nullopt;
  std::string_view rest(s.c_str() + consumed);
  if (!rest.empty()) {
    int more = 0;
    if (std::sscanf(rest.data(), ":%2d%n", &sec, &more) != 1 || static_cast<std::size_t>(more) != rest.size()) {
      return std::nullopt;
    }
  }
  using namespace std::chrono;
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 59 || h < 0 || mi < 0 || sec < 0) return std::nullopt;
  return sys_days{ymd}.time_since_epoch() / seconds(1) + h * 3600 + mi * 60 + sec;
}

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  auto days_since = static_cast<int>(std::floor(static_cast<double>(t) / 86400.0));
  sys_days day_point{days{days_since}};
  year_month_day ymd{day_point};
  Timestamp rem = t - static_cast<Timestamp>(days_since) * 86400;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
                static_cast<int>((rem / 60) % 60), static_cast<int>(rem % 60));
  return buf;
}

TripLoad load_trip_records(const std::filesystem::path& path, const NodeSet& nodes, TripSchema schema) {
  DelimitedFile file(path, {"pickup_time", "pickup_id", "dropoff_time", "dropoff_id"});
  const auto index = id_index(nodes);
  const std::size_t c_pt = file.index("pickup_time"), c_pi = file.index("pickup_id");
  const std::size_t c_dt = file.index("dropoff_time"), c_di = file.index("dropoff_id");

  TripLoad out;
  std::vector<std::string> row;
  while (file.next(row)) {
    ++out.rows;
    auto pt = parse_timestamp(cell(row, c_pt));
    auto dt = parse_timestamp(cell(row, c_dt));
    auto pi = index.find(cell(row, c_pi));
    auto di = index.find(cell(row, c_di));
    if (!pt || !dt || pi == index.end() || di == index.end() || *dt < *pt) {
      ++out.skipped;
      continue;
    }
    out.events.push_back({*pt, pi->second, *dt, di->second});
  }
  if (out.rows == 0) {
    throw DataError(path.string() + ": no " + (schema == TripSchema::bike ? "bike" : "ride-hailing") +
                    " trip rows");
  }
  return out;
}

DeltaResult cumulative_deltas(const std::vector<double>& readings) {
  DeltaResult out;
  for (std::size_t i = 1; i < readings.size(); ++i) {
    double d = readings[i] - readings[i - 1];
    if (d < 0) {
      ++out.anomalies;
      d = 0;
    }
    out.deltas.push_back(d);
  }
  return out;
}

CountLoad load_turnstile_counts(const std::filesystem::path& path, const NodeSet& nodes, CountSchema schema) {
  DelimitedFile file(path, {"station_id", "period_start", "entries", "exits"});
  const auto index = id_index(nodes);
  const std::size_t c_id = file.index("station_id"), c_t = file.index("period_start");
  const std::size_t c_in = file.index("entries"), c_out = file.index("exits");
  const std::optional<std::size_t> c_turn =
      file.has("turnstile_id") ? std::optional<std::size_t>(file.index("turnstile_id")) : std::nullopt;

  struct Reading {
    Timestamp t;
    double entries, exits;
  };
  // Streams keyed by (station index, turnstile id), in first-seen order.
  std::vector<std::pair<std::size_t, std::vector<Reading>>> streams;
  std::map<std::pair<std::size_t, std::string>, std::size_t> stream_of;

  CountLoad out;
  std::vector<std::string> row;
  while (file.next(row)) {
    ++out.rows;
    auto t = parse_timestamp(cell(row, c_t));
    auto st = index.find(cell(row, c_id));
    auto en = parse_number(cell(row, c_in));
    auto ex = parse_number(cell(row, c_out));
    if (!t || st == index.end() || !en || !ex || *en < 0 || *ex < 0) {
      ++out.skipped;
      continue;
    }
    std::pair<std::size_t, std::string> key{st->second, c_turn ? cell(row, *c_turn) : std::string()};
    auto [it, inserted] = stream_of.emplace(key, streams.size());
    if (inserted) streams.push_back({st->second, {}});
    auto& readings = streams[it->second].second;
    if (!readings.empty() && *t <= readings.back().t) {
      throw DataError(path.string() + ": timestamps out of order for station '" + cell(row, c_id) + "' at " +
                      cell(row, c_t));
    }
    readings.push_back({*t, *en, *ex});
  }
  if (out.rows == 0) throw DataError(path.string() + ": no turnstile rows");

  for (const auto& [node, readings] : streams) {
    if (schema == CountSchema::delta) {
      for (const auto& r : readings) out.counts.push_back({node, r.t, r.entries, r.exits});
      continue;
    }
    std::vector<double> entries, exits;
    for (const auto& r : readings) {
      entries.push_back(r.entries);
      exits.push_back(r.exits);
    }
    auto de = cumulative_deltas(entries);
    auto dx = cumulative_deltas(exits);
    out.anomalies += de.anomalies + dx.anomalies;
    for (std::size_t i = 0; i < de.deltas.size(); ++i) {
      out.counts.push_back({node, readings[i].t, de.deltas[i], dx.deltas[i]});
    }
  }
  return out;
}

std::vector<RawNode> load_node_registry(const std::filesystem::path& path) {
  DelimitedFile file(path, {"node_id", "lon", "lat"});
  const std::size_t c_id = file.index("node_id"), c_lon = file.index("lon"), c_lat = file.index("lat");
  std::vector<RawNode> nodes;
  std::vector<std::string> row;
  while (file.next(row)) {
    auto lon = parse_number(cell(row, c_lon));
    auto lat = parse_number(cell(row, c_lat));
    if (cell(row, c_id).empty() || !lon || !lat) {
      throw DataError(path.string() + ": malformed registry row for node '" + cell(row, c_id) + "'");
    }
    nodes.push_back({cell(row, c_id), *lon, *lat});
  }
  if (nodes.empty()) throw DataError(path.string() + ": empty node registry");
  return nodes;
}

std::map<Mode, NodeSet> project_registries(const std::map<Mode, std::vector<RawNode>>& registries) {
  double lon0 = 0, lat0 = 0;
  std::size_t count = 0;
  for (const auto& [mode, nodes] : registries) {
    for (const auto& n : nodes) {
      lon0 += n.lon;
      lat0 += n.lat;
      ++count;
    }
  }
  if (count == 0) throw DataError("no nodes to project");
  lon0 /= static_cast<double>(count);
  lat0 /= static_cast<double>(count);
  const double deg = std::numbers::pi / 180.0;
  const double kx = kEarthRadius * deg * std::cos(lat0 * deg);
  const double ky = kEarthRadius * deg;

  std::map<Mode, NodeSet> out;
  for (const auto& [mode, nodes] : registries) {
    NodeSet set;
    set.mode = mode;
    for (const auto& n : nodes) {
      set.node_ids.push_back(n.id);
      set.coordinates.push_back({(n.lon - lon0) * kx, (n.lat - lat0) * ky});
    }
    set.validate();
    out.emplace(mode, std::move(set));
  }
  return out;
}

RawNode unproject(const std::string& id, Point p, double origin_lon, double origin_lat) {
  const double deg = std::numbers::pi / 180.0;
  return {id, origin_lon + p.x / (kEarthRadius * deg * std::cos(origin_lat * deg)),
          origin_lat + p.y / (kEarthRadius * deg)};
}

}  // namespace mrgnn
