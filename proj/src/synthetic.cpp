#include "mrgnn/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace mrgnn {

void SyntheticSpec::validate() const {
  if (bike_nodes <= 0 || subway_nodes <= 0 || ridehail_nodes <= 0) throw ConfigError("synthetic node counts must be positive");
  if (bins <= 0) throw ConfigError("synthetic bin count must be positive");
  if (bin_width <= 0 || 86400 % bin_width != 0) throw ConfigError("synthetic bin width must divide one day");
  if (bike_base < 0 || subway_base < 0 || ridehail_base < 0 || noise < 0 || subway_volatility < 0) {
    throw ConfigError("synthetic levels and noise must be nonnegative");
  }
  if (daily_amplitude < 0 || daily_amplitude > 1) throw ConfigError("synthetic daily amplitude must lie in [0, 1]");
  if (!(region > 0) || link_radius < 0) throw ConfigError("synthetic region must be positive");
  if (std::abs(subway_persistence) >= 1) throw ConfigError("synthetic subway persistence must lie in (-1, 1)");
}

namespace {

std::string node_name(std::string_view prefix, int i) {
  std::string s(prefix);
  s += std::to_string(i);
  return s;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SyntheticData out;
  out.alpha = spec.alpha;
  const int counts[3] = {spec.bike_nodes, spec.subway_nodes, spec.ridehail_nodes};
  const char* prefixes[3] = {"B", "S", "H"};

  for (Mode m : {Mode::subway, Mode::ridehail}) {
    NodeSet ns;
    ns.mode = m;
    for (int i = 0; i < counts[static_cast<int>(m)]; ++i) {
      ns.node_ids.push_back(node_name(prefixes[static_cast<int>(m)], i));
      ns.coordinates.push_back({unit(rng) * spec.region, unit(rng) * spec.region});
    }
    out.nodes.emplace(m, std::move(ns));
  }
  NodeSet bikes;
  bikes.mode = Mode::bike;
  const auto& subway_pts = out.nodes.at(Mode::subway).coordinates;
  for (int i = 0; i < spec.bike_nodes; ++i) {
    const auto link = static_cast<std::size_t>(i % spec.subway_nodes);
    const double r = spec.link_radius * std::sqrt(unit(rng));
    const double a = 2.0 * std::numbers::pi * unit(rng);
    bikes.node_ids.push_back(node_name("B", i));
    bikes.coordinates.push_back({subway_pts[link].x + r * std::cos(a), subway_pts[link].y + r * std::sin(a)});
    out.links.emplace_back(static_cast<std::size_t>(i), link);
  }
  out.nodes.emplace(Mode::bike, std::move(bikes));

  const auto bins = static_cast<std::size_t>(spec.bins);
  const double per_day = 86400.0 / static_cast<double>(spec.bin_width);
  auto seasonal = [&](std::size_t b, double phase) {
    return 1.0 + spec.daily_amplitude * std::sin(2.0 * std::numbers::pi * std::fmod(static_cast<double>(b), per_day) / per_day + phase);
  };
  auto count = [](double v) { return std::max(0.0, std::round(v)); };
  const double bases[3] = {spec.bike_base, spec.subway_base, spec.ridehail_base};
  const double phases[3][2] = {{0.0, 0.8}, {1.9, 3.1}, {4.0, 5.2}};

  for (Mode m : {Mode::subway, Mode::ridehail, Mode::bike}) {
    const auto& ns = out.nodes.at(m);
    DemandTensor t(m, ns.node_ids, spec.start, spec.bin_width, bins);
    const int mi = static_cast<int>(m);
    for (std::size_t i = 0; i < ns.size(); ++i) {
      const double level[2] = {bases[mi] * (0.5 + unit(rng)), bases[mi] * (0.5 + unit(rng))};
      double ar[2] = {0.0, 0.0};
      for (std::size_t b = 0; b < bins; ++b) {
        for (int c = 0; c < 2; ++c) {
          double v = level[c] * seasonal(b, phases[mi][c]) + spec.noise * gauss(rng);
          if (m == Mode::subway) {
            ar[c] = spec.subway_persistence * ar[c] + spec.subway_volatility * gauss(rng);
            v += ar[c];
          }
          if (m == Mode::bike && c == kInflow) {
            const auto link = out.links[i].second;
            const double lagged = b == 0 ? 0.0 : out.demand.at(Mode::subway).at(b - 1, link, kOutflow);
            v += spec.alpha * lagged;
          }
          t.at(b, i, c) = count(v);
        }
      }
    }
    out.demand.emplace(m, std::move(t));
  }
  return out;
}

}  // namespace mrgnn
