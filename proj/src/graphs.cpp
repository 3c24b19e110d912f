#include "mrgnn/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mrgnn/archive.hpp"

namespace mrgnn {

namespace {

constexpr char kGraphMagic[] = "MRGS\0\0\0\1";
constexpr std::uint32_t kGraphVersion = 1;

double squared_distance(const Point& a, const Point& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

std::uint64_t node_order_digest(const std::vector<std::string>& ids) {
  std::uint64_t h = fnv1a("nodes", 5);
  for (const auto& id : ids) {
    h = fnv1a(id.data(), id.size(), h);
    h = fnv1a("\n", 1, h);
  }
  return h;
}

/// Concatenated inflow and outflow series of one node.
Eigen::VectorXd profile(const DemandTensor& t, std::size_t node) {
  const std::size_t bins = t.bins();
  Eigen::VectorXd p(static_cast<Eigen::Index>(2 * bins));
  for (std::size_t b = 0; b < bins; ++b) {
    p(static_cast<Eigen::Index>(b)) = t.at(b, node, kInflow);
    p(static_cast<Eigen::Index>(bins + b)) = t.at(b, node, kOutflow);
  }
  return p;
}

}  // namespace

std::string_view to_string(RelationKind kind) {
  return kind == RelationKind::geographic ? "geographic" : "semantic";
}

std::string relation_name(const RelationKey& key) {
  return std::string(to_string(key.src)) + "->" + std::string(to_string(key.dst)) + "." + std::string(to_string(key.kind));
}

void RelationGraph::validate(std::size_t dst_nodes, std::size_t src_nodes) const {
  const std::string name = relation_name({src, dst, kind});
  if (weights.rows() != static_cast<Eigen::Index>(dst_nodes) || weights.cols() != static_cast<Eigen::Index>(src_nodes)) {
    throw DataError("relation " + name + " has shape inconsistent with its node sets");
  }
  if (!weights.allFinite() || (weights.array() < 0).any()) {
    throw DataError("relation " + name + " has negative or non-finite weights");
  }
  if (intra() && kind == RelationKind::geographic && (weights.diagonal().array() != 1.0).any()) {
    throw DataError("relation " + name + " is missing unit self-loops");
  }
}

RelationGraph build_geo_adjacency(const NodeSet& src, const NodeSet& dst, const GeoKernelParams& params) {
  if (src.size() == 0 || dst.size() == 0) throw DataError("geographic adjacency needs nonempty node sets");
  src.validate();
  dst.validate();
  const bool intra = src.mode == dst.mode;
  if (intra && src.node_ids != dst.node_ids) throw DataError("intra-modal adjacency needs identical node sets");

  const auto n_dst = static_cast<Eigen::Index>(dst.size());
  const auto n_src = static_cast<Eigen::Index>(src.size());
  RelationGraph g{src.mode, dst.mode, RelationKind::geographic, Eigen::MatrixXd::Zero(n_dst, n_src)};
  if (intra && n_dst == 1) {
    g.weights(0, 0) = 1.0;
    return g;
  }

  Eigen::MatrixXd d2(n_dst, n_src);
  for (Eigen::Index i = 0; i < n_dst; ++i) {
    for (Eigen::Index j = 0; j < n_src; ++j) {
      d2(i, j) = squared_distance(dst.coordinates[static_cast<std::size_t>(i)], src.coordinates[static_cast<std::size_t>(j)]);
    }
  }
  // sigma over distinct pairs: i < j for a set with itself, all pairs otherwise
  std::vector<double> distances;
  for (Eigen::Index i = 0; i < n_dst; ++i) {
    for (Eigen::Index j = intra ? i + 1 : 0; j < n_src; ++j) distances.push_back(std::sqrt(d2(i, j)));
  }
  const double mean = std::accumulate(distances.begin(), distances.end(), 0.0) / static_cast<double>(distances.size());
  double sigma2 = 0.0;
  for (double d : distances) sigma2 += (d - mean) * (d - mean);
  sigma2 /= static_cast<double>(distances.size());
  if (!(sigma2 > 0.0)) {
    throw DataError("degenerate input: all pairwise distances between '" + std::string(to_string(dst.mode)) + "' and '" +
                    std::string(to_string(src.mode)) + "' nodes are equal (sigma = 0)");
  }
  for (Eigen::Index i = 0; i < n_dst; ++i) {
    for (Eigen::Index j = 0; j < n_src; ++j) {
      const double w = std::exp(-d2(i, j) / sigma2);
      g.weights(i, j) = w >= params.epsilon ? w : 0.0;
    }
  }
  if (intra) g.weights.diagonal().setOnes();
  return g;
}

RelationGraph build_semantic_adjacency(const DemandTensor& src_demand, const DemandTensor& dst_demand, int k) {
  if (k < 1) throw ConfigError("semantic top-k must be at least 1");
  if (src_demand.bins() != dst_demand.bins() || src_demand.bin_start != dst_demand.bin_start ||
      src_demand.bin_width != dst_demand.bin_width) {
    throw DataError("semantic adjacency needs demand over identical time bins");
  }
  if (src_demand.nodes() == 0 || dst_demand.nodes() == 0) throw DataError("semantic adjacency needs nonempty node sets");
  const bool intra = src_demand.mode == dst_demand.mode;
  const auto n_dst = static_cast<Eigen::Index>(dst_demand.nodes());
  const auto n_src = static_cast<Eigen::Index>(src_demand.nodes());

  // Centered, unit-norm profiles; zero-variance profiles stay all-zero.
  auto standardize = [](const DemandTensor& t) {
    Eigen::MatrixXd z(static_cast<Eigen::Index>(2 * t.bins()), static_cast<Eigen::Index>(t.nodes()));
    for (std::size_t i = 0; i < t.nodes(); ++i) {
      Eigen::VectorXd p = profile(t, i);
      p.array() -= p.mean();
      const double norm = p.norm();
      z.col(static_cast<Eigen::Index>(i)) = norm > 0.0 ? Eigen::VectorXd(p / norm) : Eigen::VectorXd::Zero(p.size());
    }
    return z;
  };
  const Eigen::MatrixXd zs = standardize(src_demand);
  const Eigen::MatrixXd zd = standardize(dst_demand);
  Eigen::MatrixXd corr = (zd.transpose() * zs).cwiseMax(0.0).cwiseMin(1.0);

  RelationGraph g{src_demand.mode, dst_demand.mode, RelationKind::semantic, Eigen::MatrixXd::Zero(n_dst, n_src)};
  std::vector<Eigen::Index> order;
  for (Eigen::Index i = 0; i < n_dst; ++i) {
    order.clear();
    for (Eigen::Index j = 0; j < n_src; ++j) {
      if (!(intra && i == j)) order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return corr(i, a) > corr(i, b); });
    const std::size_t keep = std::min(order.size(), static_cast<std::size_t>(k));
    for (std::size_t r = 0; r < keep; ++r) g.weights(i, order[r]) = corr(i, order[r]);
  }
  if (intra) g.weights.diagonal().setOnes();
  return g;
}

Eigen::MatrixXd row_normalize(const Eigen::MatrixXd& a) {
  if (!a.allFinite() || (a.array() < 0).any()) {
    throw std::invalid_argument("row_normalize requires nonnegative finite entries");
  }
  Eigen::MatrixXd out = a;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double s = out.row(i).sum();
    if (s > 0.0) out.row(i) /= s;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Mode> MultiRelationalGraphSet::modes() const {
  std::vector<Mode> out;
  for (const auto& [m, _] : node_sets) out.push_back(m);
  return out;
}

std::vector<Mode> MultiRelationalGraphSet::auxiliary_modes() const {
  std::vector<Mode> out;
  for (const auto& [m, _] : node_sets) {
    if (m != target) out.push_back(m);
  }
  return out;
}

const RelationGraph& MultiRelationalGraphSet::relation(Mode src, Mode dst, RelationKind kind) const {
  auto it = relations.find({src, dst, kind});
  if (it == relations.end()) throw DataError("graph set is missing relation " + relation_name({src, dst, kind}));
  return it->second;
}

std::size_t expected_relation_count(std::size_t modes) { return modes == 0 ? 0 : 2 * (modes + (modes - 1)); }

void MultiRelationalGraphSet::validate() const {
  if (!node_sets.contains(target)) throw DataError("graph set target mode has no node set");
  if (relations.size() != expected_relation_count(node_sets.size())) {
    throw DataError("graph set has " + std::to_string(relations.size()) + " relations, expected " +
                    std::to_string(expected_relation_count(node_sets.size())));
  }
  for (const auto& [key, g] : relations) {
    if (key.src != g.src || key.dst != g.dst || key.kind != g.kind) throw DataError("graph set relation key mismatch");
    if (!node_sets.contains(g.src) || !node_sets.contains(g.dst)) throw DataError("relation references unknown mode");
    if (!g.intra() && g.dst != target) throw DataError("inter-modal relation " + relation_name(key) + " must end at the target mode");
    g.validate(node_sets.at(g.dst).size(), node_sets.at(g.src).size());
  }
  for (Mode m : modes()) {
    for (RelationKind k : all_kinds) {
      relation(m, m, k);
      if (m != target) relation(m, target, k);
    }
  }
}

std::uint64_t MultiRelationalGraphSet::fingerprint() const {
  std::uint64_t h = fnv1a("graphset", 8);
  const auto t = static_cast<int>(target);
  h = fnv1a(&t, sizeof(t), h);
  for (const auto& [m, ns] : node_sets) {
    const auto d = node_order_digest(ns.node_ids);
    h = fnv1a(&d, sizeof(d), h);
  }
  for (const auto& [key, g] : relations) {
    const std::string name = relation_name(key);
    h = fnv1a(name.data(), name.size(), h);
    h = digest(g.weights, h);
  }
  return h;
}

MultiRelationalGraphSet assemble_graph_set(Mode target, const std::map<Mode, NodeSet>& node_sets,
                                           const std::map<Mode, DemandTensor>& training_demand,
                                           const GraphParams& params) {
  if (node_sets.empty()) throw DataError("graph set needs at least one mode");
  if (!node_sets.contains(target)) throw DataError("target mode '" + std::string(to_string(target)) + "' has no node set");
  MultiRelationalGraphSet gs;
  gs.target = target;
  gs.node_sets = node_sets;
  gs.params = params;
  for (const auto& [m, ns] : node_sets) {
    auto it = training_demand.find(m);
    if (it == training_demand.end()) {
      throw DataError("missing training demand for mode '" + std::string(to_string(m)) + "'");
    }
    if (it->second.node_ids != ns.node_ids) {
      throw DataError("training demand node order differs from node set for '" + std::string(to_string(m)) + "'");
    }
  }
  const auto& target_nodes = node_sets.at(target);
  const auto& target_demand = training_demand.at(target);
  for (const auto& [m, ns] : node_sets) {
    const auto& demand = training_demand.at(m);
    gs.relations.emplace(RelationKey{m, m, RelationKind::geographic}, build_geo_adjacency(ns, ns, params.geo));
    gs.relations.emplace(RelationKey{m, m, RelationKind::semantic}, build_semantic_adjacency(demand, demand, params.top_k));
    if (m == target) continue;
    gs.relations.emplace(RelationKey{m, target, RelationKind::geographic}, build_geo_adjacency(ns, target_nodes, params.geo));
    gs.relations.emplace(RelationKey{m, target, RelationKind::semantic},
                         build_semantic_adjacency(demand, target_demand, params.top_k));
  }
  gs.validate();
  return gs;
}

void save_graph_set(const MultiRelationalGraphSet& gs, const std::filesystem::path& path) {
  gs.validate();
  Archive a;
  a.magic.assign(kGraphMagic, 8);
  a.version = kGraphVersion;
  auto& man = a.manifest;
  man["target"] = to_string(gs.target);
  man["epsilon"] = gs.params.geo.epsilon;
  man["top_k"] = gs.params.top_k;
  man["modes"] = nlohmann::json::array();
  for (const auto& [m, ns] : gs.node_sets) {
    man["modes"].push_back({{"mode", to_string(m)},
                            {"node_ids", ns.node_ids},
                            {"node_order_digest", hex_digest(node_order_digest(ns.node_ids))}});
    Eigen::MatrixXd coords(static_cast<Eigen::Index>(ns.size()), 2);
    for (std::size_t i = 0; i < ns.size(); ++i) {
      coords(static_cast<Eigen::Index>(i), 0) = ns.coordinates[i].x;
      coords(static_cast<Eigen::Index>(i), 1) = ns.coordinates[i].y;
    }
    a.arrays["coordinates." + std::string(to_string(m))] = coords;
  }
  man["relations"] = nlohmann::json::array();
  for (const auto& [key, g] : gs.relations) {
    const std::string name = relation_name(key);
    man["relations"].push_back(
        {{"name", name}, {"src", to_string(key.src)}, {"dst", to_string(key.dst)}, {"kind", to_string(key.kind)}});
    a.arrays["relation." + name] = g.weights;
  }
  write_archive(a, path);
}

MultiRelationalGraphSet load_graph_set(const std::filesystem::path& path) {
  Archive a = read_archive(path, std::string_view(kGraphMagic, 8), kGraphVersion);
  MultiRelationalGraphSet gs;
  try {
    const auto& man = a.manifest;
    gs.target = parse_mode(man.at("target").get<std::string>());
    gs.params.geo.epsilon = man.at("epsilon").get<double>();
    gs.params.top_k = man.at("top_k").get<int>();
    for (const auto& entry : man.at("modes")) {
      NodeSet ns;
      ns.mode = parse_mode(entry.at("mode").get<std::string>());
      ns.node_ids = entry.at("node_ids").get<std::vector<std::string>>();
      if (entry.at("node_order_digest").get<std::string>() != hex_digest(node_order_digest(ns.node_ids))) {
        throw FormatError("node order for '" + std::string(to_string(ns.mode)) + "' does not match its recorded digest");
      }
      const auto& coords = a.array("coordinates." + std::string(to_string(ns.mode)));
      if (coords.rows() != static_cast<Eigen::Index>(ns.node_ids.size()) || coords.cols() != 2) {
        throw FormatError("coordinate array does not match node list");
      }
      for (Eigen::Index i = 0; i < coords.rows(); ++i) ns.coordinates.push_back({coords(i, 0), coords(i, 1)});
      gs.node_sets.emplace(ns.mode, std::move(ns));
    }
    for (const auto& entry : man.at("relations")) {
      RelationGraph g;
      g.src = parse_mode(entry.at("src").get<std::string>());
      g.dst = parse_mode(entry.at("dst").get<std::string>());
      g.kind = entry.at("kind").get<std::string>() == "geographic" ? RelationKind::geographic : RelationKind::semantic;
      g.weights = a.array("relation." + entry.at("name").get<std::string>());
      gs.relations.emplace(RelationKey{g.src, g.dst, g.kind}, std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("graph-set manifest malformed in '" + path.string() + "': " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("graph-set manifest malformed: ") + e.what());
  }
  try {
    gs.validate();
  } catch (const FormatError&) {
    throw;
  } catch (const DataError& e) {
    throw FormatError(std::string("graph-set file inconsistent: ") + e.what());
  }
  return gs;
}

const Eigen::MatrixXd& NormalizedGraphs::get(Mode src, Mode dst, RelationKind kind) const {
  auto it = matrices.find({src, dst, kind});
  if (it == matrices.end()) throw DataError("missing relation " + relation_name({src, dst, kind}));
  return it->second;
}

std::size_t NormalizedGraphs::nodes(Mode m) const {
  return static_cast<std::size_t>(get(m, m, RelationKind::geographic).rows());
}

std::vector<Mode> NormalizedGraphs::auxiliary_modes() const {
  std::vector<Mode> out;
  for (Mode m : modes) {
    if (m != target) out.push_back(m);
  }
  return out;
}

NormalizedGraphs normalize_graphs(const MultiRelationalGraphSet& gs) {
  gs.validate();
  NormalizedGraphs out;
  out.target = gs.target;
  out.modes = gs.modes();
  out.fingerprint = gs.fingerprint();
  for (const auto& [key, g] : gs.relations) out.matrices.emplace(key, row_normalize(g.weights));
  return out;
}

}  // namespace mrgnn
