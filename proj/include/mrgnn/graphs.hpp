#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <tuple>
#include <vector>

#include "mrgnn/data.hpp"

namespace mrgnn {

enum class RelationKind { geographic = 0, semantic = 1 };

std::string_view to_string(RelationKind kind);

inline constexpr std::array<RelationKind, 2> all_kinds{RelationKind::geographic, RelationKind::semantic};

/// Weighted adjacency from `src` nodes to `dst` nodes. Rows index the
/// receiving (dst) mode: weights is N_dst x N_src.
struct RelationGraph {
  Mode src = Mode::bike;
  Mode dst = Mode::bike;
  RelationKind kind = RelationKind::geographic;
  Eigen::MatrixXd weights;

  bool intra() const { return src == dst; }
  void validate(std::size_t dst_nodes, std::size_t src_nodes) const;
};

struct RelationKey {
  Mode src;
  Mode dst;
  RelationKind kind;
  auto operator<=>(const RelationKey&) const = default;
};

std::string relation_name(const RelationKey& key);

struct GeoKernelParams {
  /// Weights below this value are zeroed.
  double epsilon = 0.1;
};

struct GraphParams {
  GeoKernelParams geo;
  /// Neighbors kept per row of a semantic matrix.
  int top_k = 5;
};

/// Thresholded Gaussian kernel exp(-d^2 / sigma^2) where sigma is the
/// population std of all distinct pairwise distances between the two sets.
/// Intra-modal graphs (src.mode == dst.mode) get a unit diagonal.
RelationGraph build_geo_adjacency(const NodeSet& src, const NodeSet& dst, const GeoKernelParams& params = {});

/// Pearson correlation of [inflow series, outflow series] profiles, clipped
/// at zero, keeping the k strongest entries per row. Intra-modal graphs
/// exclude the node itself from the top-k and then get a unit diagonal.
RelationGraph build_semantic_adjacency(const DemandTensor& src_demand, const DemandTensor& dst_demand, int k = 5);

/// Divides every row by its sum; all-zero rows stay zero.
Eigen::MatrixXd row_normalize(const Eigen::MatrixXd& a);

struct MultiRelationalGraphSet {
  Mode target = Mode::bike;
  std::map<Mode, NodeSet> node_sets;
  std::map<RelationKey, RelationGraph> relations;
  GraphParams params;

  std::vector<Mode> modes() const;
  std::vector<Mode> auxiliary_modes() const;
  const RelationGraph& relation(Mode src, Mode dst, RelationKind kind) const;
  /// Checks the relation census and the inter-modal direction rule.
  void validate() const;
  /// Content digest over node orders and all weights.
  std::uint64_t fingerprint() const;
};

/// 2 intra-modal relations per mode plus 2 auxiliary -> target relations per
/// auxiliary mode. Semantic relations use `training_demand`.
MultiRelationalGraphSet assemble_graph_set(Mode target, const std::map<Mode, NodeSet>& node_sets,
                                           const std::map<Mode, DemandTensor>& training_demand,
                                           const GraphParams& params = {});

/// Expected relation count 2 * (M + (M - 1)) for M modes.
std::size_t expected_relation_count(std::size_t modes);

void save_graph_set(const MultiRelationalGraphSet& gs, const std::filesystem::path& path);
MultiRelationalGraphSet load_graph_set(const std::filesystem::path& path);

/// Row-normalized copies of every relation, ready for message passing.
struct NormalizedGraphs {
  Mode target = Mode::bike;
  std::vector<Mode> modes;
  std::map<RelationKey, Eigen::MatrixXd> matrices;
  std::uint64_t fingerprint = 0;

  const Eigen::MatrixXd& get(Mode src, Mode dst, RelationKind kind) const;
  std::size_t nodes(Mode m) const;
  std::vector<Mode> auxiliary_modes() const;
};

NormalizedGraphs normalize_graphs(const MultiRelationalGraphSet& gs);

}  // namespace mrgnn
