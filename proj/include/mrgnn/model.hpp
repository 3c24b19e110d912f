#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mrgnn/data.hpp"
#include "mrgnn/graphs.hpp"
#include "mrgnn/ops.hpp"

#include <json.hpp>

namespace mrgnn {

struct ModelConfig {
  std::vector<Mode> modes{Mode::bike, Mode::subway, Mode::ridehail};
  Mode target = Mode::bike;
  /// Input window length T.
  int window = 6;
  /// Temporal kernel width K_t.
  int kernel = 2;
  /// Output width of each ST-MR block; the block count L is channels.size().
  std::vector<int> channels{32, 64};
  int head_hidden = 64;
  double dropout = 0.3;
  int input_channels = 2;

  int blocks() const { return static_cast<int>(channels.size()); }
  /// Temporal length left after all blocks: T - L * 2 * (K_t - 1).
  int remaining_steps() const { return window - blocks() * 2 * (kernel - 1); }
  std::vector<Mode> auxiliary_modes() const;
  void validate() const;
};

enum class ConvRole { intra = 0, similarity = 1, difference = 2 };

/// One graph convolution feeding a mode's MRGNN output.
struct GraphConvKey {
  ConvRole role;
  Mode src;
  RelationKind kind;
  auto operator<=>(const GraphConvKey&) const = default;
};

std::string conv_name(const GraphConvKey& key);

/// Convolutions summed into `mode`'s MRGNN output: two intra-modal convs for
/// every mode, plus similarity and difference convs over both relation kinds
/// for each auxiliary mode when `mode` is the target.
std::vector<GraphConvKey> graph_convs_for(const ModelConfig& config, Mode mode);

struct BlockParams {
  std::map<Mode, ops::ConvParams> tcn1;
  std::map<Mode, ops::ConvParams> tcn2;
  std::map<Mode, std::map<GraphConvKey, ops::ConvParams>> graph;
  std::map<Mode, ops::LayerNormParams> norm;
};

struct HeadParams {
  ops::ConvParams conv;    // collapses the remaining steps to one
  ops::ConvParams hidden;  // head_hidden -> head_hidden
  ops::ConvParams output;  // head_hidden -> 2
};

struct ParamRef {
  std::string name;
  Eigen::MatrixXd* value;
  bool decays;  // weight decay applies (weight matrices only)
};

struct ModelParams {
  std::vector<BlockParams> blocks;
  std::map<Mode, HeadParams> heads;

  /// Every parameter array in a fixed order.
  std::vector<ParamRef> refs();
  std::size_t scalar_count() const;
  ModelParams zeros_like() const;
};

/// Parameters plus the configuration they were built for.
struct ModelState {
  ModelConfig config;
  ModelParams params;
  std::uint64_t seed = 0;
};

/// Scalar parameter count implied by the configuration.
std::size_t expected_parameter_count(const ModelConfig& config);

/// Xavier-uniform weights, zero biases, unit layer-norm scale. Deterministic per seed.
ModelState init_model(const ModelConfig& config, std::uint64_t seed);

using Predictions = std::map<Mode, Eigen::MatrixXd>;  // rows (sample, node), 2 columns

struct BlockCache {
  std::map<Mode, Hidden> input;
  std::map<Mode, ops::GatedConvCache> tcn1;
  std::map<Mode, Hidden> first;  // U = TCN1(H)
  std::map<Mode, std::map<GraphConvKey, ops::GraphConvCache>> graph;
  std::map<Mode, Hidden> mrgnn;  // M before dropout
  std::map<Mode, Eigen::MatrixXd> dropout_mask;
  std::map<Mode, ops::GatedConvCache> tcn2;
  std::map<Mode, Hidden> second;  // V = TCN2(U + M)
  std::map<Mode, ops::LayerNormCache> norm;
  std::map<Mode, Hidden> output;
};

struct HeadCache {
  Hidden input;
  Eigen::MatrixXd conv_pre, hidden_in, hidden_pre, output_in;
};

struct ForwardCache {
  std::vector<BlockCache> blocks;
  std::map<Mode, HeadCache> heads;

  /// Smallest distance of any ReLU or |.| input from its kink.
  double kink_margin() const;
};

/// Runs L ST-MR blocks and the per-mode heads. `rng` drives dropout and is
/// required only when training with a positive dropout rate.
Predictions forward(const ModelState& model, const std::map<Mode, Hidden>& inputs, const NormalizedGraphs& graphs,
                    bool training, std::mt19937_64* rng = nullptr, ForwardCache* cache = nullptr);

/// Gradient of the loss with respect to every parameter, given dLoss/dPredictions.
ModelParams backward(const ModelState& model, const ForwardCache& cache, const NormalizedGraphs& graphs,
                     const Predictions& grad_predictions);

/// Checks that the model was built for these graphs (modes, target, node counts).
void check_compatible(const ModelConfig& config, const NormalizedGraphs& graphs);

struct Checkpoint {
  ModelState model;
  std::map<Mode, NormalizationStats> stats;
  std::uint64_t graph_fingerprint = 0;
  int epochs = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws FormatError when `expected_fingerprint` is given and differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_fingerprint = {});

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace mrgnn
