#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "mrgnn/data.hpp"
#include "mrgnn/graphs.hpp"
#include "mrgnn/ingest.hpp"
#include "mrgnn/model.hpp"

namespace mrgnn {

struct TrainConfig {
  double learning_rate = 0.002;
  int batch_size = 32;
  int max_epochs = 500;
  double dropout = 0.3;
  double weight_decay = 1e-5;
  int patience = 20;
  /// Weight of the auxiliary-mode prediction error in the loss.
  double aux_weight = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

  void validate() const;
};

// ---------------------------------------------------------------------------
// Loss

struct LossValue {
  double total = 0.0;
  std::map<Mode, double> per_mode;  // mean squared error per mode
};

/// target MSE + aux_weight * sum of auxiliary MSEs. Fills `grad` with
/// dLoss/dPrediction when given.
LossValue prediction_loss(const Predictions& predictions, const std::map<Mode, Eigen::MatrixXd>& targets, Mode target,
                          double aux_weight, Predictions* grad = nullptr);

// ---------------------------------------------------------------------------
// Optimizer

/// Adam with decoupled weight decay on weight matrices only.
class AdamOptimizer {
 public:
  AdamOptimizer(const ModelParams& shape, double lr, double beta1, double beta2, double eps, double weight_decay);

  void step(ModelParams& params, ModelParams& grads);
  long long steps() const { return t_; }

  ModelParams& first_moment() { return m_; }
  ModelParams& second_moment() { return v_; }
  void set_steps(long long t) { t_ = t; }

 private:
  ModelParams m_, v_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  long long t_ = 0;
};

/// Tracks the best validation loss and when to stop.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience);
  /// Records one epoch's validation loss; returns true if it is a new best.
  bool update(double val_loss);
  bool should_stop() const { return since_best_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }
  int epochs_seen() const { return epochs_; }

  void restore(int epochs, int best_epoch, double best, int since_best);
  int since_best() const { return since_best_; }

 private:
  int patience_;
  int epochs_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_;
};

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool stopped_early = false;
};

/// Everything needed to continue an interrupted run.
struct TrainingState {
  ModelState model;
  ModelState best;
  ModelParams adam_m, adam_v;
  long long adam_steps = 0;
  TrainingLog log;
  int stopper_since_best = 0;
  double stopper_best = 0.0;
  std::string rng_state;
  bool finished = false;
};

void save_training_state(const TrainingState& state, std::uint64_t graph_fingerprint, const std::filesystem::path& path);
TrainingState load_training_state(const std::filesystem::path& path, std::uint64_t graph_fingerprint);

struct TrainOptions {
  /// Persist resumable state after every epoch.
  std::optional<std::filesystem::path> state_path;
  /// Continue from `state_path` if it exists.
  bool resume = false;
  /// Return after this many epochs in this call (simulated interruption).
  std::optional<int> stop_after_epoch;
  /// Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ModelState model;  // parameters from the best validation epoch
  TrainingLog log;
  bool interrupted = false;
};

/// Mini-batch Adam on the prediction loss with early stopping on validation loss.
/// Throws NumericError on a non-finite loss.
TrainResult train_model(ModelState model, const WindowedDataset& train, const WindowedDataset& val,
                        const NormalizedGraphs& graphs, const TrainConfig& config, std::uint64_t seed,
                        const TrainOptions& options = {});

/// Loss over a whole split in evaluation mode.
double dataset_loss(const ModelState& model, const WindowedDataset& data, const NormalizedGraphs& graphs,
                    double aux_weight, int batch_size = 256);

Predictions predict(const ModelState& model, const WindowedDataset& data, const NormalizedGraphs& graphs,
                    int batch_size = 256);

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> r2;  // undefined for constant targets
};

/// Pooled over every element of the two matrices.
Metrics compute_metrics(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& targets);

/// Denormalizes target-mode predictions and targets with `stats`, then scores them.
Metrics evaluate(const ModelState& model, const WindowedDataset& data, const NormalizedGraphs& graphs,
                 const NormalizationStats& stats);

struct RunRecord {
  std::string model;        // B-MRGNN, HA, LR
  std::string combination;  // e.g. bike+subway
  std::optional<std::uint64_t> seed;
  Metrics metrics;
  int epochs = 0;
  std::string status = "ok";
};

struct MetricsReport {
  std::vector<RunRecord> runs;

  /// Mean over the ok runs matching model and combination.
  std::optional<RunRecord> aggregate(const std::string& model, const std::string& combination) const;
  /// One row per run plus one "mean" row per (model, combination).
  void write_csv(std::ostream& out) const;
};

// ---------------------------------------------------------------------------
// Baselines

/// Mean over training bins with the same bin-of-week slot. `train` holds
/// values in any scale; predictions come out in the same scale, one row per
/// (sample, node) for the requested target bins.
Eigen::MatrixXd baseline_ha(const DemandTensor& train, std::size_t train_offset, const std::vector<std::size_t>& target_bins,
                            std::size_t bins_per_week = 42);

struct LinearBaseline {
  /// (2T + 1) x 2: lag features then intercept row.
  Eigen::MatrixXd coefficients;
};

/// Least-squares (least-norm when rank deficient) map from a node's
/// flattened T x 2 lags to its next-bin demand, shared by all nodes.
LinearBaseline fit_baseline_lr(const Hidden& inputs, const Eigen::MatrixXd& targets);
Eigen::MatrixXd predict_baseline_lr(const LinearBaseline& model, const Hidden& inputs);
/// Design matrix rows (sample, node): [lag0 in, lag0 out, lag1 in, ..., 1].
Eigen::MatrixXd lag_features(const Hidden& inputs);

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentSpec {
  ModelConfig model;
  TrainConfig train;
  GraphParams graph;
};

/// Windows, graphs and normalization for one mode combination.
struct PreparedExperiment {
  PreparedData data;
  MultiRelationalGraphSet graph_set;
  NormalizedGraphs graphs;
  WindowedDataset train, val, test;
};

PreparedExperiment prepare_experiment(const PreparedData& data, const std::vector<Mode>& modes, Mode target,
                                      const GraphParams& graph);

/// Trains and evaluates once per seed on the given mode combination.
MetricsReport run_experiment(const ExperimentSpec& spec, const PreparedData& data, const std::vector<Mode>& modes,
                             const std::vector<std::uint64_t>& seeds);

/// HA and LR rows on the test split of the target mode.
MetricsReport run_baselines(const PreparedData& data, Mode target);

/// Training-split metrics of a model (used for overfit checks).
Metrics evaluate_split(const ModelState& model, const PreparedExperiment& prepared, Split split);

}  // namespace mrgnn
