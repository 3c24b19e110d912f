#include "mrgnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "mrgnn/archive.hpp"

namespace mrgnn {

namespace {

constexpr char kStateMagic[] = "MRTS\0\0\0\1";
constexpr std::uint32_t kStateVersion = 1;

std::vector<int> iota_ids(int n) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (max_epochs < 1) throw ConfigError("max epochs must be at least 1");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must lie in [0, 1)");
  if (weight_decay < 0) throw ConfigError("weight decay must be nonnegative");
  if (patience < 1) throw ConfigError("early-stopping patience must be at least 1");
  if (aux_weight < 0) throw ConfigError("auxiliary loss weight must be nonnegative");
  if (seeds.empty()) throw ConfigError("seed list must not be empty");
}

// ---------------------------------------------------------------------------
// Loss

LossValue prediction_loss(const Predictions& predictions, const std::map<Mode, Eigen::MatrixXd>& targets, Mode target,
                          double aux_weight, Predictions* grad) {
  if (!predictions.contains(target)) throw DataError("no predictions for the target mode");
  LossValue out;
  if (grad) grad->clear();
  for (const auto& [m, pred] : predictions) {
    auto it = targets.find(m);
    if (it == targets.end()) throw DataError("no targets for mode '" + std::string(to_string(m)) + "'");
    const Eigen::MatrixXd& y = it->second;
    if (pred.rows() != y.rows() || pred.cols() != y.cols()) {
      throw DataError("prediction and target shapes differ for mode '" + std::string(to_string(m)) + "'");
    }
    const Eigen::MatrixXd diff = pred - y;
    const auto count = static_cast<double>(diff.size());
    const double mse = diff.squaredNorm() / count;
    const double weight = m == target ? 1.0 : aux_weight;
    out.per_mode[m] = mse;
    out.total += weight * mse;
    if (grad) (*grad)[m] = diff * (2.0 * weight / count);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

AdamOptimizer::AdamOptimizer(const ModelParams& shape, double lr, double beta1, double beta2, double eps,
                             double weight_decay)
    : m_(shape.zeros_like()),
      v_(shape.zeros_like()),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {}

void AdamOptimizer::step(ModelParams& params, ModelParams& grads) {
  ++t_;
  auto p = params.refs();
  auto g = grads.refs();
  auto m = m_.refs();
  auto v = v_.refs();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < p.size(); ++i) {
    Eigen::MatrixXd& w = *p[i].value;
    const Eigen::MatrixXd& gi = *g[i].value;
    *m[i].value = beta1_ * *m[i].value + (1.0 - beta1_) * gi;
    *v[i].value = beta2_ * *v[i].value + (1.0 - beta2_) * gi.cwiseAbs2();
    if (p[i].decays && weight_decay_ > 0.0) w *= 1.0 - lr_ * weight_decay_;
    w.array() -= lr_ * (m[i].value->array() / c1) / ((v[i].value->array() / c2).sqrt() + eps_);
  }
}

EarlyStopper::EarlyStopper(int patience) : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw ConfigError("early-stopping patience must be at least 1");
}

bool EarlyStopper::update(double val_loss) {
  ++epochs_;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epochs_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

void EarlyStopper::restore(int epochs, int best_epoch, double best, int since_best) {
  epochs_ = epochs;
  best_epoch_ = best_epoch;
  best_ = best;
  since_best_ = since_best;
}

// ---------------------------------------------------------------------------
// Prediction helpers

Predictions predict(const ModelState& model, const WindowedDataset& data, const NormalizedGraphs& graphs, int batch_size) {
  Predictions out;
  const int n = data.samples();
  for (int start = 0; start < n; start += batch_size) {
    std::vector<int> ids;
    for (int i = start; i < std::min(n, start + batch_size); ++i) ids.push_back(i);
    WindowedDataset b = data.batch(ids);
    Predictions p = forward(model, b.inputs, graphs, false);
    for (auto& [m, y] : p) {
      auto& acc = out[m];
      const Eigen::Index nodes = y.rows() / static_cast<Eigen::Index>(ids.size());
      if (acc.size() == 0) acc.resize(static_cast<Eigen::Index>(n) * nodes, y.cols());
      acc.middleRows(static_cast<Eigen::Index>(start) * nodes, y.rows()) = y;
    }
  }
  return out;
}

double dataset_loss(const ModelState& model, const WindowedDataset& data, const NormalizedGraphs& graphs,
                    double aux_weight, int batch_size) {
  Predictions p = predict(model, data, graphs, batch_size);
  return prediction_loss(p, data.targets, model.config.target, aux_weight).total;
}

// ---------------------------------------------------------------------------
// Training state persistence

namespace {

void put_params(Archive& a, const std::string& prefix, ModelParams params) {
  for (const auto& ref : params.refs()) a.arrays.emplace(prefix + ref.name, *ref.value);
}

void get_params(const Archive& a, const std::string& prefix, ModelParams& params) {
  for (auto& ref : params.refs()) {
    const auto& v = a.array(prefix + ref.name);
    if (v.rows() != ref.value->rows() || v.cols() != ref.value->cols()) {
      throw FormatError("training state parameter '" + ref.name + "' has the wrong shape");
    }
    *ref.value = v;
  }
}

}  // namespace

void save_training_state(const TrainingState& s, std::uint64_t graph_fingerprint, const std::filesystem::path& path) {
  Archive a;
  a.magic.assign(kStateMagic, 8);
  a.version = kStateVersion;
  auto& man = a.manifest;
  man["config"] = to_json(s.model.config);
  man["seed"] = s.model.seed;
  man["graph_fingerprint"] = hex_digest(graph_fingerprint);
  man["adam_steps"] = s.adam_steps;
  man["best_epoch"] = s.log.best_epoch;
  man["stopped_early"] = s.log.stopped_early;
  man["stopper_since_best"] = s.stopper_since_best;
  man["finished"] = s.finished;
  man["rng_state"] = s.rng_state;
  Eigen::MatrixXd log(static_cast<Eigen::Index>(s.log.epochs.size()), 3);
  for (std::size_t i = 0; i < s.log.epochs.size(); ++i) {
    log(static_cast<Eigen::Index>(i), 0) = s.log.epochs[i].epoch;
    log(static_cast<Eigen::Index>(i), 1) = s.log.epochs[i].train_loss;
    log(static_cast<Eigen::Index>(i), 2) = s.log.epochs[i].val_loss;
  }
  a.arrays["log"] = log;
  a.arrays["stopper_best"] = Eigen::MatrixXd::Constant(1, 1, s.stopper_best);
  put_params(a, "model.", s.model.params);
  put_params(a, "best.", s.best.params);
  put_params(a, "adam_m.", s.adam_m);
  put_params(a, "adam_v.", s.adam_v);
  // write-then-rename keeps the previous state intact if interrupted mid-write
  auto tmp = path;
  tmp += ".tmp";
  write_archive(a, tmp);
  std::filesystem::rename(tmp, path);
}

TrainingState load_training_state(const std::filesystem::path& path, std::uint64_t graph_fingerprint) {
  Archive a = read_archive(path, std::string_view(kStateMagic, 8), kStateVersion);
  TrainingState s;
  try {
    const auto& man = a.manifest;
    if (man.at("graph_fingerprint").get<std::string>() != hex_digest(graph_fingerprint)) {
      throw FormatError("training state '" + path.string() + "' belongs to a different graph set");
    }
    s.model = init_model(model_config_from_json(man.at("config")), man.at("seed").get<std::uint64_t>());
    s.best = s.model;
    s.adam_m = s.model.params.zeros_like();
    s.adam_v = s.model.params.zeros_like();
    s.adam_steps = man.at("adam_steps").get<long long>();
    s.log.best_epoch = man.at("best_epoch").get<int>();
    s.log.stopped_early = man.at("stopped_early").get<bool>();
    s.stopper_since_best = man.at("stopper_since_best").get<int>();
    s.finished = man.at("finished").get<bool>();
    s.rng_state = man.at("rng_state").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("training state manifest malformed in '" + path.string() + "': " + e.what());
  }
  const auto& log = a.array("log");
  for (Eigen::Index i = 0; i < log.rows(); ++i) {
    s.log.epochs.push_back({static_cast<int>(log(i, 0)), log(i, 1), log(i, 2)});
  }
  s.stopper_best = a.array("stopper_best")(0, 0);
  get_params(a, "model.", s.model.params);
  get_params(a, "best.", s.best.params);
  get_params(a, "adam_m.", s.adam_m);
  get_params(a, "adam_v.", s.adam_v);
  return s;
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train_model(ModelState model, const WindowedDataset& train, const WindowedDataset& val,
                        const NormalizedGraphs& graphs, const TrainConfig& config, std::uint64_t seed,
                        const TrainOptions& options) {
  config.validate();
  model.config.dropout = config.dropout;
  model.config.validate();
  check_compatible(model.config, graphs);
  if (train.samples() == 0 || val.samples() == 0) throw DataError("training and validation splits must be nonempty");

  std::mt19937_64 rng(seed);
  AdamOptimizer adam(model.params, config.learning_rate, config.beta1, config.beta2, config.adam_eps, config.weight_decay);
  EarlyStopper stopper(config.patience);
  TrainingLog log;
  ModelState best = model;

  if (options.resume && options.state_path && std::filesystem::exists(*options.state_path)) {
    TrainingState s = load_training_state(*options.state_path, graphs.fingerprint);
    if (to_json(s.model.config) != to_json(model.config) || s.model.seed != model.seed) {
      throw ConfigError("saved training state was produced with a different model configuration or seed");
    }
    model = std::move(s.model);
    best = std::move(s.best);
    adam.first_moment() = std::move(s.adam_m);
    adam.second_moment() = std::move(s.adam_v);
    adam.set_steps(s.adam_steps);
    log = std::move(s.log);
    const int done = static_cast<int>(log.epochs.size());
    stopper.restore(done, log.best_epoch, s.stopper_best, s.stopper_since_best);
    std::istringstream(s.rng_state) >> rng;
    if (s.finished) return {best, log, false};
  }

  auto persist = [&](bool finished) {
    if (!options.state_path) return;
    TrainingState s;
    s.model = model;
    s.best = best;
    s.adam_m = adam.first_moment();
    s.adam_v = adam.second_moment();
    s.adam_steps = adam.steps();
    s.log = log;
    s.stopper_since_best = stopper.since_best();
    s.stopper_best = stopper.best_loss();
    std::ostringstream os;
    os << rng;
    s.rng_state = os.str();
    s.finished = finished;
    save_training_state(s, graphs.fingerprint, *options.state_path);
  };

  const Mode target = model.config.target;
  int epochs_this_call = 0;
  for (int epoch = static_cast<int>(log.epochs.size()) + 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<int> order = iota_ids(train.samples());
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      std::vector<int> ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + config.batch_size)));
      WindowedDataset batch = train.batch(ids);
      ForwardCache cache;
      Predictions pred = forward(model, batch.inputs, graphs, true, &rng, &cache);
      Predictions grad;
      LossValue loss = prediction_loss(pred, batch.targets, target, config.aux_weight, &grad);
      if (!std::isfinite(loss.total)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      loss_sum += loss.total * static_cast<double>(ids.size());
      ModelParams grads = backward(model, cache, graphs, grad);
      adam.step(model.params, grads);
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()),
                    dataset_loss(model, val, graphs, config.aux_weight)};
    if (!std::isfinite(rec.val_loss)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    log.epochs.push_back(rec);
    if (stopper.update(rec.val_loss)) {
      best = model;
      log.best_epoch = epoch;
    }
    if (options.on_epoch) options.on_epoch(rec);
    ++epochs_this_call;
    if (stopper.should_stop()) {
      log.stopped_early = true;
      break;
    }
    if (options.stop_after_epoch && epochs_this_call >= *options.stop_after_epoch && epoch < config.max_epochs) {
      persist(false);
      return {best, log, true};
    }
    persist(false);
  }
  persist(true);
  return {best, log, false};
}

// ---------------------------------------------------------------------------
// Metrics

Metrics compute_metrics(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& targets) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols() || targets.size() == 0) {
    throw DataError("metric inputs must be nonempty and of equal shape");
  }
  const auto n = static_cast<double>(targets.size());
  const Eigen::ArrayXXd diff = (predictions - targets).array();
  Metrics m;
  const double mse = diff.square().sum() / n;
  m.rmse = std::sqrt(mse);
  m.mae = diff.abs().sum() / n;
  const double mean = targets.sum() / n;
  const double ss_tot = (targets.array() - mean).square().sum();
  if (ss_tot > 0.0) m.r2 = 1.0 - diff.square().sum() / ss_tot;
  return m;
}

Metrics evaluate(const ModelState& model, const WindowedDataset& data, const NormalizedGraphs& graphs,
                 const NormalizationStats& stats) {
  const Mode target = model.config.target;
  Predictions p = predict(model, data, graphs);
  auto denorm = [&stats](double v) { return stats.denormalize(v); };
  return compute_metrics(p.at(target).unaryExpr(denorm), data.targets.at(target).unaryExpr(denorm));
}

std::optional<RunRecord> MetricsReport::aggregate(const std::string& model, const std::string& combination) const {
  RunRecord agg;
  agg.model = model;
  agg.combination = combination;
  int n = 0, n_r2 = 0;
  double r2 = 0.0, epochs = 0.0;
  for (const auto& r : runs) {
    if (r.model != model || r.combination != combination || r.status != "ok") continue;
    agg.metrics.rmse += r.metrics.rmse;
    agg.metrics.mae += r.metrics.mae;
    if (r.metrics.r2) {
      r2 += *r.metrics.r2;
      ++n_r2;
    }
    epochs += r.epochs;
    ++n;
  }
  if (n == 0) return std::nullopt;
  agg.metrics.rmse /= n;
  agg.metrics.mae /= n;
  if (n_r2 > 0) agg.metrics.r2 = r2 / n_r2;
  agg.epochs = static_cast<int>(std::lround(epochs / n));
  return agg;
}

void MetricsReport::write_csv(std::ostream& out) const {
  out << "model,combination,seed,rmse,mae,r2,epochs,status\n";
  auto row = [&out](const RunRecord& r, const std::string& seed) {
    out << r.model << ',' << r.combination << ',' << seed << ',' << std::setprecision(10) << r.metrics.rmse << ','
        << r.metrics.mae << ',';
    if (r.metrics.r2) {
      out << *r.metrics.r2;
    } else {
      out << "NA";
    }
    out << ',' << r.epochs << ',' << r.status << '\n';
  };
  std::vector<std::pair<std::string, std::string>> groups;
  for (const auto& r : runs) {
    row(r, r.seed ? std::to_string(*r.seed) : std::string("-"));
    std::pair<std::string, std::string> g{r.model, r.combination};
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }
  for (const auto& [model, combination] : groups) {
    if (auto agg = aggregate(model, combination)) row(*agg, "mean");
  }
}

}  // namespace mrgnn
