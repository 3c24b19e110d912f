#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>

#include "mrgnn/model.hpp"
#include "mrgnn/train.hpp"

namespace gradcheck {

struct Result {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double worst_relative = 0.0;
  std::string worst_name;
};

/// Compares backward() with central differences of the prediction loss for
/// every scalar parameter. With `dropout_seed` the same dropout masks are
/// replayed in every evaluation.
inline Result run(mrgnn::ModelState model, const std::map<mrgnn::Mode, mrgnn::Hidden>& inputs,
                  const std::map<mrgnn::Mode, Eigen::MatrixXd>& targets, const mrgnn::NormalizedGraphs& graphs,
                  double aux_weight, double step, double rel_tol, double abs_floor,
                  std::optional<std::uint64_t> dropout_seed = std::nullopt) {
  using namespace mrgnn;
  const bool training = dropout_seed.has_value();
  auto loss_at = [&](const ModelState& m) {
    std::mt19937_64 rng(dropout_seed.value_or(0));
    const Predictions p = forward(m, inputs, graphs, training, training ? &rng : nullptr);
    return prediction_loss(p, targets, m.config.target, aux_weight).total;
  };

  std::mt19937_64 rng(dropout_seed.value_or(0));
  ForwardCache cache;
  const Predictions p = forward(model, inputs, graphs, training, training ? &rng : nullptr, &cache);
  Predictions grad_pred;
  prediction_loss(p, targets, model.config.target, aux_weight, &grad_pred);
  ModelParams grads = backward(model, cache, graphs, grad_pred);

  Result r;
  auto refs = model.params.refs();
  auto grefs = grads.refs();
  for (std::size_t k = 0; k < refs.size(); ++k) {
    Eigen::MatrixXd& value = *refs[k].value;
    const Eigen::MatrixXd& g = *grefs[k].value;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double orig = value.data()[i];
      value.data()[i] = orig + step;
      const double up = loss_at(model);
      value.data()[i] = orig - step;
      const double down = loss_at(model);
      value.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = g.data()[i];
      const double diff = std::abs(numeric - analytic);
      const double rel = diff / std::max({std::abs(numeric), std::abs(analytic), 1e-300});
      ++r.checked;
      if (std::max(std::abs(numeric), std::abs(analytic)) > abs_floor && rel > r.worst_relative) {
        r.worst_relative = rel;
        r.worst_name = refs[k].name + "[" + std::to_string(i) + "]";
      }
      if (diff > abs_floor && rel > rel_tol) ++r.failures;
    }
  }
  return r;
}

}  // namespace gradcheck
