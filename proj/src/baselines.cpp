#include <Eigen/QR>

#include "mrgnn/train.hpp"

namespace mrgnn {

Eigen::MatrixXd baseline_ha(const DemandTensor& train, std::size_t train_offset, const std::vector<std::size_t>& target_bins,
                            std::size_t bins_per_week) {
  if (train.bins() == 0 || train.nodes() == 0) throw DataError("historical average needs a nonempty training split");
  if (bins_per_week == 0) throw ConfigError("bins per week must be positive");
  const std::size_t n = train.nodes();
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(bins_per_week * n), 2);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(bins_per_week));
  for (std::size_t b = 0; b < train.bins(); ++b) {
    const std::size_t slot = (train_offset + b) % bins_per_week;
    counts(static_cast<Eigen::Index>(slot)) += 1.0;
    sums.middleRows(static_cast<Eigen::Index>(slot * n), static_cast<Eigen::Index>(n)) +=
        train.values.middleRows(static_cast<Eigen::Index>(b * n), static_cast<Eigen::Index>(n));
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(target_bins.size() * n), 2);
  for (std::size_t s = 0; s < target_bins.size(); ++s) {
    const std::size_t slot = target_bins[s] % bins_per_week;
    const double c = counts(static_cast<Eigen::Index>(slot));
    if (c == 0.0) continue;  // slot never observed in training
    out.middleRows(static_cast<Eigen::Index>(s * n), static_cast<Eigen::Index>(n)) =
        sums.middleRows(static_cast<Eigen::Index>(slot * n), static_cast<Eigen::Index>(n)) / c;
  }
  return out;
}

Eigen::MatrixXd lag_features(const Hidden& inputs) {
  const Eigen::Index width = static_cast<Eigen::Index>(inputs.steps) * inputs.channels();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(inputs.batch) * inputs.nodes, width + 1);
  for (int s = 0; s < inputs.batch; ++s) {
    for (int t = 0; t < inputs.steps; ++t) {
      x.block(static_cast<Eigen::Index>(s) * inputs.nodes, static_cast<Eigen::Index>(t) * inputs.channels(), inputs.nodes,
              inputs.channels()) = inputs.slice(s, t);
    }
  }
  x.col(width).setOnes();
  return x;
}

LinearBaseline fit_baseline_lr(const Hidden& inputs, const Eigen::MatrixXd& targets) {
  const Eigen::MatrixXd x = lag_features(inputs);
  if (x.rows() != targets.rows()) throw DataError("linear baseline targets do not match the windows");
  if (x.rows() == 0) throw DataError("linear baseline needs training windows");
  // Complete orthogonal decomposition yields the minimum-norm solution when rank deficient.
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(x);
  return {cod.solve(targets)};
}

Eigen::MatrixXd predict_baseline_lr(const LinearBaseline& model, const Hidden& inputs) {
  const Eigen::MatrixXd x = lag_features(inputs);
  if (x.cols() != model.coefficients.rows()) throw DataError("linear baseline window length mismatch");
  return x * model.coefficients;
}

}  // namespace mrgnn
