#include "mrgnn/ops.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mrgnn::ops {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

/// grad * 1[pre > 0]
Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& pre, const Eigen::MatrixXd& grad) {
  return (pre.array() > 0.0).select(grad, 0.0);
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Rows (sample, out_step, node), columns (lag, channel).
Eigen::MatrixXd unfold(const Hidden& x, int kernel) {
  const int out_steps = x.steps - kernel + 1;
  const Eigen::Index c = x.channels();
  const Eigen::Index block = static_cast<Eigen::Index>(out_steps) * x.nodes;
  Eigen::MatrixXd cols(static_cast<Eigen::Index>(x.batch) * block, kernel * c);
  for (int b = 0; b < x.batch; ++b) {
    for (int k = 0; k < kernel; ++k) {
      cols.block(b * block, k * c, block, c) = x.data.middleRows(x.row(b, k), block);
    }
  }
  return cols;
}

void fold_add(const Eigen::MatrixXd& cols, int kernel, Hidden& grad_x) {
  const int out_steps = grad_x.steps - kernel + 1;
  const Eigen::Index c = grad_x.channels();
  const Eigen::Index block = static_cast<Eigen::Index>(out_steps) * grad_x.nodes;
  for (int b = 0; b < grad_x.batch; ++b) {
    for (int k = 0; k < kernel; ++k) {
      grad_x.data.middleRows(grad_x.row(b, k), block) += cols.block(b * block, k * c, block, c);
    }
  }
}

Hidden like(const Hidden& shape, Eigen::MatrixXd data) {
  Hidden h;
  h.batch = shape.batch;
  h.steps = shape.steps;
  h.nodes = shape.nodes;
  h.data = std::move(data);
  return h;
}

void linear_backward(const Eigen::MatrixXd& input, const Eigen::MatrixXd& grad_pre, const ConvParams& p, ConvParams& grad,
                     Eigen::MatrixXd* grad_input) {
  grad.weight.noalias() += input.transpose() * grad_pre;
  grad.bias += grad_pre.colwise().sum();
  if (grad_input) grad_input->noalias() = grad_pre * p.weight.transpose();
}

}  // namespace

Hidden propagate(const Eigen::MatrixXd& a, const Hidden& x) {
  require(a.cols() == x.nodes, "propagation matrix has " + std::to_string(a.cols()) + " columns but input has " +
                                   std::to_string(x.nodes) + " nodes");
  Hidden out(x.batch, x.steps, static_cast<int>(a.rows()), x.channels());
  // Every (sample, step) slice is a contiguous run of node rows in each column,
  // so the whole tensor is one nodes x (slices * channels) matrix.
  const Eigen::Index cols = static_cast<Eigen::Index>(x.batch) * x.steps * x.channels();
  Eigen::Map<const Eigen::MatrixXd> in(x.data.data(), x.nodes, cols);
  Eigen::Map<Eigen::MatrixXd>(out.data.data(), out.nodes, cols).noalias() = a * in;
  return out;
}

void propagate_backward(const Eigen::MatrixXd& a, const Hidden& grad_out, Hidden& grad_x) {
  const Eigen::Index cols = static_cast<Eigen::Index>(grad_out.batch) * grad_out.steps * grad_out.channels();
  Eigen::Map<const Eigen::MatrixXd> g(grad_out.data.data(), grad_out.nodes, cols);
  Eigen::Map<Eigen::MatrixXd>(grad_x.data.data(), grad_x.nodes, cols).noalias() += a.transpose() * g;
}

Hidden causal_linear(const Hidden& x, const ConvParams& p, int kernel) {
  require(kernel >= 1, "kernel width must be at least 1");
  require(x.steps >= kernel, "temporal length " + std::to_string(x.steps) + " shorter than kernel width " +
                                 std::to_string(kernel));
  require(p.weight.rows() == kernel * x.channels(), "causal convolution weight does not match input channels");
  Hidden out;
  out.batch = x.batch;
  out.steps = x.steps - kernel + 1;
  out.nodes = x.nodes;
  out.data.noalias() = unfold(x, kernel) * p.weight;
  out.data.rowwise() += p.bias.row(0);
  return out;
}

void causal_linear_backward(const Hidden& x, const ConvParams& p, int kernel, const Hidden& grad_out, ConvParams& grad,
                            Hidden* grad_x) {
  const Eigen::MatrixXd cols = unfold(x, kernel);
  grad.weight.noalias() += cols.transpose() * grad_out.data;
  grad.bias += grad_out.data.colwise().sum();
  if (grad_x) {
    Eigen::MatrixXd grad_cols = grad_out.data * p.weight.transpose();
    fold_add(grad_cols, kernel, *grad_x);
  }
}

Hidden temporal_gated_conv(const Hidden& x, const ConvParams& p, int kernel, GatedConvCache* cache) {
  require(p.weight.cols() % 2 == 0, "gated convolution needs an even number of pre-activation channels");
  Hidden z = causal_linear(x, p, kernel);
  const Eigen::Index c = p.weight.cols() / 2;
  Eigen::MatrixXd gate = (1.0 + (-z.data.rightCols(c).array()).exp()).inverse().matrix();
  Hidden out = like(z, z.data.leftCols(c).cwiseProduct(gate));
  if (cache) {
    cache->input = x;
    cache->linear = z.data.leftCols(c);
    cache->gate = std::move(gate);
  }
  return out;
}

Hidden temporal_gated_conv_backward(const GatedConvCache& cache, const ConvParams& p, int kernel, const Hidden& grad_out,
                                    ConvParams& grad) {
  const Eigen::Index c = p.weight.cols() / 2;
  Hidden grad_z = like(grad_out, Eigen::MatrixXd(grad_out.data.rows(), 2 * c));
  grad_z.data.leftCols(c) = grad_out.data.cwiseProduct(cache.gate);
  grad_z.data.rightCols(c) =
      (grad_out.data.array() * cache.linear.array() * cache.gate.array() * (1.0 - cache.gate.array())).matrix();
  Hidden grad_x(cache.input.batch, cache.input.steps, cache.input.nodes, cache.input.channels());
  causal_linear_backward(cache.input, p, kernel, grad_z, grad, &grad_x);
  return grad_x;
}

double GraphConvCache::kink_margin() const {
  double m = std::numeric_limits<double>::infinity();
  if (pre.size() > 0) m = std::min(m, pre.cwiseAbs().minCoeff());
  if (gap.size() > 0) m = std::min(m, gap.cwiseAbs().minCoeff());
  return m;
}

namespace {

/// ReLU(features W + l), filling the cache.
Hidden graph_linear(Hidden features, const ConvParams& p, GraphConvCache* cache) {
  require(p.weight.rows() == features.channels(), "graph convolution weight has " + std::to_string(p.weight.rows()) +
                                                      " input channels, features have " +
                                                      std::to_string(features.channels()));
  Eigen::MatrixXd pre = features.data * p.weight;
  pre.rowwise() += p.bias.row(0);
  Hidden out = like(features, relu(pre));
  if (cache) {
    cache->pre = std::move(pre);
    cache->features = std::move(features);
  }
  return out;
}

/// Gradient with respect to the smoothed features.
Hidden graph_linear_backward(const GraphConvCache& cache, const ConvParams& p, const Hidden& grad_out, ConvParams& grad) {
  Eigen::MatrixXd grad_pre = relu_backward(cache.pre, grad_out.data);
  Eigen::MatrixXd grad_features;
  linear_backward(cache.features.data, grad_pre, p, grad, &grad_features);
  return like(cache.features, std::move(grad_features));
}

}  // namespace

Hidden intra_modal_conv(const Hidden& h, const Eigen::MatrixXd& a, const ConvParams& p, GraphConvCache* cache) {
  require(a.rows() == a.cols() && a.rows() == h.nodes, "intra-modal matrix shape does not match node count");
  return graph_linear(propagate(a, h), p, cache);
}

void intra_modal_conv_backward(const GraphConvCache& cache, const Eigen::MatrixXd& a, const ConvParams& p,
                               const Hidden& grad_out, ConvParams& grad, Hidden& grad_h) {
  propagate_backward(a, graph_linear_backward(cache, p, grad_out, grad), grad_h);
}

Hidden inter_modal_similarity_conv(const Hidden& aux, const Eigen::MatrixXd& a_target, const Eigen::MatrixXd& a_cross,
                                   const ConvParams& p, GraphConvCache* cache) {
  require(a_cross.cols() == aux.nodes, "cross-mode matrix columns do not match auxiliary node count");
  require(a_target.rows() == a_target.cols() && a_target.cols() == a_cross.rows(),
          "target matrix shape does not match cross-mode matrix rows");
  Hidden aggregated = propagate(a_cross, aux);
  Hidden out = graph_linear(propagate(a_target, aggregated), p, cache);
  if (cache) cache->aggregated = std::move(aggregated);
  return out;
}

void inter_modal_similarity_conv_backward(const GraphConvCache& cache, const Eigen::MatrixXd& a_target,
                                          const Eigen::MatrixXd& a_cross, const ConvParams& p, const Hidden& grad_out,
                                          ConvParams& grad, Hidden& grad_aux) {
  Hidden grad_features = graph_linear_backward(cache, p, grad_out, grad);
  Hidden grad_agg(grad_features.batch, grad_features.steps, grad_features.nodes, grad_features.channels());
  propagate_backward(a_target, grad_features, grad_agg);
  propagate_backward(a_cross, grad_agg, grad_aux);
}

Hidden inter_modal_difference_conv(const Hidden& aux, const Hidden& target, const Eigen::MatrixXd& a_target,
                                   const Eigen::MatrixXd& a_cross, const ConvParams& p, GraphConvCache* cache) {
  require(a_cross.cols() == aux.nodes, "cross-mode matrix columns do not match auxiliary node count");
  require(a_cross.rows() == target.nodes && a_target.rows() == target.nodes && a_target.cols() == target.nodes,
          "target matrix shape does not match target node count");
  require(aux.channels() == target.channels(), "auxiliary aggregate has " + std::to_string(aux.channels()) +
                                                   " channels but target features have " +
                                                   std::to_string(target.channels()));
  require(aux.batch == target.batch && aux.steps == target.steps, "auxiliary and target sequences are misaligned");
  Hidden aggregated = propagate(a_cross, aux);
  Eigen::MatrixXd gap = aggregated.data - target.data;
  Hidden out = graph_linear(propagate(a_target, like(target, gap.cwiseAbs())), p, cache);
  if (cache) {
    cache->aggregated = std::move(aggregated);
    cache->gap = std::move(gap);
  }
  return out;
}

void inter_modal_difference_conv_backward(const GraphConvCache& cache, const Eigen::MatrixXd& a_target,
                                          const Eigen::MatrixXd& a_cross, const ConvParams& p, const Hidden& grad_out,
                                          ConvParams& grad, Hidden& grad_aux, Hidden& grad_target) {
  Hidden grad_features = graph_linear_backward(cache, p, grad_out, grad);
  Hidden grad_abs(grad_features.batch, grad_features.steps, grad_features.nodes, grad_features.channels());
  propagate_backward(a_target, grad_features, grad_abs);
  Hidden grad_gap = like(grad_abs, cache.gap.unaryExpr([](double v) { return sign(v); }).cwiseProduct(grad_abs.data));
  grad_target.data -= grad_gap.data;
  propagate_backward(a_cross, grad_gap, grad_aux);
}

Hidden layer_norm(const Hidden& x, const LayerNormParams& p, LayerNormCache* cache) {
  require(p.scale.cols() == x.channels() && p.shift.cols() == x.channels(), "layer norm width mismatch");
  const auto c = static_cast<double>(x.channels());
  Eigen::VectorXd mean = x.data.rowwise().mean();
  Eigen::MatrixXd centered = x.data.colwise() - mean;
  Eigen::VectorXd var = centered.rowwise().squaredNorm() / c;
  Eigen::VectorXd inv_std = (var.array() + kLayerNormEps).rsqrt().matrix();
  Eigen::MatrixXd normalized = centered.array().colwise() * inv_std.array();
  Eigen::MatrixXd y = normalized.array().rowwise() * p.scale.row(0).array();
  y.rowwise() += p.shift.row(0);
  Hidden out = like(x, std::move(y));
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Hidden layer_norm_backward(const LayerNormCache& cache, const LayerNormParams& p, const Hidden& grad_out,
                           LayerNormParams& grad) {
  grad.scale += grad_out.data.cwiseProduct(cache.normalized).colwise().sum();
  grad.shift += grad_out.data.colwise().sum();
  const auto c = static_cast<double>(grad_out.channels());
  // dx = inv_std * (g - mean(g) - xhat * mean(g * xhat)), g = dy * scale
  Eigen::MatrixXd g = grad_out.data.array().rowwise() * p.scale.row(0).array();
  Eigen::VectorXd g_mean = g.rowwise().sum() / c;
  Eigen::VectorXd gx_mean = g.cwiseProduct(cache.normalized).rowwise().sum() / c;
  Eigen::MatrixXd dx = g.colwise() - g_mean;
  dx -= (cache.normalized.array().colwise() * gx_mean.array()).matrix();
  dx = dx.array().colwise() * cache.inv_std.array();
  return like(grad_out, std::move(dx));
}

}  // namespace mrgnn::ops
