#pragma once

// Differentiable building blocks. Every forward function optionally fills a
// cache; the matching backward function consumes it, accumulates parameter
// gradients into `grad` and returns (or accumulates) input gradients.
//
// Nondifferentiable points use subgradient 0: ReLU'(0) = 0, sign(0) = 0.

#include <Eigen/Dense>

#include "mrgnn/data.hpp"

namespace mrgnn::ops {

/// Linear map with bias. weight is c_in x c_out, bias is 1 x c_out.
struct ConvParams {
  Eigen::MatrixXd weight;
  Eigen::MatrixXd bias;

  static ConvParams zeros(Eigen::Index in, Eigen::Index out) {
    return {Eigen::MatrixXd::Zero(in, out), Eigen::MatrixXd::Zero(1, out)};
  }
};

struct LayerNormParams {
  Eigen::MatrixXd scale;  // 1 x C
  Eigen::MatrixXd shift;  // 1 x C
};

inline constexpr double kLayerNormEps = 1e-5;

/// a applied to every (sample, step) slice: out slice = a * x slice.
Hidden propagate(const Eigen::MatrixXd& a, const Hidden& x);
/// Adjoint of propagate: grad_x slice += a^T * grad_out slice.
void propagate_backward(const Eigen::MatrixXd& a, const Hidden& grad_out, Hidden& grad_x);

/// Width-`kernel` causal convolution along time with shared weights.
/// weight stacks one c_in x c_out tap per lag: rows [k*c_in, (k+1)*c_in) hold
/// the tap applied to step t'+k for output step t'. Output steps = steps - kernel + 1.
Hidden causal_linear(const Hidden& x, const ConvParams& p, int kernel);
void causal_linear_backward(const Hidden& x, const ConvParams& p, int kernel, const Hidden& grad_out, ConvParams& grad,
                            Hidden* grad_x);

struct GatedConvCache {
  Hidden input;
  Eigen::MatrixXd linear;  // P half
  Eigen::MatrixXd gate;    // sigmoid(Q half)
};

/// Causal convolution to 2*c_out channels split into P | Q; output P * sigmoid(Q).
Hidden temporal_gated_conv(const Hidden& x, const ConvParams& p, int kernel, GatedConvCache* cache = nullptr);
Hidden temporal_gated_conv_backward(const GatedConvCache& cache, const ConvParams& p, int kernel, const Hidden& grad_out,
                                    ConvParams& grad);

struct GraphConvCache {
  Hidden features;        // smoothed input to the linear map
  Eigen::MatrixXd pre;    // pre-activation
  Hidden aggregated;      // cross-mode aggregate (inter-modal only)
  Eigen::MatrixXd gap;    // signed gap (difference conv only)

  /// Smallest |x| over ReLU and abs inputs, to keep finite differences off kinks.
  double kink_margin() const;
};

/// ReLU(a h W + l).
Hidden intra_modal_conv(const Hidden& h, const Eigen::MatrixXd& a, const ConvParams& p, GraphConvCache* cache = nullptr);
void intra_modal_conv_backward(const GraphConvCache& cache, const Eigen::MatrixXd& a, const ConvParams& p,
                               const Hidden& grad_out, ConvParams& grad, Hidden& grad_h);

/// ReLU(a_target (a_cross h_aux) W + l).
Hidden inter_modal_similarity_conv(const Hidden& aux, const Eigen::MatrixXd& a_target, const Eigen::MatrixXd& a_cross,
                                   const ConvParams& p, GraphConvCache* cache = nullptr);
void inter_modal_similarity_conv_backward(const GraphConvCache& cache, const Eigen::MatrixXd& a_target,
                                          const Eigen::MatrixXd& a_cross, const ConvParams& p, const Hidden& grad_out,
                                          ConvParams& grad, Hidden& grad_aux);

/// ReLU(a_target |a_cross h_aux - h_target| W + l).
Hidden inter_modal_difference_conv(const Hidden& aux, const Hidden& target, const Eigen::MatrixXd& a_target,
                                   const Eigen::MatrixXd& a_cross, const ConvParams& p, GraphConvCache* cache = nullptr);
void inter_modal_difference_conv_backward(const GraphConvCache& cache, const Eigen::MatrixXd& a_target,
                                          const Eigen::MatrixXd& a_cross, const ConvParams& p, const Hidden& grad_out,
                                          ConvParams& grad, Hidden& grad_aux, Hidden& grad_target);

struct LayerNormCache {
  Eigen::MatrixXd normalized;  // before scale/shift
  Eigen::VectorXd inv_std;
};

/// Normalizes each row (one node at one step) over the channel axis.
Hidden layer_norm(const Hidden& x, const LayerNormParams& p, LayerNormCache* cache = nullptr);
Hidden layer_norm_backward(const LayerNormCache& cache, const LayerNormParams& p, const Hidden& grad_out,
                           LayerNormParams& grad);

}  // namespace mrgnn::ops
