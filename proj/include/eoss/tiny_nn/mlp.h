#pragma once

// A fully connected network f(x) = W_L s(... s(W_1 x + b_1) ...) + b_L under
// the loss (1 / 2B) sum_i ||f(x_i) - y_i||^2, with reverse-mode gradients and
// exact Hessian-vector products (R-operator over the backward pass).

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eoss/sharpness_metrics.h"
#include "eoss/tiny_nn/dataset.h"

namespace eoss::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using metrics::Indices;

enum class Activation { kTanh, kRelu, kIdentity };
std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

/// Layer widths and the flat parameter layout: for each layer, W (out x in,
/// row-major) followed by b (out).
class MlpShape {
 public:
  MlpShape(std::vector<int> dims, Activation act);

  const std::vector<int>& dims() const { return dims_; }
  Activation activation() const { return act_; }
  int num_layers() const { return static_cast<int>(dims_.size()) - 1; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  int param_count() const { return param_count_; }
  int weight_offset(int layer) const { return offsets_[layer]; }
  int bias_offset(int layer) const {
    return offsets_[layer] + dims_[layer] * dims_[layer + 1];
  }

 private:
  std::vector<int> dims_;
  Activation act_;
  std::vector<int> offsets_;
  int param_count_ = 0;
};

struct MlpParams {
  MlpShape shape;
  VectorXd flat;

  std::vector<MatrixXd> weights() const;
  std::vector<VectorXd> biases() const;
  static MlpParams FromStructured(const MlpShape& shape, const std::vector<MatrixXd>& w,
                                  const std::vector<VectorXd>& b);
};

/// He-style init: W ~ N(0, 2 / fan_in) * init_scale, biases zero.
MlpParams init_mlp(const std::vector<int>& layer_dims, Activation act, double init_scale,
                   std::uint64_t seed);

// Network outputs for every sample of `data` (n x k).
MatrixXd predict(const MlpShape& shape, const VectorXd& theta, const Dataset& data);

double forward_loss(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
                    const Indices& idx);
double forward_loss(const MlpShape& shape, const VectorXd& theta, const Dataset& data);

VectorXd grad(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
              const Indices& idx, double* loss_out = nullptr);
VectorXd grad(const MlpShape& shape, const VectorXd& theta, const Dataset& data);

// Gradient of (1/n) sum_i w_i l_i over all samples.
VectorXd weighted_grad(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
                       const std::vector<double>& weights);

// Rows are grad l_i (unaveraged per-sample gradients), one per sample of idx.
MatrixXd per_sample_grads(const MlpShape& shape, const VectorXd& theta,
                          const Dataset& data, const Indices& idx);

/// Forward/backward state of one batch at fixed parameters. Applying the
/// Hessian or Gauss-Newton matrix to many vectors reuses it.
class CurvatureCache {
 public:
  CurvatureCache(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
                 Indices idx);

  VectorXd hvp(const VectorXd& v) const;
  // J^T J v / B
  VectorXd ggn_hvp(const VectorXd& v) const;
  double loss() const { return loss_; }
  const VectorXd& gradient() const { return grad_; }

 private:
  VectorXd apply(const VectorXd& v, bool second_order) const;

  const MlpShape& shape_;
  VectorXd theta_;
  Indices idx_;
  double loss_ = 0.0;
  VectorXd grad_;
  // Per sample, per layer, concatenated.
  std::vector<double> act_;    // a_0 .. a_L
  std::vector<double> d1_;     // s'(z_l) for hidden layers (1 for output)
  std::vector<double> d2_;     // s''(z_l)
  std::vector<double> delta_;  // dLoss/dz_l
  std::vector<double> back_;   // W_{l+1}^T delta_{l+1}
  std::vector<int> act_off_;
  int act_stride_ = 0;
};

VectorXd hvp(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
             const Indices& idx, const VectorXd& v);
VectorXd ggn_hvp(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
                 const Indices& idx, const VectorXd& v);

/// LossOracle backed by the network and a dataset.
class MlpOracle final : public metrics::LossOracle {
 public:
  MlpOracle(const MlpShape& shape, const Dataset& data) : shape_(shape), data_(data) {}

  int num_samples() const override { return data_.n; }
  int param_dim() const override { return shape_.param_count(); }
  double full_loss(const VectorXd& theta) const override;
  double batch_loss(const VectorXd& theta, const Indices& idx) const override;
  VectorXd full_grad(const VectorXd& theta) const override;
  VectorXd batch_grad(const VectorXd& theta, const Indices& idx) const override;
  VectorXd hvp_full(const VectorXd& theta, const VectorXd& v) const override;
  VectorXd hvp_batch(const VectorXd& theta, const Indices& idx,
                     const VectorXd& v) const override;
  metrics::LinearOperator batch_hessian_operator(const VectorXd& theta,
                                                 const Indices& idx) const override;
  metrics::LinearOperator full_hessian_operator(const VectorXd& theta) const override;

  const MlpShape& shape() const { return shape_; }
  const Dataset& data() const { return data_; }

 private:
  const MlpShape& shape_;
  const Dataset& data_;
};

}  // namespace eoss::nn
