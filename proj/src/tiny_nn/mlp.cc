#include "eoss/tiny_nn/mlp.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include "eoss/errors.h"
#include "eoss/simd/kernels.h"
#include "rng.h"

namespace eoss::nn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  throw InvalidArgument("unknown activation '" + s + "'");
}

MlpShape::MlpShape(std::vector<int> dims, Activation act) : dims_(std::move(dims)), act_(act) {
  if (dims_.size() < 3) throw InvalidArgument("an MLP needs at least one hidden layer");
  for (std::size_t i = 0; i < dims_.size(); ++i)
    if (dims_[i] < 1) throw InvalidArgument("layer widths must be >= 1", static_cast<long>(i));
  offsets_.resize(dims_.size() - 1);
  for (int l = 0; l < num_layers(); ++l) {
    offsets_[l] = param_count_;
    param_count_ += dims_[l] * dims_[l + 1] + dims_[l + 1];
  }
}

std::vector<MatrixXd> MlpParams::weights() const {
  std::vector<MatrixXd> out;
  for (int l = 0; l < shape.num_layers(); ++l) {
    const int rows = shape.dims()[l + 1], cols = shape.dims()[l];
    MatrixXd w(rows, cols);
    const double* p = flat.data() + shape.weight_offset(l);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) w(r, c) = p[r * cols + c];
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<VectorXd> MlpParams::biases() const {
  std::vector<VectorXd> out;
  for (int l = 0; l < shape.num_layers(); ++l)
    out.push_back(flat.segment(shape.bias_offset(l), shape.dims()[l + 1]));
  return out;
}

MlpParams MlpParams::FromStructured(const MlpShape& shape, const std::vector<MatrixXd>& w,
                                    const std::vector<VectorXd>& b) {
  const int layers = shape.num_layers();
  if (static_cast<int>(w.size()) != layers || static_cast<int>(b.size()) != layers)
    throw InvalidArgument("layer count does not match shape");
  MlpParams p{shape, VectorXd::Zero(shape.param_count())};
  for (int l = 0; l < layers; ++l) {
    const int rows = shape.dims()[l + 1], cols = shape.dims()[l];
    if (w[l].rows() != rows || w[l].cols() != cols || b[l].size() != rows)
      throw InvalidArgument("layer shape mismatch", l);
    double* dst = p.flat.data() + shape.weight_offset(l);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) dst[r * cols + c] = w[l](r, c);
    p.flat.segment(shape.bias_offset(l), rows) = b[l];
  }
  return p;
}

MlpParams init_mlp(const std::vector<int>& layer_dims, Activation act, double init_scale,
                   std::uint64_t seed) {
  MlpShape shape(layer_dims, act);
  if (!std::isfinite(init_scale)) throw InvalidArgument("init_scale must be finite");
  MlpParams p{shape, VectorXd::Zero(shape.param_count())};
  std::mt19937_64 rng(detail::mix_seed(seed, 0x1a17));
  std::normal_distribution<double> normal;
  for (int l = 0; l < shape.num_layers(); ++l) {
    const int fan_in = layer_dims[l];
    const double sd = std::sqrt(2.0 / fan_in) * init_scale;
    const int count = layer_dims[l] * layer_dims[l + 1];
    double* w = p.flat.data() + shape.weight_offset(l);
    for (int i = 0; i < count; ++i) w[i] = sd * normal(rng);
  }
  return p;
}

namespace {

void check_shapes(const MlpShape& shape, const VectorXd& theta, const Dataset& data) {
  if (theta.size() != shape.param_count())
    throw InvalidArgument("parameter vector length does not match the network");
  if (data.d_in != shape.input_dim()) throw InvalidArgument("input width mismatch");
  if (data.k != shape.output_dim()) throw InvalidArgument("target width mismatch");
}

void check_indices(const Indices& idx, int n) {
  if (idx.empty()) throw InvalidArgument("empty batch");
  for (std::size_t t = 0; t < idx.size(); ++t)
    if (idx[t] < 0 || idx[t] >= n) throw InvalidArgument("batch index out of range", static_cast<long>(t));
}

Indices all_indices(int n) {
  Indices idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

// Offsets of each activation level in a concatenated per-sample buffer.
struct Levels {
  explicit Levels(const MlpShape& s) {
    off.resize(s.dims().size() + 1, 0);
    for (std::size_t l = 0; l < s.dims().size(); ++l) off[l + 1] = off[l] + s.dims()[l];
    total = off.back();
  }
  std::vector<int> off;
  int total = 0;
};

void activate(Activation act, double* z, double* d1, double* d2, int n) {
  switch (act) {
    case Activation::kTanh:
      for (int i = 0; i < n; ++i) {
        const double a = std::tanh(z[i]);
        z[i] = a;
        d1[i] = 1.0 - a * a;
        d2[i] = -2.0 * a * d1[i];
      }
      break;
    case Activation::kRelu:
      for (int i = 0; i < n; ++i) {
        const bool on = z[i] > 0.0;
        z[i] = on ? z[i] : 0.0;
        d1[i] = on ? 1.0 : 0.0;
        d2[i] = 0.0;
      }
      break;
    case Activation::kIdentity:
      std::fill(d1, d1 + n, 1.0);
      std::fill(d2, d2 + n, 0.0);
      break;
  }
}

// Fills levels 0..L of `a` (the output level holds the raw prediction).
void forward_sample(const simd::KernelTable& k, const MlpShape& s, const Levels& lv,
                    const double* theta, const double* x, double* a, double* d1, double* d2) {
  const auto& dims = s.dims();
  std::copy(x, x + dims[0], a);
  const int layers = s.num_layers();
  for (int l = 0; l < layers; ++l) {
    const int in = dims[l], out = dims[l + 1];
    double* z = a + lv.off[l + 1];
    k.gemv(theta + s.weight_offset(l), a + lv.off[l], z, out, in, false);
    k.axpy(1.0, theta + s.bias_offset(l), z, out);
    if (l + 1 < layers) {
      activate(s.activation(), z, d1 + lv.off[l + 1], d2 + lv.off[l + 1], out);
    } else {
      std::fill(d1 + lv.off[l + 1], d1 + lv.off[l + 1] + out, 1.0);
      std::fill(d2 + lv.off[l + 1], d2 + lv.off[l + 1] + out, 0.0);
    }
  }
}

double residual_sq(const double* pred, const double* y, int k) {
  double s = 0.0;
  for (int j = 0; j < k; ++j) s += (pred[j] - y[j]) * (pred[j] - y[j]);
  return s;
}

// delta at the output is `scale * (f - y)`; accumulates into g and leaves
// dLoss/dz per level in `delta` and W^T delta in `back`.
void backward_sample(const simd::KernelTable& k, const MlpShape& s, const Levels& lv,
                     const double* theta, const double* a, const double* d1, const double* y,
                     double scale, double* g, double* delta, double* back) {
  const auto& dims = s.dims();
  const int layers = s.num_layers();
  const int L = layers;
  for (int j = 0; j < dims[L]; ++j) delta[lv.off[L] + j] = scale * (a[lv.off[L] + j] - y[j]);
  for (int l = layers - 1; l >= 0; --l) {
    const int in = dims[l], out = dims[l + 1];
    const double* dl = delta + lv.off[l + 1];
    k.ger(1.0, dl, a + lv.off[l], g + s.weight_offset(l), out, in);
    k.axpy(1.0, dl, g + s.bias_offset(l), out);
    if (l > 0) {
      double* bk = back + lv.off[l];
      std::fill(bk, bk + in, 0.0);
      k.gemv_t(theta + s.weight_offset(l), dl, bk, out, in);
      for (int i = 0; i < in; ++i) delta[lv.off[l] + i] = d1[lv.off[l] + i] * bk[i];
    }
  }
}

}  // namespace

MatrixXd predict(const MlpShape& shape, const VectorXd& theta, const Dataset& data) {
  check_shapes(shape, theta, data);
  const auto& k = simd::kernels();
  Levels lv(shape);
  std::vector<double> a(lv.total), d1(lv.total), d2(lv.total);
  MatrixXd out(data.n, data.k);
  const int L = shape.num_layers();
  for (int i = 0; i < data.n; ++i) {
    forward_sample(k, shape, lv, theta.data(), data.input(i), a.data(), d1.data(), d2.data());
    for (int j = 0; j < data.k; ++j) out(i, j) = a[lv.off[L] + j];
  }
  return out;
}

double forward_loss(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
                    const Indices& idx) {
  check_shapes(shape, theta, data);
  check_indices(idx, data.n);
  const auto& k = simd::kernels();
  Levels lv(shape);
  std::vector<double> a(lv.total), d1(lv.total), d2(lv.total);
  const int L = shape.num_layers();
  double sum = 0.0;
  for (int i : idx) {
    forward_sample(k, shape, lv, theta.data(), data.input(i), a.data(), d1.data(), d2.data());
    sum += residual_sq(a.data() + lv.off[L], data.target(i), data.k);
  }
  return 0.5 * sum / static_cast<double>(idx.size());
}

double forward_loss(const MlpShape& shape, const VectorXd& theta, const Dataset& data) {
  return forward_loss(shape, theta, data, all_indices(data.n));
}

VectorXd grad(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
              const Indices& idx, double* loss_out) {
  check_shapes(shape, theta, data);
  check_indices(idx, data.n);
  const auto& k = simd::kernels();
  Levels lv(shape);
  std::vector<double> a(lv.total), d1(lv.total), d2(lv.total), delta(lv.total), back(lv.total);
  VectorXd g = VectorXd::Zero(shape.param_count());
  const double scale = 1.0 / static_cast<double>(idx.size());
  const int L = shape.num_layers();
  double sum = 0.0;
  for (int i : idx) {
    forward_sample(k, shape, lv, theta.data(), data.input(i), a.data(), d1.data(), d2.data());
    if (loss_out) sum += residual_sq(a.data() + lv.off[L], data.target(i), data.k);
    backward_sample(k, shape, lv, theta.data(), a.data(), d1.data(), data.target(i), scale,
                    g.data(), delta.data(), back.data());
  }
  if (loss_out) *loss_out = 0.5 * sum * scale;
  return g;
}

VectorXd grad(const MlpShape& shape, const VectorXd& theta, const Dataset& data) {
  return grad(shape, theta, data, all_indices(data.n));
}

VectorXd weighted_grad(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
                       const std::vector<double>& weights) {
  check_shapes(shape, theta, data);
  if (static_cast<int>(weights.size()) != data.n)
    throw InvalidArgument("one weight per sample required");
  const auto& k = simd::kernels();
  Levels lv(shape);
  std::vector<double> a(lv.total), d1(lv.total), d2(lv.total), delta(lv.total), back(lv.total);
  VectorXd g = VectorXd::Zero(shape.param_count());
  for (int i = 0; i < data.n; ++i) {
    forward_sample(k, shape, lv, theta.data(), data.input(i), a.data(), d1.data(), d2.data());
    backward_sample(k, shape, lv, theta.data(), a.data(), d1.data(), data.target(i),
                    weights[i] / data.n, g.data(), delta.data(), back.data());
  }
  return g;
}

MatrixXd per_sample_grads(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
                          const Indices& idx) {
  check_shapes(shape, theta, data);
  check_indices(idx, data.n);
  const auto& k = simd::kernels();
  Levels lv(shape);
  std::vector<double> a(lv.total), d1(lv.total), d2(lv.total), delta(lv.total), back(lv.total);
  const int p = shape.param_count();
  MatrixXd out(idx.size(), p);
  VectorXd g(p);
  for (std::size_t t = 0; t < idx.size(); ++t) {
    g.setZero();
    const int i = idx[t];
    forward_sample(k, shape, lv, theta.data(), data.input(i), a.data(), d1.data(), d2.data());
    backward_sample(k, shape, lv, theta.data(), a.data(), d1.data(), data.target(i), 1.0,
                    g.data(), delta.data(), back.data());
    out.row(t) = g.transpose();
  }
  return out;
}

CurvatureCache::CurvatureCache(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
                               Indices idx)
    : shape_(shape), theta_(theta), idx_(std::move(idx)) {
  check_shapes(shape, theta, data);
  check_indices(idx_, data.n);
  const auto& k = simd::kernels();
  Levels lv(shape);
  act_off_ = lv.off;
  act_stride_ = lv.total;
  const std::size_t m = idx_.size();
  const std::size_t total = m * static_cast<std::size_t>(lv.total);
  act_.assign(total, 0.0);
  d1_.assign(total, 0.0);
  d2_.assign(total, 0.0);
  delta_.assign(total, 0.0);
  back_.assign(total, 0.0);
  grad_ = VectorXd::Zero(shape.param_count());
  const double scale = 1.0 / static_cast<double>(m);
  const int L = shape.num_layers();
  double sum = 0.0;
  for (std::size_t t = 0; t < m; ++t) {
    const std::size_t o = t * lv.total;
    forward_sample(k, shape, lv, theta_.data(), data.input(idx_[t]), &act_[o], &d1_[o], &d2_[o]);
    sum += residual_sq(&act_[o + lv.off[L]], data.target(idx_[t]), data.k);
    backward_sample(k, shape, lv, theta_.data(), &act_[o], &d1_[o], data.target(idx_[t]), scale,
                    grad_.data(), &delta_[o], &back_[o]);
  }
  loss_ = 0.5 * sum * scale;
}

VectorXd CurvatureCache::hvp(const VectorXd& v) const { return apply(v, true); }
VectorXd CurvatureCache::ggn_hvp(const VectorXd& v) const { return apply(v, false); }

VectorXd CurvatureCache::apply(const VectorXd& v, bool second_order) const {
  const int p = shape_.param_count();
  if (v.size() != p) throw InvalidArgument("direction length does not match the network");
  const auto& k = simd::kernels();
  const auto& dims = shape_.dims();
  const int layers = shape_.num_layers();
  const double* th = theta_.data();
  const double* vv = v.data();
  const double scale = 1.0 / static_cast<double>(idx_.size());
  VectorXd out = VectorXd::Zero(p);
  double* o = out.data();
  std::vector<double> rz(act_stride_), ra(act_stride_), rdelta(act_stride_), rback(act_stride_);

  for (std::size_t t = 0; t < idx_.size(); ++t) {
    const std::size_t base = t * act_stride_;
    const double* a = &act_[base];
    const double* d1 = &d1_[base];
    const double* d2 = &d2_[base];
    const double* delta = &delta_[base];
    const double* back = &back_[base];

    // Forward directional derivative: R(z), R(a) per level.
    std::fill(ra.begin(), ra.begin() + dims[0], 0.0);
    for (int l = 0; l < layers; ++l) {
      const int in = dims[l], out_w = dims[l + 1];
      double* z = &rz[act_off_[l + 1]];
      k.gemv(vv + shape_.weight_offset(l), a + act_off_[l], z, out_w, in, false);
      k.axpy(1.0, vv + shape_.bias_offset(l), z, out_w);
      if (l > 0) k.gemv(th + shape_.weight_offset(l), &ra[act_off_[l]], z, out_w, in, true);
      double* r = &ra[act_off_[l + 1]];
      const double* s1 = d1 + act_off_[l + 1];
      for (int j = 0; j < out_w; ++j) r[j] = s1[j] * z[j];
    }

    // Reverse pass on the directional derivative of the backward recursion.
    const int L = layers;
    for (int j = 0; j < dims[L]; ++j) rdelta[act_off_[L] + j] = scale * rz[act_off_[L] + j];
    for (int l = layers - 1; l >= 0; --l) {
      const int in = dims[l], out_w = dims[l + 1];
      const double* rd = &rdelta[act_off_[l + 1]];
      k.ger(1.0, rd, a + act_off_[l], o + shape_.weight_offset(l), out_w, in);
      if (second_order && l > 0)
        k.ger(1.0, delta + act_off_[l + 1], &ra[act_off_[l]], o + shape_.weight_offset(l), out_w, in);
      k.axpy(1.0, rd, o + shape_.bias_offset(l), out_w);
      if (l == 0) break;
      double* rb = &rback[act_off_[l]];
      std::fill(rb, rb + in, 0.0);
      k.gemv_t(th + shape_.weight_offset(l), rd, rb, out_w, in);
      if (second_order) k.gemv_t(vv + shape_.weight_offset(l), delta + act_off_[l + 1], rb, out_w, in);
      double* rdl = &rdelta[act_off_[l]];
      const double* s1 = d1 + act_off_[l];
      if (second_order) {
        const double* s2 = d2 + act_off_[l];
        const double* bk = back + act_off_[l];
        const double* z = &rz[act_off_[l]];
        for (int i = 0; i < in; ++i) rdl[i] = s1[i] * rb[i] + s2[i] * z[i] * bk[i];
      } else {
        for (int i = 0; i < in; ++i) rdl[i] = s1[i] * rb[i];
      }
    }
  }
  return out;
}

VectorXd hvp(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
             const Indices& idx, const VectorXd& v) {
  return CurvatureCache(shape, theta, data, idx).hvp(v);
}

VectorXd ggn_hvp(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
                 const Indices& idx, const VectorXd& v) {
  return CurvatureCache(shape, theta, data, idx).ggn_hvp(v);
}

double MlpOracle::full_loss(const VectorXd& theta) const {
  return forward_loss(shape_, theta, data_);
}
double MlpOracle::batch_loss(const VectorXd& theta, const Indices& idx) const {
  return forward_loss(shape_, theta, data_, idx);
}
VectorXd MlpOracle::full_grad(const VectorXd& theta) const { return grad(shape_, theta, data_); }
VectorXd MlpOracle::batch_grad(const VectorXd& theta, const Indices& idx) const {
  return grad(shape_, theta, data_, idx);
}
VectorXd MlpOracle::hvp_full(const VectorXd& theta, const VectorXd& v) const {
  return hvp(shape_, theta, data_, all_indices(data_.n), v);
}
VectorXd MlpOracle::hvp_batch(const VectorXd& theta, const Indices& idx, const VectorXd& v) const {
  return hvp(shape_, theta, data_, idx, v);
}

metrics::LinearOperator MlpOracle::batch_hessian_operator(const VectorXd& theta,
                                                          const Indices& idx) const {
  auto cache = std::make_shared<CurvatureCache>(shape_, theta, data_, idx);
  return {shape_.param_count(), [cache](const VectorXd& v) { return cache->hvp(v); }};
}

metrics::LinearOperator MlpOracle::full_hessian_operator(const VectorXd& theta) const {
  return batch_hessian_operator(theta, all_indices(data_.n));
}

}  // namespace eoss::nn
