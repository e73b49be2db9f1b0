#include "eoss/sharpness_metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "rng.h"

namespace eoss::metrics {
namespace {

constexpr std::uint64_t kBatchPowerTag = 0x4c4d4158ULL;

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

double mean_abs_dev(const std::vector<double>& v, double center) {
  double s = 0.0;
  for (double x : v) s += std::abs(x - center);
  return v.empty() ? 0.0 : s / v.size();
}

struct BatchSums {
  double bs_numer = 0.0;
  double full_h_numer = 0.0;
  double sq = 0.0;
  double noise = 0.0;
  double sq_minus_noise_m2 = 0.0;  // sum of squared (||g_B||^2 - ||g_B - g||^2)
  int count = 0;
  bool exhaustive = false;
};

BatchSums accumulate(const LossOracle& oracle, const VectorXd& theta,
                     const VectorXd& g, const quad::BatchPlan& plan,
                     bool need_batch_h, bool need_full_h) {
  BatchSums s;
  s.exhaustive = plan.exhaustive;
  std::optional<LinearOperator> full_op;
  if (need_full_h) full_op = oracle.full_hessian_operator(theta);
  for (const Indices& idx : plan.batches) {
    const VectorXd gb = oracle.batch_grad(theta, idx);
    const double sq = gb.squaredNorm();
    const double noise = (gb - g).squaredNorm();
    s.sq += sq;
    s.noise += noise;
    s.sq_minus_noise_m2 += (sq - noise) * (sq - noise);
    if (need_batch_h) s.bs_numer += gb.dot(oracle.hvp_batch(theta, idx, gb));
    if (need_full_h) s.full_h_numer += gb.dot(full_op->apply(gb));
    ++s.count;
  }
  return s;
}

}  // namespace

LinearOperator LossOracle::batch_hessian_operator(const VectorXd& theta,
                                                  const Indices& idx) const {
  return LinearOperator{param_dim(), [this, theta, idx](const VectorXd& v) {
                          return hvp_batch(theta, idx, v);
                        }};
}

LinearOperator LossOracle::full_hessian_operator(const VectorXd& theta) const {
  return LinearOperator{param_dim(),
                        [this, theta](const VectorXd& v) { return hvp_full(theta, v); }};
}

double QuadraticOracle::batch_loss(const VectorXd& theta, const Indices& idx) const {
  double s = 0.0;
  for (int i : idx) s += ens_.sample_loss(i, theta);
  return s / static_cast<double>(idx.size());
}

VectorXd QuadraticOracle::hvp_full(const VectorXd&, const VectorXd& v) const {
  return ens_.mean_hessian().dense() * v;
}

VectorXd QuadraticOracle::hvp_batch(const VectorXd&, const Indices& idx,
                                    const VectorXd& v) const {
  VectorXd out = VectorXd::Zero(ens_.dim());
  for (int i : idx) out.noalias() += ens_.hessian(i) * v;
  return out / static_cast<double>(idx.size());
}

double zero_gradient_floor(int param_dim) {
  return 1e-12 * std::sqrt(static_cast<double>(param_dim));
}

double lambda_max_full(const LossOracle& oracle, const VectorXd& theta,
                       const PowerIterSettings& settings, VectorXd* eigvec_out) {
  const numerics::PowerIterResult r =
      numerics::top_eigenpair(oracle.full_hessian_operator(theta), settings);
  if (eigvec_out != nullptr) *eigvec_out = r.eigvec;
  return r.lambda_max;
}

double batch_sharpness_est(const LossOracle& oracle, const VectorXd& theta,
                           const BatchMode& mode, int num_batches, std::uint64_t seed) {
  const auto plan = quad::plan_batches(oracle.num_samples(), mode, num_batches, seed);
  const VectorXd g = oracle.full_grad(theta);
  const BatchSums s = accumulate(oracle, theta, g, plan, true, false);
  if (!(s.sq > 0.0)) throw ZeroGradientError("batch_sharpness_est: all batch gradients vanish");
  return s.bs_numer / s.sq;
}

double gni_est(const LossOracle& oracle, const VectorXd& theta, const BatchMode& mode,
               int num_batches, std::uint64_t seed) {
  const VectorXd g = oracle.full_grad(theta);
  const double full_sq = g.squaredNorm();
  if (std::sqrt(full_sq) <= zero_gradient_floor(oracle.param_dim())) {
    throw ZeroGradientError("gni_est: full gradient is zero");
  }
  const auto plan = quad::plan_batches(oracle.num_samples(), mode, num_batches, seed);
  const BatchSums s = accumulate(oracle, theta, g, plan, false, true);
  return (s.full_h_numer / s.count) / full_sq;
}

double ias_est(const LossOracle& oracle, const VectorXd& theta, const BatchMode& mode,
               int num_batches, std::uint64_t seed) {
  const VectorXd g = oracle.full_grad(theta);
  const auto plan = quad::plan_batches(oracle.num_samples(), mode, num_batches, seed);
  const BatchSums s = accumulate(oracle, theta, g, plan, false, true);
  if (!(s.sq > 0.0)) throw ZeroGradientError("ias_est: all batch gradients vanish");
  return s.full_h_numer / s.sq;
}

LambdaMaxBResult lambda_max_b_est(const LossOracle& oracle, const VectorXd& theta,
                                  const BatchMode& mode, int num_batches,
                                  std::uint64_t seed, const PowerIterSettings& settings) {
  const auto plan = quad::plan_batches(oracle.num_samples(), mode, num_batches, seed);
  LambdaMaxBResult out;
  double sum = 0.0;
  for (std::size_t k = 0; k < plan.batches.size(); ++k) {
    PowerIterSettings s = settings;
    s.seed = detail::mix_seed(settings.seed, kBatchPowerTag + k);
    try {
      sum += numerics::top_eigenpair(oracle.batch_hessian_operator(theta, plan.batches[k]), s)
                 .lambda_max;
      ++out.converged;
    } catch (const ConvergenceError&) {
      out.failed.push_back(static_cast<int>(k));
    }
  }
  out.mean = out.converged > 0 ? sum / out.converged
                               : std::numeric_limits<double>::quiet_NaN();
  return out;
}

double step_sharpness(const LossOracle& oracle, const VectorXd& theta, const Indices& idx) {
  const VectorXd gb = oracle.batch_grad(theta, idx);
  const double sq = gb.squaredNorm();
  if (!(sq > 0.0)) throw ZeroGradientError("step_sharpness: batch gradient is zero");
  return gb.dot(oracle.hvp_batch(theta, idx, gb)) / sq;
}

GradNormDecomposition grad_norm_decomposition(const LossOracle& oracle,
                                              const VectorXd& theta,
                                              const BatchMode& mode, int num_batches,
                                              std::uint64_t seed) {
  const auto plan = quad::plan_batches(oracle.num_samples(), mode, num_batches, seed);
  const VectorXd g = oracle.full_grad(theta);
  const BatchSums s = accumulate(oracle, theta, g, plan, false, false);
  GradNormDecomposition d;
  d.full_sq = g.squaredNorm();
  d.batch_sq_mean = s.sq / s.count;
  d.noise_sq_mean = s.noise / s.count;
  d.exhaustive = s.exhaustive;
  if (!s.exhaustive && s.count > 1) {
    const double m = (s.sq - s.noise) / s.count;
    const double var = std::max(0.0, (s.sq_minus_noise_m2 / s.count - m * m)) *
                       s.count / (s.count - 1);
    d.identity_stderr = std::sqrt(var / s.count);
  }
  return d;
}

SharpnessReport measure(const LossOracle& oracle, const VectorXd& theta,
                        const BatchMode& mode, const MetricsRequest& req, long step,
                        std::uint64_t seed, const Indices& step_batch,
                        VectorXd* warm_start) {
  SharpnessReport r;
  r.step = step;
  r.seed = seed;
  const auto plan = quad::plan_batches(oracle.num_samples(), mode, req.num_batches, seed);
  const VectorXd g = oracle.full_grad(theta);
  r.grad_full_sq = g.squaredNorm();
  const bool need_full_h = req.gni || req.ias;
  const BatchSums s = accumulate(oracle, theta, g, plan, req.batch_sharpness, need_full_h);
  r.num_batches = s.count;
  r.grad_batch_sq_mean = s.sq / s.count;
  r.grad_noise_sq_mean = s.noise / s.count;
  if (req.batch_sharpness && s.sq > 0.0) r.batch_sharpness = s.bs_numer / s.sq;
  if (req.ias && s.sq > 0.0) r.ias = s.full_h_numer / s.sq;
  if (req.gni) {
    const bool zero = std::sqrt(r.grad_full_sq) <= zero_gradient_floor(oracle.param_dim());
    const double v = zero ? kGniSaturation : (s.full_h_numer / s.count) / r.grad_full_sq;
    r.gni_saturated = zero || v > kGniSaturation;
    r.gni = r.gni_saturated ? kGniSaturation : v;
  }
  if (req.lambda_max) {
    PowerIterSettings ps = req.full_power;
    if (warm_start != nullptr && warm_start->size() == oracle.param_dim()) ps.initial = *warm_start;
    try {
      VectorXd vec;
      r.lambda_max = lambda_max_full(oracle, theta, ps, &vec);
      if (warm_start != nullptr) *warm_start = vec;
    } catch (const ConvergenceError& e) {
      r.lambda_max = e.last_estimate();
    }
  }
  if (req.lambda_max_b) {
    const LambdaMaxBResult lb =
        lambda_max_b_est(oracle, theta, mode, req.num_batches, seed, req.batch_power);
    if (lb.converged > 0) r.lambda_max_b = lb.mean;
  }
  if (req.step_sharpness) {
    const Indices& idx = step_batch.empty() ? plan.batches.front() : step_batch;
    try {
      r.step_sharpness = step_sharpness(oracle, theta, idx);
    } catch (const ZeroGradientError&) {
    }
  }
  return r;
}

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{
      "step",         "batch_sharpness",    "gni",       "ias",
      "lambda_max",   "lambda_max_b",       "step_sharpness",
      "grad_full_sq", "grad_batch_sq_mean", "grad_noise_sq_mean",
      "num_batches",  "seed"};
  return cols;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> report_fields(const SharpnessReport& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  return {std::to_string(r.step),
          opt(r.batch_sharpness),
          opt(r.gni),
          opt(r.ias),
          opt(r.lambda_max),
          opt(r.lambda_max_b),
          opt(r.step_sharpness),
          format_double(r.grad_full_sq),
          format_double(r.grad_batch_sq_mean),
          format_double(r.grad_noise_sq_mean),
          std::to_string(r.num_batches),
          std::to_string(r.seed)};
}

std::string to_string(OscillationKind k) {
  switch (k) {
    case OscillationKind::kNone: return "none";
    case OscillationKind::kType1: return "type1";
    case OscillationKind::kType2: return "type2";
  }
  return "none";
}

OscillationVerdict classify_oscillation(TrainerHandle& trainer, const ProbeConfig& probe) {
  if (!trainer.supports_checkpoint()) {
    throw InvalidArgument("classify_oscillation: trainer does not support checkpoints");
  }
  if (probe.probe_steps < 1 || !(probe.catapult_factor > 1.0) || probe.window < 3) {
    throw InvalidArgument("classify_oscillation: need probe_steps >= 1, catapult_factor > 1, window >= 3");
  }
  if (!probe.eta_factor && !probe.new_b) {
    throw InvalidArgument("classify_oscillation: no perturbation configured");
  }
  const std::vector<double>& hist = trainer.loss_history();
  if (hist.size() < 50) {
    throw InvalidArgument("classify_oscillation: need a baseline of at least 50 steps");
  }
  const TrainerState saved = trainer.checkpoint();

  OscillationVerdict v;
  const std::vector<double> pre_window(hist.end() - probe.window, hist.end());
  const std::vector<double> pre_tail(hist.end() - 50, hist.end());
  const double pre_median = median_of(pre_window);
  v.amplitude_before = mean_abs_dev(pre_tail, median_of(pre_tail));
  v.batch_sharpness_before = trainer.batch_sharpness_now();

  if (probe.eta_factor) trainer.set_eta(trainer.eta() * *probe.eta_factor);
  if (probe.new_b) trainer.set_batch_size(*probe.new_b);
  v.threshold = 2.0 / trainer.eta();

  std::vector<double> post;
  post.reserve(probe.probe_steps);
  double peak = -std::numeric_limits<double>::infinity();
  bool blew_up = false;
  for (int k = 0; k < probe.probe_steps; ++k) {
    trainer.step();
    const double l = trainer.full_loss();
    if (!std::isfinite(l)) {
      blew_up = true;
      break;
    }
    post.push_back(l);
    peak = std::max(peak, l);
  }
  v.peak_loss_ratio = blew_up ? std::numeric_limits<double>::infinity() : peak / pre_median;
  if (!blew_up && static_cast<int>(post.size()) >= probe.window) {
    const std::vector<double> tail(post.end() - std::min<std::size_t>(post.size(), 50), post.end());
    const double post_median = median_of(
        std::vector<double>(post.end() - probe.window, post.end()));
    v.amplitude_after = mean_abs_dev(tail, median_of(tail));
    // Settled: never spiked, or came back down from the spike by the catapult
    // factor. A larger step settles on a higher noise floor, so the pre-probe
    // level is not the reference after a catapult.
    v.restabilized = post_median < probe.catapult_factor * pre_median ||
                     post_median * probe.catapult_factor <= peak;
    try {
      v.batch_sharpness_after = trainer.batch_sharpness_now();
    } catch (const ZeroGradientError&) {
    }
  } else {
    v.amplitude_after = std::numeric_limits<double>::infinity();
  }

  const bool catapult = v.peak_loss_ratio >= probe.catapult_factor;
  if (catapult && v.batch_sharpness_before > v.threshold) {
    v.kind = OscillationKind::kType2;
  } else if (v.amplitude_after > v.amplitude_before) {
    v.kind = OscillationKind::kType1;
  }
  if (probe.restore_after) trainer.restore(saved);
  return v;
}

QuadraticTrainer::QuadraticTrainer(const quad::QuadraticEnsemble& ens, double eta,
                                   BatchMode mode, VectorXd theta0, std::uint64_t seed)
    : ens_(ens), eta_(eta), mode_(mode), theta_(std::move(theta0)), seed_(seed) {
  if (theta_.size() != ens_.dim()) {
    throw InvalidArgument("QuadraticTrainer: theta0 has the wrong dimension");
  }
}

void QuadraticTrainer::step() {
  const Indices idx = quad::sample_batch(ens_.size(), mode_, seed_,
                                         static_cast<std::uint64_t>(step_));
  theta_ -= eta_ * ens_.batch_grad(theta_, idx);
  ++step_;
  history_.push_back(ens_.loss(theta_));
}

double QuadraticTrainer::batch_sharpness_now() const {
  return quad::batch_sharpness_exact(ens_, theta_, mode_, 256, seed_);
}

TrainerState QuadraticTrainer::checkpoint() const {
  return TrainerState{theta_, step_, eta_, mode_.b, history_};
}

void QuadraticTrainer::restore(const TrainerState& s) {
  theta_ = s.params;
  step_ = s.step;
  eta_ = s.eta;
  mode_.b = s.batch_size;
  history_ = s.loss_history;
}

}  // namespace eoss::metrics
