#pragma once

// Curvature statistics of mini-batch SGD, generic over any differentiable loss
// exposing gradients and Hessian-vector products.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eoss/numerics.h"
#include "eoss/quadratic_lab.h"

namespace eoss::metrics {

using numerics::LinearOperator;
using numerics::PowerIterSettings;
using numerics::VectorXd;
using quad::BatchMode;
using quad::Replacement;

using Indices = std::vector<int>;

/// Loss L(theta) = mean_i l_i(theta) over a finite sample set. Implementations
/// must be safe for concurrent const calls at a fixed theta.
class LossOracle {
 public:
  virtual ~LossOracle() = default;

  virtual int num_samples() const = 0;
  virtual int param_dim() const = 0;

  virtual double full_loss(const VectorXd& theta) const = 0;
  virtual double batch_loss(const VectorXd& theta, const Indices& idx) const = 0;
  virtual VectorXd full_grad(const VectorXd& theta) const = 0;
  virtual VectorXd batch_grad(const VectorXd& theta, const Indices& idx) const = 0;
  virtual VectorXd hvp_full(const VectorXd& theta, const VectorXd& v) const = 0;
  virtual VectorXd hvp_batch(const VectorXd& theta, const Indices& idx,
                             const VectorXd& v) const = 0;

  // v -> H_B(theta) v. Back ends may override to cache the forward pass.
  virtual LinearOperator batch_hessian_operator(const VectorXd& theta,
                                                const Indices& idx) const;
  virtual LinearOperator full_hessian_operator(const VectorXd& theta) const;
};

/// LossOracle over a QuadraticEnsemble; Hessian products are exact.
class QuadraticOracle final : public LossOracle {
 public:
  explicit QuadraticOracle(const quad::QuadraticEnsemble& ens) : ens_(ens) {}

  int num_samples() const override { return ens_.size(); }
  int param_dim() const override { return ens_.dim(); }
  double full_loss(const VectorXd& theta) const override { return ens_.loss(theta); }
  double batch_loss(const VectorXd& theta, const Indices& idx) const override;
  VectorXd full_grad(const VectorXd& theta) const override { return ens_.full_grad(theta); }
  VectorXd batch_grad(const VectorXd& theta, const Indices& idx) const override {
    return ens_.batch_grad(theta, idx);
  }
  VectorXd hvp_full(const VectorXd& theta, const VectorXd& v) const override;
  VectorXd hvp_batch(const VectorXd& theta, const Indices& idx,
                     const VectorXd& v) const override;

  const quad::QuadraticEnsemble& ensemble() const { return ens_; }

 private:
  const quad::QuadraticEnsemble& ens_;
};

// Gradient norms below this count as zero in GNI's denominator.
double zero_gradient_floor(int param_dim);
// GNI values above this are reported as saturated.
inline constexpr double kGniSaturation = 1e6;

double lambda_max_full(const LossOracle& oracle, const VectorXd& theta,
                       const PowerIterSettings& settings,
                       VectorXd* eigvec_out = nullptr);

/// Batch Sharpness E_B[g_B^T H_B g_B] / E_B[||g_B||^2] (ratio of means).
/// Batches are enumerated when C(n, b) <= 4096, sampled otherwise.
double batch_sharpness_est(const LossOracle& oracle, const VectorXd& theta,
                           const BatchMode& mode, int num_batches, std::uint64_t seed);

/// E_B[g_B^T H g_B] / ||g||^2 with the full-batch Hessian H.
double gni_est(const LossOracle& oracle, const VectorXd& theta,
               const BatchMode& mode, int num_batches, std::uint64_t seed);

/// E_B[g_B^T H g_B] / E_B[||g_B||^2].
double ias_est(const LossOracle& oracle, const VectorXd& theta,
               const BatchMode& mode, int num_batches, std::uint64_t seed);

struct LambdaMaxBResult {
  double mean = 0.0;       // over converged batches
  int converged = 0;
  std::vector<int> failed; // plan positions whose power iteration did not converge
};

/// E_B[lambda_max(H_B)] by per-batch power iteration.
LambdaMaxBResult lambda_max_b_est(const LossOracle& oracle, const VectorXd& theta,
                                  const BatchMode& mode, int num_batches,
                                  std::uint64_t seed, const PowerIterSettings& settings);

/// g_B^T H_B g_B / ||g_B||^2 on one batch.
double step_sharpness(const LossOracle& oracle, const VectorXd& theta, const Indices& idx);

struct GradNormDecomposition {
  double full_sq = 0.0;
  double batch_sq_mean = 0.0;
  double noise_sq_mean = 0.0;
  // Standard error of batch_sq_mean - noise_sq_mean; zero for exhaustive plans.
  double identity_stderr = 0.0;
  bool exhaustive = false;
};

/// E||g_B||^2 = ||g||^2 + E||g_B - g||^2.
GradNormDecomposition grad_norm_decomposition(const LossOracle& oracle,
                                              const VectorXd& theta,
                                              const BatchMode& mode, int num_batches,
                                              std::uint64_t seed);

struct MetricsRequest {
  bool batch_sharpness = true;
  bool gni = false;
  bool ias = false;
  bool lambda_max = false;
  bool lambda_max_b = false;
  bool step_sharpness = false;
  int num_batches = 64;
  PowerIterSettings full_power{500, 1e-6, 0, {}};
  PowerIterSettings batch_power{500, 1e-4, 0, {}};
};

/// One measurement snapshot. Fields that were not requested stay empty.
struct SharpnessReport {
  long step = 0;
  std::optional<double> batch_sharpness;
  std::optional<double> gni;
  bool gni_saturated = false;
  std::optional<double> ias;
  std::optional<double> lambda_max;
  std::optional<double> lambda_max_b;
  std::optional<double> step_sharpness;
  double grad_full_sq = 0.0;
  double grad_batch_sq_mean = 0.0;
  double grad_noise_sq_mean = 0.0;
  int num_batches = 0;
  std::uint64_t seed = 0;
};

/// Computes every requested metric at theta from one shared set of batches.
/// `step_batch` is the batch used for step sharpness. `warm_start` (when
/// non-null) seeds and receives the full-batch top eigenvector.
SharpnessReport measure(const LossOracle& oracle, const VectorXd& theta,
                        const BatchMode& mode, const MetricsRequest& request,
                        long step, std::uint64_t seed, const Indices& step_batch = {},
                        VectorXd* warm_start = nullptr);

// Fixed column order of the report CSV.
const std::vector<std::string>& report_columns();
// 17 significant digits; empty fields for absent values.
std::vector<std::string> report_fields(const SharpnessReport& r);
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Oscillation probes.

struct TrainerState {
  VectorXd params;
  long step = 0;
  double eta = 0.0;
  int batch_size = 1;
  std::vector<double> loss_history;
};

/// A steppable optimizer run that can be checkpointed and perturbed.
class TrainerHandle {
 public:
  virtual ~TrainerHandle() = default;
  virtual void step() = 0;
  // Full-batch loss at the current parameters.
  virtual double full_loss() const = 0;
  // Full-batch loss after every step taken so far.
  virtual const std::vector<double>& loss_history() const = 0;
  virtual double eta() const = 0;
  virtual void set_eta(double eta) = 0;
  virtual int batch_size() const = 0;
  virtual void set_batch_size(int b) = 0;
  virtual double batch_sharpness_now() const = 0;
  virtual bool supports_checkpoint() const { return true; }
  virtual TrainerState checkpoint() const = 0;
  virtual void restore(const TrainerState& state) = 0;
};

struct ProbeConfig {
  std::optional<double> eta_factor;
  std::optional<int> new_b;
  int probe_steps = 200;
  double catapult_factor = 3.0;
  int window = 20;
  bool restore_after = true;
};

enum class OscillationKind { kNone, kType1, kType2 };
std::string to_string(OscillationKind k);

struct OscillationVerdict {
  OscillationKind kind = OscillationKind::kNone;
  double peak_loss_ratio = 0.0;
  bool restabilized = false;
  double batch_sharpness_before = 0.0;
  std::optional<double> batch_sharpness_after;
  double threshold = 0.0;  // 2 / eta after the perturbation
  double amplitude_before = 0.0;
  double amplitude_after = 0.0;
};

/// Perturbs the run (step size or batch size), watches the loss, and calls a
/// catapult (peak / pre-probe median >= catapult_factor) with Batch Sharpness
/// already above the new 2/eta Type-2. Growth of the loss oscillation without
/// that is Type-1.
OscillationVerdict classify_oscillation(TrainerHandle& trainer, const ProbeConfig& probe);

/// SGD on a QuadraticEnsemble behind the TrainerHandle interface.
class QuadraticTrainer final : public TrainerHandle {
 public:
  QuadraticTrainer(const quad::QuadraticEnsemble& ens, double eta, BatchMode mode,
                   VectorXd theta0, std::uint64_t seed);

  void step() override;
  double full_loss() const override { return ens_.loss(theta_); }
  const std::vector<double>& loss_history() const override { return history_; }
  double eta() const override { return eta_; }
  void set_eta(double eta) override { eta_ = eta; }
  int batch_size() const override { return mode_.b; }
  void set_batch_size(int b) override { mode_.b = b; }
  double batch_sharpness_now() const override;
  TrainerState checkpoint() const override;
  void restore(const TrainerState& state) override;

  const VectorXd& theta() const { return theta_; }
  long steps_taken() const { return step_; }

 private:
  const quad::QuadraticEnsemble& ens_;
  double eta_;
  BatchMode mode_;
  VectorXd theta_;
  std::uint64_t seed_;
  long step_ = 0;
  std::vector<double> history_;
};

}  // namespace eoss::metrics
