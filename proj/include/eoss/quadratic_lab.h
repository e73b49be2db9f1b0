#pragma once

// Random quadratic losses l_i(theta) = 1/2 (theta - x_i)^T A_i (theta - x_i),
// exact mini-batch SGD on them, and the closed-form quantities used as ground
// truth by the rest of the library.

#include <cstdint>
#include <optional>
#include <vector>

#include "eoss/numerics.h"

namespace eoss::quad {

using numerics::MatrixXd;
using numerics::SymmetricMatrix;
using numerics::VectorXd;

enum class Replacement { kWith, kWithout };

struct BatchMode {
  Replacement kind = Replacement::kWith;
  int b = 1;
};

/// Indices of the mini-batch used at `step_index`. Stateless in the step:
/// with replacement, b i.i.d. uniform draws; without replacement, consecutive
/// chunks of a per-epoch random permutation, one epoch per ceil(n/b) steps.
/// A short final chunk is topped up from the head of the same permutation, so
/// a batch never repeats an index.
std::vector<int> sample_batch(int n, const BatchMode& mode, std::uint64_t seed,
                              std::uint64_t step_index);

// Number of distinct batches an exhaustive sweep would visit, capped at limit+1.
std::uint64_t batch_space_size(int n, const BatchMode& mode, std::uint64_t limit);

/// Batches over which an expectation is taken. Exhaustive (every subset, or
/// every ordered tuple with replacement) when that space has at most
/// `exhaustive_limit` elements, Monte Carlo with `num_batches` draws otherwise.
/// An exhaustive plan is uniformly weighted by construction.
struct BatchPlan {
  std::vector<std::vector<int>> batches;
  bool exhaustive = false;
};

BatchPlan plan_batches(int n, const BatchMode& mode, int num_batches,
                       std::uint64_t seed, std::uint64_t exhaustive_limit = 4096);

class QuadraticEnsemble {
 public:
  QuadraticEnsemble(std::vector<MatrixXd> hessians, std::vector<VectorXd> anchors);

  int dim() const { return dim_; }
  int size() const { return static_cast<int>(hessians_.size()); }
  const MatrixXd& hessian(int i) const { return hessians_[i]; }
  const VectorXd& anchor(int i) const { return anchors_[i]; }
  const SymmetricMatrix& mean_hessian() const { return mean_hessian_; }
  const VectorXd& g() const { return g_; }
  // Minimum-norm minimizer H^+ G.
  const VectorXd& theta_star() const { return theta_star_; }
  double lambda_max() const { return lambda_max_; }

  double sample_loss(int i, const VectorXd& theta) const;
  double loss(const VectorXd& theta) const;
  VectorXd sample_grad(int i, const VectorXd& theta) const;
  VectorXd full_grad(const VectorXd& theta) const;
  VectorXd batch_grad(const VectorXd& theta, const std::vector<int>& idx) const;
  MatrixXd batch_hessian(const std::vector<int>& idx) const;
  // E_i ||grad l_i(theta)||^2
  double mean_sample_grad_sq(const VectorXd& theta) const;
  // (1/n) sum_i (g_i - g)(g_i - g)^T
  SymmetricMatrix gradient_covariance(const VectorXd& theta) const;

 private:
  int dim_;
  std::vector<MatrixXd> hessians_;
  std::vector<VectorXd> anchors_;
  SymmetricMatrix mean_hessian_;
  VectorXd g_;
  VectorXd theta_star_;
  double lambda_max_ = 0.0;
};

// l_i(x) = 1/2 (x - a_i)^2 with a_i ~ N(0, 1).
QuadraticEnsemble make_1d_gaussian_means(int n, std::uint64_t seed);
// l_i(x) = 1/2 (x - a_i)^2 with the given a_i.
QuadraticEnsemble make_1d_from_means(const std::vector<double>& means);
// A_i = scale * B_i B_i^T with B_i a d x rank standard normal draw; x_i ~ N(0, I).
QuadraticEnsemble make_random_psd_ensemble(int n, int d, int rank, double scale,
                                           std::uint64_t seed);
// A_{1,2} = alpha I +/- diag(0, gamma), x_1 = x_2 = 0.
QuadraticEnsemble make_counterexample(double alpha, double gamma);

struct DiagonalNetSpectra {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double lambda_max_full = 0.0;
  double lambda_max_b1 = 0.0;
  double gap = 0.0;
  // Set when |a_k b_k| != 1, i.e. the weights are not an interpolating solution.
  bool off_solution = false;
};

/// Closed-form Hessian spectra of the two-sample diagonal linear network
/// f(x) = a^T diag(b) x at weights (a1, a2; b1, b2).
DiagonalNetSpectra diagonal_net_spectra(double a1, double b1, double a2, double b2);

struct SgdOptions {
  double eta = 0.1;
  BatchMode mode;
  int steps = 1000;
  std::optional<VectorXd> theta0;  // defaults to zero
  int record_every = 1;
  // Halts when loss > blowup * max(initial loss, 1e-300), ||theta|| > blowup,
  // or anything turns non-finite.
  double blowup = 1e6;
  std::uint64_t seed = 0;
};

struct SgdRun {
  std::vector<int> steps;  // step index of each recorded entry
  std::vector<VectorXd> thetas;
  std::vector<double> losses;
  std::vector<double> grad_sq_series;  // E_i ||grad l_i(theta_t)||^2
  bool diverged = false;
  int steps_completed = 0;
  std::uint64_t seed = 0;
  double eta = 0.0;
  BatchMode mode;
};

/// theta_{t+1} = theta_t - eta * (1/b) sum_{i in B_t} A_i (theta_t - x_i).
SgdRun sgd_run(const QuadraticEnsemble& ens, const SgdOptions& options);

/// Per-theta moments of the residuals Y_i = A_i (theta - x_i), exact over i.
struct ResidualMoments {
  double a = 0.0;       // E_i[Y_i^T A_i Y_i]
  double b = 0.0;       // E_i[Y_i^T H Y_i]
  double c = 0.0;       // E_i ||Y_i||^2
  double c0 = 0.0;      // E_i ||Y_i - mu||^2
  double d = 0.0;       // mu^T E_i[A_i Y_i]
  double mu_sq = 0.0;   // ||mu||^2
  double mu_h_mu = 0.0; // mu^T H mu
  double y_tilde_fourth = 0.0;  // E_i ||Y_i - mu||^4
  VectorXd mu;          // H theta - G
};

ResidualMoments residual_moments(const QuadraticEnsemble& ens, const VectorXd& theta);

struct StationaryScalars {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double c0 = 0.0;
  double d = 0.0;
  VectorXd mu;          // mean over retained iterates of H theta - G
  double mu_sq = 0.0;   // mean over retained iterates of ||H theta - G||^2
  double y_tilde_fourth = 0.0;
  double kappa_y = 0.0; // y_tilde_fourth / c0^2
  double alpha_bn = 1.0;
  double curvature_spread_sq = 0.0;  // E_i ||A_i - H||_2^2
  int samples = 0;
};

struct StationaryStats {
  VectorXd emp_mean;
  SymmetricMatrix emp_cov;
  StationaryScalars scalars;
};

/// Moments over the iterates after the burn-in fraction. Needs a run recorded
/// at every step, not diverged, with at least 1000 retained iterates.
StationaryStats stationary_stats(const QuadraticEnsemble& ens, const SgdRun& run,
                                 double burn_in_fraction = 0.5);

/// E_B[g_B^T H g_B] / ||g||^2 with the full Hessian H, exact for any b through
/// the b = 1 moments. Throws ZeroGradientError when ||g|| <= 1e-12 sqrt(d).
double gni_exact(const QuadraticEnsemble& ens, const VectorXd& theta,
                 const BatchMode& mode = {});

/// E_B[g_B^T H_B g_B] / E_B[||g_B||^2], a ratio of expectations. Exact for
/// b = 1 and whenever the batch space is small enough to enumerate; Monte
/// Carlo over `num_batches` otherwise.
double batch_sharpness_exact(const QuadraticEnsemble& ens, const VectorXd& theta,
                             const BatchMode& mode, int num_batches = 256,
                             std::uint64_t seed = 0);

struct DivergenceVerdict {
  bool diverged = false;
  double grad_sq_growth_rate = 0.0;  // slope of log E_i||grad l_i||^2 per step
  int steps_completed = 0;
};

/// Runs SGD from theta0 (default: theta_star + a unit all-ones offset) and fits
/// the log-growth of E_i||grad l_i||^2 over the last `growth_window` finite,
/// non-underflowed entries.
DivergenceVerdict divergence_probe(const QuadraticEnsemble& ens, double eta,
                                   const BatchMode& mode, int steps,
                                   int growth_window, std::uint64_t seed = 0,
                                   std::optional<VectorXd> theta0 = {});

// eta / (2 - eta); throws for eta outside (0, 2).
double theoretical_variance_1d(double eta);
// (n - b) / (n - 1)
double wor_variance_factor(int n, int b);
// 1 + 2 tr(S^2) / (tr S)^2
double kurtosis_gaussian(const SymmetricMatrix& s);

struct OrderCheck {
  bool bs_leq_gni = false;
  double lhs = 0.0;  // B * C0
  double rhs = 0.0;  // ||mu||^2 (Delta~ + 2 D)
  // C0 >= (eta/2) sqrt(E||A_i - H||^2) sqrt(E||Y~||^4 + 2 C0 ||mu||^2 + ||mu||^4)
  bool sufficient = false;
  double sufficient_lhs = 0.0;
  double sufficient_rhs = 0.0;
};

OrderCheck bs_gni_order_check(const StationaryScalars& s, double eta);

}  // namespace eoss::quad
