#pragma once

// Dense symmetric linear algebra, power iteration over matrix-free operators,
// the Kronecker-sum (Lyapunov) operator and its pseudoinverse, and log-log
// power-law fitting.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "eoss/errors.h"

namespace eoss::numerics {

using eoss::ConvergenceError;
using eoss::InvalidArgument;

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// A real symmetric matrix. Entries (i, j) and (j, i) are bit-identical.
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;
  // Requires |A - A^T| <= tol entrywise, then stores (A + A^T) / 2.
  explicit SymmetricMatrix(const MatrixXd& a, double tol = 1e-9);

  static SymmetricMatrix Identity(int dim);
  static SymmetricMatrix Zero(int dim);
  static SymmetricMatrix Diagonal(const VectorXd& diag);

  int dim() const { return static_cast<int>(m_.rows()); }
  const MatrixXd& dense() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }
  double trace() const { return m_.trace(); }

 private:
  MatrixXd m_;
};

struct Spectrum {
  VectorXd eigenvalues;   // ascending
  MatrixXd eigenvectors;  // column k pairs with eigenvalues[k]
};

Spectrum sym_eigendecomp(const SymmetricMatrix& a);

/// A matrix-free linear map of fixed dimension, e.g. a Hessian-vector product.
struct LinearOperator {
  int dim = 0;
  std::function<VectorXd(const VectorXd&)> apply;
};

LinearOperator dense_operator(const MatrixXd& a);

struct PowerIterSettings {
  int max_iters = 500;
  double rel_tol = 1e-6;
  std::uint64_t seed = 0;
  // Optional warm start; must have length op.dim when set.
  std::optional<VectorXd> initial;
};

struct PowerIterResult {
  double lambda_max = 0.0;
  VectorXd eigvec;
  int iters = 0;
};

/// Largest-magnitude eigenpair of a symmetric operator. Throws
/// ConvergenceError (with the last Rayleigh quotient) after max_iters.
PowerIterResult power_iteration(const LinearOperator& op,
                                const PowerIterSettings& settings);

/// Largest signed eigenvalue. Runs plain power iteration first; if the
/// dominant eigenvalue is negative, re-runs on op + sigma*I with
/// sigma = |dominant| and subtracts the shift.
PowerIterResult top_eigenpair(const LinearOperator& op,
                              const PowerIterSettings& settings);

// K(X) = H X + X H
SymmetricMatrix lyapunov_apply(const SymmetricMatrix& h,
                               const SymmetricMatrix& x);

/// Pseudoinverse of the Kronecker-sum operator. In the eigenbasis of H each
/// entry is divided by (lambda_i + lambda_j), and zeroed when that sum is at
/// most null_cutoff. Default cutoff: 1e-10 * lambda_max(H).
SymmetricMatrix lyapunov_pinv_solve(const SymmetricMatrix& h,
                                    const SymmetricMatrix& s,
                                    std::optional<double> null_cutoff = {});

// (eta / b) K^+(sigma_g): first-order stationary covariance of constant-step
// SGD around a minimum with Hessian H and per-sample gradient covariance
// sigma_g.
SymmetricMatrix stationary_covariance_prediction(const SymmetricMatrix& h,
                                                 const SymmetricMatrix& sigma_g,
                                                 double eta, int b);

struct PowerLawFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Ordinary least squares of log(gap) on log(b). Needs at least 3 points.
PowerLawFit powerlaw_fit(const std::vector<std::pair<double, double>>& points);

struct TwoSegmentFit {
  std::size_t knee = 0;  // first index of the right segment
  PowerLawFit left;
  PowerLawFit right;
  PowerLawFit whole;
};

/// Splits the points into two contiguous runs (each with >= 3 points) at the
/// knee minimizing the total squared log residual.
TwoSegmentFit two_segment_powerlaw_fit(
    const std::vector<std::pair<double, double>>& points);

}  // namespace eoss::numerics
