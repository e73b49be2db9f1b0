#include "eoss/numerics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace eoss::numerics {
namespace {

void require_finite(const MatrixXd& a, const char* who) {
  if (!a.allFinite()) throw InvalidArgument(std::string(who) + ": non-finite entries");
}

void require_same_dim(const SymmetricMatrix& a, const SymmetricMatrix& b,
                      const char* who) {
  if (a.dim() != b.dim()) {
    throw InvalidArgument(std::string(who) + ": dimension mismatch (" +
                          std::to_string(a.dim()) + " vs " +
                          std::to_string(b.dim()) + ")");
  }
}

VectorXd random_unit(int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  const double n = v.norm();
  if (n == 0.0) {
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / n;
}

}  // namespace

SymmetricMatrix::SymmetricMatrix(const MatrixXd& a, double tol) {
  if (a.rows() != a.cols() || a.rows() < 1) {
    throw InvalidArgument("SymmetricMatrix: input must be square and non-empty");
  }
  require_finite(a, "SymmetricMatrix");
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > tol) {
    throw InvalidArgument("SymmetricMatrix: asymmetry " + std::to_string(asym) +
                          " exceeds tolerance");
  }
  m_ = 0.5 * (a + a.transpose());
}

SymmetricMatrix SymmetricMatrix::Identity(int dim) {
  return SymmetricMatrix(MatrixXd::Identity(dim, dim));
}

SymmetricMatrix SymmetricMatrix::Zero(int dim) {
  return SymmetricMatrix(MatrixXd::Zero(dim, dim));
}

SymmetricMatrix SymmetricMatrix::Diagonal(const VectorXd& diag) {
  return SymmetricMatrix(MatrixXd(diag.asDiagonal()));
}

Spectrum sym_eigendecomp(const SymmetricMatrix& a) {
  require_finite(a.dense(), "sym_eigendecomp");
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(a.dense());
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("sym_eigendecomp: eigensolver failed");
  }
  return Spectrum{solver.eigenvalues(), solver.eigenvectors()};
}

LinearOperator dense_operator(const MatrixXd& a) {
  return LinearOperator{static_cast<int>(a.rows()),
                        [a](const VectorXd& v) -> VectorXd { return a * v; }};
}

PowerIterResult power_iteration(const LinearOperator& op,
                                const PowerIterSettings& settings) {
  if (op.dim < 1) throw InvalidArgument("power_iteration: dim must be >= 1");
  if (settings.max_iters < 1 || !(settings.rel_tol > 0.0)) {
    throw InvalidArgument("power_iteration: need max_iters >= 1 and rel_tol > 0");
  }
  VectorXd v;
  if (settings.initial && settings.initial->size() == op.dim &&
      settings.initial->norm() > 0.0) {
    v = settings.initial->normalized();
  } else {
    v = random_unit(op.dim, settings.seed);
  }

  double lambda = 0.0;
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (int it = 1; it <= settings.max_iters; ++it) {
    VectorXd w = op.apply(v);
    const double wn = w.norm();
    lambda = v.dot(w);
    if (wn == 0.0) return PowerIterResult{0.0, v, it};
    if (!std::isfinite(wn)) {
      throw ConvergenceError("power_iteration: operator produced non-finite values",
                             lambda, it);
    }
    if (it > 1 && std::abs(lambda - prev) <= settings.rel_tol * std::abs(lambda)) {
      return PowerIterResult{lambda, v, it};
    }
    prev = lambda;
    v = w / wn;
  }
  throw ConvergenceError("power_iteration: no convergence within " +
                             std::to_string(settings.max_iters) + " iterations",
                         lambda, settings.max_iters);
}

PowerIterResult top_eigenpair(const LinearOperator& op,
                              const PowerIterSettings& settings) {
  double sigma = 0.0;
  try {
    PowerIterResult r = power_iteration(op, settings);
    if (r.lambda_max >= 0.0) return r;
    sigma = std::abs(r.lambda_max);
  } catch (const ConvergenceError& e) {
    // Typically +/- eigenvalues of equal magnitude; shift by a norm estimate.
    VectorXd probe = random_unit(op.dim, settings.seed ^ 0x9e3779b97f4a7c15ULL);
    for (int i = 0; i < 20; ++i) {
      VectorXd w = op.apply(probe);
      const double n = w.norm();
      if (n == 0.0) break;
      sigma = std::max(sigma, n);
      probe = w / n;
    }
    sigma = std::max(sigma, std::abs(e.last_estimate()));
  }
  LinearOperator shifted{op.dim, [&op, sigma](const VectorXd& v) -> VectorXd {
                           return op.apply(v) + sigma * v;
                         }};
  PowerIterSettings s = settings;
  PowerIterResult r = power_iteration(shifted, s);
  r.lambda_max -= sigma;
  return r;
}

SymmetricMatrix lyapunov_apply(const SymmetricMatrix& h, const SymmetricMatrix& x) {
  require_same_dim(h, x, "lyapunov_apply");
  const MatrixXd hx = h.dense() * x.dense();
  return SymmetricMatrix(MatrixXd(hx + hx.transpose()));
}

SymmetricMatrix lyapunov_pinv_solve(const SymmetricMatrix& h,
                                    const SymmetricMatrix& s,
                                    std::optional<double> null_cutoff) {
  require_same_dim(h, s, "lyapunov_pinv_solve");
  const Spectrum spec = sym_eigendecomp(h);
  const VectorXd& lam = spec.eigenvalues;
  const double top = std::max(0.0, lam.maxCoeff());
  const double cutoff = null_cutoff.value_or(1e-10 * top);
  if (lam.minCoeff() < -cutoff) {
    throw InvalidArgument("lyapunov_pinv_solve: H is not positive semidefinite "
                          "(eigenvalue " + std::to_string(lam.minCoeff()) + ")");
  }
  const MatrixXd& v = spec.eigenvectors;
  MatrixXd st = v.transpose() * s.dense() * v;
  const int d = h.dim();
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      const double denom = lam[i] + lam[j];
      st(i, j) = denom > cutoff ? st(i, j) / denom : 0.0;
    }
  }
  MatrixXd out = v * st * v.transpose();
  return SymmetricMatrix(out, 1e-6 * std::max(1.0, out.cwiseAbs().maxCoeff()));
}

SymmetricMatrix stationary_covariance_prediction(const SymmetricMatrix& h,
                                                 const SymmetricMatrix& sigma_g,
                                                 double eta, int b) {
  if (!(eta > 0.0)) throw InvalidArgument("stationary_covariance_prediction: eta must be > 0");
  if (b < 1) throw InvalidArgument("stationary_covariance_prediction: b must be >= 1");
  const SymmetricMatrix k = lyapunov_pinv_solve(h, sigma_g);
  return SymmetricMatrix(MatrixXd((eta / b) * k.dense()));
}

PowerLawFit powerlaw_fit(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) {
    throw InvalidArgument("powerlaw_fit: need at least 3 points");
  }
  const std::size_t n = points.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [b, gap] = points[i];
    if (!(b > 0.0) || !std::isfinite(b)) {
      throw InvalidArgument("powerlaw_fit: non-positive abscissa at index " +
                                std::to_string(i), static_cast<long>(i));
    }
    if (!(gap > 0.0) || !std::isfinite(gap)) {
      throw InvalidArgument("powerlaw_fit: non-positive gap at index " +
                                std::to_string(i), static_cast<long>(i));
    }
    lx[i] = std::log(b);
    ly[i] = std::log(gap);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) throw InvalidArgument("powerlaw_fit: all abscissae coincide");
  PowerLawFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
    ss_res += r * r;
  }
  // Exact power laws leave only rounding in ss_res.
  const double floor = 1e-24 * std::max(1.0, syy);
  if (syy <= floor) {
    fit.r_squared = 1.0;
  } else {
    fit.r_squared = ss_res <= floor ? 1.0 : std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  }
  return fit;
}

TwoSegmentFit two_segment_powerlaw_fit(
    const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 6) {
    throw InvalidArgument("two_segment_powerlaw_fit: need at least 6 points");
  }
  auto sse = [](const std::vector<std::pair<double, double>>& pts,
                const PowerLawFit& f) {
    double s = 0.0;
    for (const auto& [b, g] : pts) {
      const double r = std::log(g) - (f.intercept + f.slope * std::log(b));
      s += r * r;
    }
    return s;
  };
  TwoSegmentFit best;
  best.whole = powerlaw_fit(points);
  double best_sse = std::numeric_limits<double>::infinity();
  for (std::size_t k = 3; k + 3 <= points.size(); ++k) {
    std::vector<std::pair<double, double>> l(points.begin(), points.begin() + k);
    std::vector<std::pair<double, double>> r(points.begin() + k, points.end());
    const PowerLawFit fl = powerlaw_fit(l);
    const PowerLawFit fr = powerlaw_fit(r);
    const double total = sse(l, fl) + sse(r, fr);
    if (total < best_sse) {
      best_sse = total;
      best.knee = k;
      best.left = fl;
      best.right = fr;
    }
  }
  return best;
}

}  // namespace eoss::numerics
