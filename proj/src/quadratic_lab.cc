#include "eoss/quadratic_lab.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "rng.h"

namespace eoss::quad {
namespace {

constexpr std::uint64_t kPermutationTag = 0x5045524dULL;
constexpr std::uint64_t kDrawTag = 0x44524157ULL;

void check_mode(int n, const BatchMode& mode, const char* who) {
  if (n < 1) throw InvalidArgument(std::string(who) + ": n must be >= 1");
  if (mode.b < 1) throw InvalidArgument(std::string(who) + ": b must be >= 1");
  if (mode.kind == Replacement::kWithout && mode.b > n) {
    throw InvalidArgument(std::string(who) + ": b = " + std::to_string(mode.b) +
                          " exceeds n = " + std::to_string(n) +
                          " without replacement");
  }
}

std::vector<int> epoch_permutation(int n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(detail::mix_seed(seed, kPermutationTag + 1000003ULL * epoch));
  // Fisher-Yates with an explicit draw so the sequence does not depend on the
  // standard library's shuffle.
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

double spectral_norm(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> s(0.5 * (m + m.transpose()),
                                            Eigen::EigenvaluesOnly);
  return s.eigenvalues().cwiseAbs().maxCoeff();
}

double gradient_floor(int dim) { return 1e-12 * std::sqrt(static_cast<double>(dim)); }

}  // namespace

std::vector<int> sample_batch(int n, const BatchMode& mode, std::uint64_t seed,
                              std::uint64_t step_index) {
  check_mode(n, mode, "sample_batch");
  std::vector<int> out;
  out.reserve(mode.b);
  if (mode.kind == Replacement::kWith) {
    std::mt19937_64 rng(detail::mix_seed(seed, kDrawTag + 7919ULL * step_index));
    const auto un = static_cast<std::uint64_t>(n);
    // Rejection keeps the draw exactly uniform.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % un;
    for (int k = 0; k < mode.b; ++k) {
      std::uint64_t r;
      do r = rng(); while (r >= limit);
      out.push_back(static_cast<int>(r % un));
    }
    return out;
  }
  const std::uint64_t per_epoch = (static_cast<std::uint64_t>(n) + mode.b - 1) / mode.b;
  const std::uint64_t epoch = step_index / per_epoch;
  const auto chunk = static_cast<int>(step_index % per_epoch);
  const std::vector<int> perm = epoch_permutation(n, seed, epoch);
  const int start = chunk * mode.b;
  const int end = std::min(n, start + mode.b);
  out.assign(perm.begin() + start, perm.begin() + end);
  for (int k = 0; static_cast<int>(out.size()) < mode.b; ++k) out.push_back(perm[k]);
  return out;
}

std::uint64_t batch_space_size(int n, const BatchMode& mode, std::uint64_t limit) {
  check_mode(n, mode, "batch_space_size");
  const std::uint64_t cap = limit + 1;
  if (mode.kind == Replacement::kWith) {
    std::uint64_t s = 1;
    for (int k = 0; k < mode.b; ++k) {
      s *= static_cast<std::uint64_t>(n);
      if (s >= cap) return cap;
    }
    return s;
  }
  // C(n, b) built incrementally: C(n-b+k, k) stays integral at every step.
  const int kk = std::min(mode.b, n - mode.b);
  unsigned __int128 c = 1;
  for (int k = 1; k <= kk; ++k) {
    c = c * static_cast<unsigned>(n - kk + k) / static_cast<unsigned>(k);
    if (c >= cap) return cap;
  }
  return static_cast<std::uint64_t>(c);
}

BatchPlan plan_batches(int n, const BatchMode& mode, int num_batches,
                       std::uint64_t seed, std::uint64_t exhaustive_limit) {
  check_mode(n, mode, "plan_batches");
  BatchPlan plan;
  const std::uint64_t space = batch_space_size(n, mode, exhaustive_limit);
  if (space <= exhaustive_limit) {
    plan.exhaustive = true;
    plan.batches.reserve(space);
    std::vector<int> cur(mode.b);
    if (mode.kind == Replacement::kWith) {
      std::fill(cur.begin(), cur.end(), 0);
      for (std::uint64_t t = 0; t < space; ++t) {
        plan.batches.push_back(cur);
        for (int k = mode.b - 1; k >= 0; --k) {
          if (++cur[k] < n) break;
          cur[k] = 0;
        }
      }
    } else {
      std::iota(cur.begin(), cur.end(), 0);
      for (std::uint64_t t = 0; t < space; ++t) {
        plan.batches.push_back(cur);
        int k = mode.b - 1;
        while (k >= 0 && cur[k] == n - mode.b + k) --k;
        if (k < 0) break;
        ++cur[k];
        for (int j = k + 1; j < mode.b; ++j) cur[j] = cur[j - 1] + 1;
      }
    }
    return plan;
  }
  if (num_batches < 1) throw InvalidArgument("plan_batches: num_batches must be >= 1");
  plan.batches.reserve(num_batches);
  for (int k = 0; k < num_batches; ++k) {
    plan.batches.push_back(sample_batch(n, mode, seed, static_cast<std::uint64_t>(k)));
  }
  return plan;
}

QuadraticEnsemble::QuadraticEnsemble(std::vector<MatrixXd> hessians,
                                     std::vector<VectorXd> anchors)
    : hessians_(std::move(hessians)), anchors_(std::move(anchors)) {
  if (hessians_.empty() || hessians_.size() != anchors_.size()) {
    throw InvalidArgument("QuadraticEnsemble: need matching, non-empty sample lists");
  }
  dim_ = static_cast<int>(hessians_[0].rows());
  MatrixXd h = MatrixXd::Zero(dim_, dim_);
  g_ = VectorXd::Zero(dim_);
  for (std::size_t i = 0; i < hessians_.size(); ++i) {
    MatrixXd& a = hessians_[i];
    if (a.rows() != dim_ || a.cols() != dim_ || anchors_[i].size() != dim_) {
      throw InvalidArgument("QuadraticEnsemble: sample " + std::to_string(i) +
                                " has inconsistent dimensions",
                            static_cast<long>(i));
    }
    a = SymmetricMatrix(a).dense();
    h += a;
    g_ += a * anchors_[i];
  }
  const double inv_n = 1.0 / static_cast<double>(hessians_.size());
  h *= inv_n;
  g_ *= inv_n;
  mean_hessian_ = SymmetricMatrix(h);
  const numerics::Spectrum spec = numerics::sym_eigendecomp(mean_hessian_);
  const VectorXd& lam = spec.eigenvalues;
  lambda_max_ = lam.maxCoeff();
  const double cutoff = 1e-10 * std::max(std::abs(lambda_max_), 1e-300);
  if (lam.minCoeff() < -cutoff) {
    throw InvalidArgument("QuadraticEnsemble: mean Hessian is not PSD");
  }
  VectorXd coeff = spec.eigenvectors.transpose() * g_;
  for (int k = 0; k < dim_; ++k) coeff[k] = lam[k] > cutoff ? coeff[k] / lam[k] : 0.0;
  theta_star_ = spec.eigenvectors * coeff;
}

double QuadraticEnsemble::sample_loss(int i, const VectorXd& theta) const {
  const VectorXd r = theta - anchors_[i];
  return 0.5 * r.dot(hessians_[i] * r);
}

double QuadraticEnsemble::loss(const VectorXd& theta) const {
  double s = 0.0;
  for (int i = 0; i < size(); ++i) s += sample_loss(i, theta);
  return s / size();
}

VectorXd QuadraticEnsemble::sample_grad(int i, const VectorXd& theta) const {
  return hessians_[i] * (theta - anchors_[i]);
}

VectorXd QuadraticEnsemble::full_grad(const VectorXd& theta) const {
  return mean_hessian_.dense() * theta - g_;
}

VectorXd QuadraticEnsemble::batch_grad(const VectorXd& theta,
                                       const std::vector<int>& idx) const {
  VectorXd g = VectorXd::Zero(dim_);
  for (int i : idx) g += sample_grad(i, theta);
  return g / static_cast<double>(idx.size());
}

MatrixXd QuadraticEnsemble::batch_hessian(const std::vector<int>& idx) const {
  MatrixXd h = MatrixXd::Zero(dim_, dim_);
  for (int i : idx) h += hessians_[i];
  return h / static_cast<double>(idx.size());
}

double QuadraticEnsemble::mean_sample_grad_sq(const VectorXd& theta) const {
  double s = 0.0;
  for (int i = 0; i < size(); ++i) s += sample_grad(i, theta).squaredNorm();
  return s / size();
}

SymmetricMatrix QuadraticEnsemble::gradient_covariance(const VectorXd& theta) const {
  const VectorXd mean = full_grad(theta);
  MatrixXd cov = MatrixXd::Zero(dim_, dim_);
  for (int i = 0; i < size(); ++i) {
    const VectorXd r = sample_grad(i, theta) - mean;
    cov.noalias() += r * r.transpose();
  }
  return SymmetricMatrix(MatrixXd(cov / size()));
}

QuadraticEnsemble make_1d_from_means(const std::vector<double>& means) {
  if (means.empty()) throw InvalidArgument("make_1d_from_means: need at least one mean");
  std::vector<MatrixXd> h(means.size(), MatrixXd::Ones(1, 1));
  std::vector<VectorXd> x;
  x.reserve(means.size());
  for (double a : means) x.push_back(VectorXd::Constant(1, a));
  return QuadraticEnsemble(std::move(h), std::move(x));
}

QuadraticEnsemble make_1d_gaussian_means(int n, std::uint64_t seed) {
  if (n < 2) throw InvalidArgument("make_1d_gaussian_means: n must be >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> means(n);
  for (double& a : means) a = normal(rng);
  return make_1d_from_means(means);
}

QuadraticEnsemble make_random_psd_ensemble(int n, int d, int rank, double scale,
                                           std::uint64_t seed) {
  if (n < 1 || d < 1 || rank < 1 || rank > d) {
    throw InvalidArgument("make_random_psd_ensemble: need n >= 1 and 1 <= rank <= d");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<MatrixXd> h;
  std::vector<VectorXd> x;
  for (int i = 0; i < n; ++i) {
    MatrixXd b(d, rank);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < rank; ++c) b(r, c) = normal(rng);
    h.push_back(scale * b * b.transpose());
    VectorXd xi(d);
    for (int r = 0; r < d; ++r) xi[r] = normal(rng);
    x.push_back(xi);
  }
  return QuadraticEnsemble(std::move(h), std::move(x));
}

QuadraticEnsemble make_counterexample(double alpha, double gamma) {
  if (!(alpha > 0.0)) throw InvalidArgument("make_counterexample: alpha must be > 0");
  MatrixXd m = MatrixXd::Zero(2, 2);
  m(1, 1) = gamma;
  const MatrixXd base = alpha * MatrixXd::Identity(2, 2);
  return QuadraticEnsemble({base + m, base - m}, {VectorXd::Zero(2), VectorXd::Zero(2)});
}

DiagonalNetSpectra diagonal_net_spectra(double a1, double b1, double a2, double b2) {
  DiagonalNetSpectra s;
  s.lambda1 = a1 * a1 + b1 * b1;
  s.lambda2 = a2 * a2 + b2 * b2;
  s.lambda_max_full = std::max(s.lambda1, s.lambda2) / 2.0;
  s.lambda_max_b1 = s.lambda1 / 2.0 + s.lambda2 / 2.0;
  s.gap = s.lambda_max_b1 - s.lambda_max_full;
  s.off_solution = std::abs(std::abs(a1 * b1) - 1.0) > 1e-9 ||
                   std::abs(std::abs(a2 * b2) - 1.0) > 1e-9;
  return s;
}

SgdRun sgd_run(const QuadraticEnsemble& ens, const SgdOptions& o) {
  if (o.steps < 1) throw InvalidArgument("sgd_run: steps must be >= 1");
  if (!(o.eta > 0.0)) throw InvalidArgument("sgd_run: eta must be > 0");
  if (o.record_every < 1) throw InvalidArgument("sgd_run: record_every must be >= 1");
  check_mode(ens.size(), o.mode, "sgd_run");

  SgdRun run;
  run.seed = o.seed;
  run.eta = o.eta;
  run.mode = o.mode;
  VectorXd theta = o.theta0.value_or(VectorXd::Zero(ens.dim()));
  if (theta.size() != ens.dim()) throw InvalidArgument("sgd_run: theta0 has the wrong dimension");

  const double loss0 = ens.loss(theta);
  const double loss_limit = o.blowup * std::max(loss0, 1e-300);

  // Both recorded quantities are quadratics in theta. O(d^2) per record
  // instead of O(n d^2); exact sums only when cancellation eats the digits.
  const MatrixXd& h = ens.mean_hessian().dense();
  const VectorXd& g = ens.g();
  const int d = ens.dim();
  double const_term = 0.0, gsq_const = 0.0;
  MatrixXd h2 = MatrixXd::Zero(d, d);
  VectorXd h2x = VectorXd::Zero(d);
  for (int i = 0; i < ens.size(); ++i) {
    const VectorXd ax = ens.hessian(i) * ens.anchor(i);
    const_term += 0.5 * ens.anchor(i).dot(ax);
    gsq_const += ax.squaredNorm();
    h2.noalias() += ens.hessian(i) * ens.hessian(i);
    h2x += ens.hessian(i) * ax;
  }
  const_term /= ens.size();
  gsq_const /= ens.size();
  h2 /= ens.size();
  h2x /= ens.size();
  constexpr double kCancel = 1e-6;
  auto fast_loss = [&] {
    const double quad_part = 0.5 * theta.dot(h * theta);
    const double v = quad_part - theta.dot(g) + const_term;
    return v < kCancel * (std::abs(quad_part) + const_term) ? ens.loss(theta) : v;
  };
  auto fast_grad_sq = [&] {
    const double quad_part = theta.dot(h2 * theta);
    const double v = quad_part - 2.0 * theta.dot(h2x) + gsq_const;
    return v < kCancel * (quad_part + gsq_const) ? ens.mean_sample_grad_sq(theta) : v;
  };
  auto record = [&](int t, double loss) {
    run.steps.push_back(t);
    run.thetas.push_back(theta);
    run.losses.push_back(loss);
    run.grad_sq_series.push_back(std::isfinite(loss) ? fast_grad_sq() : ens.mean_sample_grad_sq(theta));
  };
  record(0, loss0);

  const int n = ens.size();
  const bool full_batch = o.mode.kind == Replacement::kWithout && o.mode.b == n;
  for (int t = 1; t <= o.steps; ++t) {
    VectorXd step_grad;
    if (full_batch) {
      step_grad = ens.full_grad(theta);
    } else {
      const std::vector<int> idx =
          sample_batch(n, o.mode, o.seed, static_cast<std::uint64_t>(t - 1));
      step_grad = ens.batch_grad(theta, idx);
    }
    theta -= o.eta * step_grad;
    run.steps_completed = t;
    const bool recorded = t % o.record_every == 0 || t == o.steps;
    const double loss = fast_loss();
    const double tn = theta.norm();
    const bool blown = !std::isfinite(loss) || !std::isfinite(tn) ||
                       loss > loss_limit || tn > o.blowup;
    if (recorded || blown) record(t, loss);
    if (blown) {
      run.diverged = true;
      break;
    }
  }
  return run;
}

ResidualMoments residual_moments(const QuadraticEnsemble& ens, const VectorXd& theta) {
  const MatrixXd& h = ens.mean_hessian().dense();
  ResidualMoments m;
  m.mu = ens.full_grad(theta);
  VectorXd mean_ay = VectorXd::Zero(ens.dim());
  const int n = ens.size();
  for (int i = 0; i < n; ++i) {
    const VectorXd y = ens.sample_grad(i, theta);
    const VectorXd ay = ens.hessian(i) * y;
    m.a += y.dot(ay);
    m.b += y.dot(h * y);
    m.c += y.squaredNorm();
    const double t2 = (y - m.mu).squaredNorm();
    m.c0 += t2;
    m.y_tilde_fourth += t2 * t2;
    mean_ay += ay;
  }
  m.a /= n;
  m.b /= n;
  m.c /= n;
  m.c0 /= n;
  m.y_tilde_fourth /= n;
  mean_ay /= n;
  m.d = m.mu.dot(mean_ay);
  m.mu_sq = m.mu.squaredNorm();
  m.mu_h_mu = m.mu.dot(h * m.mu);
  return m;
}

StationaryStats stationary_stats(const QuadraticEnsemble& ens, const SgdRun& run,
                                 double burn_in_fraction) {
  if (run.diverged) throw InvalidArgument("stationary_stats: run diverged");
  if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0)) {
    throw InvalidArgument("stationary_stats: burn_in_fraction must lie in [0, 1)");
  }
  const auto total = run.thetas.size();
  const auto first = static_cast<std::size_t>(std::ceil(burn_in_fraction * total));
  const std::size_t count = total - first;
  if (count < 1000) {
    throw InvalidArgument("stationary_stats: only " + std::to_string(count) +
                          " retained iterates (need >= 1000)");
  }
  const int d = ens.dim();
  StationaryStats out;
  out.emp_mean = VectorXd::Zero(d);
  for (std::size_t k = first; k < total; ++k) out.emp_mean += run.thetas[k];
  out.emp_mean /= static_cast<double>(count);
  MatrixXd cov = MatrixXd::Zero(d, d);
  StationaryScalars& s = out.scalars;
  s.mu = VectorXd::Zero(d);
  for (std::size_t k = first; k < total; ++k) {
    const VectorXd r = run.thetas[k] - out.emp_mean;
    cov.noalias() += r * r.transpose();
    const ResidualMoments m = residual_moments(ens, run.thetas[k]);
    s.a += m.a;
    s.b += m.b;
    s.c += m.c;
    s.c0 += m.c0;
    s.d += m.d;
    s.mu += m.mu;
    s.mu_sq += m.mu_sq;
    s.y_tilde_fourth += m.y_tilde_fourth;
  }
  const double inv = 1.0 / static_cast<double>(count);
  out.emp_cov = SymmetricMatrix(MatrixXd(cov * inv));
  s.a *= inv;
  s.b *= inv;
  s.c *= inv;
  s.c0 *= inv;
  s.d *= inv;
  s.mu *= inv;
  s.mu_sq *= inv;
  s.y_tilde_fourth *= inv;
  s.kappa_y = s.c0 > 0.0 ? s.y_tilde_fourth / (s.c0 * s.c0) : 0.0;
  s.alpha_bn = run.mode.kind == Replacement::kWithout && ens.size() >= 2
                   ? wor_variance_factor(ens.size(), run.mode.b)
                   : 1.0;
  double spread = 0.0;
  for (int i = 0; i < ens.size(); ++i) {
    const double nrm = spectral_norm(ens.hessian(i) - ens.mean_hessian().dense());
    spread += nrm * nrm;
  }
  s.curvature_spread_sq = spread / ens.size();
  s.samples = static_cast<int>(count);
  return out;
}

double gni_exact(const QuadraticEnsemble& ens, const VectorXd& theta,
                 const BatchMode& mode) {
  check_mode(ens.size(), mode, "gni_exact");
  const ResidualMoments m = residual_moments(ens, theta);
  if (std::sqrt(m.mu_sq) <= gradient_floor(ens.dim())) {
    throw ZeroGradientError("gni_exact: full gradient is zero");
  }
  double noise_factor = 1.0 / mode.b;
  if (mode.kind == Replacement::kWithout) {
    noise_factor *= ens.size() >= 2 ? wor_variance_factor(ens.size(), mode.b) : 0.0;
  }
  const double numer = m.mu_h_mu + noise_factor * (m.b - m.mu_h_mu);
  return numer / m.mu_sq;
}

double batch_sharpness_exact(const QuadraticEnsemble& ens, const VectorXd& theta,
                             const BatchMode& mode, int num_batches,
                             std::uint64_t seed) {
  const BatchPlan plan = plan_batches(ens.size(), mode, num_batches, seed);
  double numer = 0.0, denom = 0.0;
  for (const auto& idx : plan.batches) {
    const VectorXd g = ens.batch_grad(theta, idx);
    numer += g.dot(ens.batch_hessian(idx) * g);
    denom += g.squaredNorm();
  }
  if (!(denom > 0.0)) throw ZeroGradientError("batch_sharpness_exact: all batch gradients vanish");
  return numer / denom;
}

DivergenceVerdict divergence_probe(const QuadraticEnsemble& ens, double eta,
                                   const BatchMode& mode, int steps,
                                   int growth_window, std::uint64_t seed,
                                   std::optional<VectorXd> theta0) {
  if (growth_window < 2 || steps < 2 * growth_window) {
    throw InvalidArgument("divergence_probe: need growth_window >= 2 and steps >= 2*growth_window");
  }
  SgdOptions o;
  o.eta = eta;
  o.mode = mode;
  o.steps = steps;
  o.seed = seed;
  o.record_every = 1;
  if (theta0) {
    o.theta0 = *theta0;
  } else {
    o.theta0 = ens.theta_star() +
               VectorXd::Constant(ens.dim(), 1.0 / std::sqrt(static_cast<double>(ens.dim())));
  }
  const SgdRun run = sgd_run(ens, o);

  std::vector<double> ts, ls;
  for (std::size_t k = 0; k < run.grad_sq_series.size(); ++k) {
    const double v = run.grad_sq_series[k];
    if (!std::isfinite(v) || v <= 1e-250) break;
    ts.push_back(run.steps[k]);
    ls.push_back(std::log(v));
  }
  DivergenceVerdict out;
  out.diverged = run.diverged;
  out.steps_completed = run.steps_completed;
  const std::size_t m = std::min<std::size_t>(ts.size(), growth_window);
  if (m >= 2) {
    const std::size_t off = ts.size() - m;
    double mt = 0.0, ml = 0.0;
    for (std::size_t k = off; k < ts.size(); ++k) {
      mt += ts[k];
      ml += ls[k];
    }
    mt /= m;
    ml /= m;
    double stt = 0.0, stl = 0.0;
    for (std::size_t k = off; k < ts.size(); ++k) {
      stt += (ts[k] - mt) * (ts[k] - mt);
      stl += (ts[k] - mt) * (ls[k] - ml);
    }
    out.grad_sq_growth_rate = stl / stt;
  } else if (ts.size() < run.grad_sq_series.size()) {
    // Gradient underflowed (or blew up) immediately.
    out.grad_sq_growth_rate = run.diverged ? std::numeric_limits<double>::infinity()
                                           : -std::numeric_limits<double>::infinity();
  }
  return out;
}

double theoretical_variance_1d(double eta) {
  if (!(eta > 0.0)) throw InvalidArgument("theoretical_variance_1d: eta must be > 0");
  if (eta >= 2.0) {
    throw InvalidArgument("theoretical_variance_1d: eta >= 2 is outside the stable domain");
  }
  return eta / (2.0 - eta);
}

double wor_variance_factor(int n, int b) {
  if (n < 2) throw InvalidArgument("wor_variance_factor: n must be >= 2");
  if (b < 1 || b > n) throw InvalidArgument("wor_variance_factor: need 1 <= b <= n");
  return static_cast<double>(n - b) / static_cast<double>(n - 1);
}

double kurtosis_gaussian(const SymmetricMatrix& s) {
  const double tr = s.trace();
  if (!(tr > 0.0)) throw InvalidArgument("kurtosis_gaussian: trace must be > 0");
  const double tr2 = (s.dense() * s.dense()).trace();
  return 1.0 + 2.0 * tr2 / (tr * tr);
}

OrderCheck bs_gni_order_check(const StationaryScalars& s, double eta) {
  OrderCheck c;
  const double delta_tilde = s.a - s.b - 2.0 * s.d;
  c.lhs = s.b * s.c0;
  c.rhs = s.mu_sq * (delta_tilde + 2.0 * s.d);
  c.bs_leq_gni = c.lhs >= c.rhs - 1e-12 * (std::abs(c.lhs) + std::abs(c.rhs));
  c.sufficient_lhs = s.c0;
  c.sufficient_rhs = 0.5 * eta * std::sqrt(s.curvature_spread_sq) *
                     std::sqrt(s.y_tilde_fourth + 2.0 * s.c0 * s.mu_sq + s.mu_sq * s.mu_sq);
  c.sufficient = c.sufficient_lhs >= c.sufficient_rhs;
  return c;
}

}  // namespace eoss::quad
