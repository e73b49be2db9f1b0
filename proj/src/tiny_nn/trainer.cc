#include "eoss/tiny_nn/trainer.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "eoss/errors.h"
#include "rng.h"

namespace eoss::nn {
namespace {

constexpr std::uint64_t kBatchTag = 0xba7c4;
constexpr std::uint64_t kNoiseTag = 0x9015e;
constexpr std::uint64_t kMetricTag = 0x3e791c;

double median_of(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + mid));
}

Indices all_indices(int n) {
  Indices idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace

std::string to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::kNone: return "none";
    case NoiseMode::kSgd: return "sgd";
    case NoiseMode::kAnisotropic: return "anisotropic-sampling";
    case NoiseMode::kDiagonal: return "diagonal";
    case NoiseMode::kIsotropic: return "isotropic";
  }
  return "?";
}

NoiseMode parse_noise_mode(const std::string& s) {
  if (s == "none") return NoiseMode::kNone;
  if (s == "sgd") return NoiseMode::kSgd;
  if (s == "anisotropic-sampling") return NoiseMode::kAnisotropic;
  if (s == "diagonal") return NoiseMode::kDiagonal;
  if (s == "isotropic") return NoiseMode::kIsotropic;
  throw InvalidArgument("unknown noise mode '" + s + "'");
}

std::string to_string(ScheduleEvent::Action a) {
  return a == ScheduleEvent::Action::kSetEta ? "set_eta" : "set_batch";
}

void validate(const TrainConfig& c, int n) {
  if (!(c.eta > 0.0) || !std::isfinite(c.eta)) throw InvalidArgument("eta must be positive");
  if (c.cadence < 1) throw InvalidArgument("cadence must be >= 1");
  if (c.steps < 0) throw InvalidArgument("steps must be >= 0");
  if (c.mode.b < 1 || c.mode.b > n) throw InvalidArgument("batch size must lie in [1, n]");
  if (c.noise_refresh < 1) throw InvalidArgument("noise_refresh must be >= 1");
  if (!(c.noise_scale >= 0.0)) throw InvalidArgument("noise_scale must be >= 0");
  if (c.catapult_window < 3) throw InvalidArgument("catapult_window must be >= 3");
}

std::vector<CatapultEvent> detect_catapult(const std::vector<double>& loss, int window,
                                           double factor, long step_offset) {
  if (window < 3) throw InvalidArgument("detect_catapult: window must be >= 3");
  std::vector<CatapultEvent> events;
  const std::size_t w = static_cast<std::size_t>(window);
  std::size_t t = w;
  while (t < loss.size()) {
    const double med = median_of(std::vector<double>(loss.begin() + (t - w), loss.begin() + t));
    if (!(loss[t] > factor * med)) {
      ++t;
      continue;
    }
    CatapultEvent e;
    e.start_step = static_cast<long>(t) + step_offset;
    std::size_t peak = t;
    std::size_t u = t;
    for (; u < loss.size() && !(loss[u] < med); ++u)
      if (loss[u] > loss[peak] || !std::isfinite(loss[u])) peak = u;
    e.peak_step = static_cast<long>(peak) + step_offset;
    e.peak_ratio = loss[peak] / med;
    events.push_back(e);
    // Trailing medians restart past the event.
    t = u + w;
  }
  return events;
}

NoiseStats gradient_noise_stats(const MlpShape& shape, const VectorXd& theta, const Dataset& data) {
  const MatrixXd g = per_sample_grads(shape, theta, data, all_indices(data.n));
  const VectorXd mean = g.colwise().mean().transpose();
  NoiseStats s;
  s.diag = (g.rowwise() - mean.transpose()).colwise().squaredNorm().transpose() / data.n;
  s.trace = s.diag.sum();
  return s;
}

VectorXd sample_injected_noise(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
                               NoiseMode mode, int b, std::uint64_t seed, const NoiseStats& stats,
                               double noise_scale) {
  if (b < 1 || b > data.n) throw InvalidArgument("noise batch size must lie in [1, n]");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const int p = shape.param_count();
  VectorXd xi(p);
  switch (mode) {
    case NoiseMode::kDiagonal:
      for (int j = 0; j < p; ++j) xi[j] = noise_scale * std::sqrt(stats.diag[j] / b) * normal(rng);
      return xi;
    case NoiseMode::kIsotropic: {
      const double sd = noise_scale * std::sqrt(stats.trace / (static_cast<double>(b) * p));
      for (int j = 0; j < p; ++j) xi[j] = sd * normal(rng);
      return xi;
    }
    case NoiseMode::kAnisotropic: {
      // w_i ~ N(1, n/b - 1): the reweighted-gradient noise is then
      // (1/b)(Sigma_g + g g^T) to first order, the b-batch SGD level.
      const double sd = noise_scale * std::sqrt(static_cast<double>(data.n) / b - 1.0);
      std::vector<double> w(data.n);
      for (double& x : w) x = 1.0 + sd * normal(rng);
      return weighted_grad(shape, theta, data, w) - grad(shape, theta, data);
    }
    default:
      throw InvalidArgument("noise injection needs anisotropic-sampling, diagonal or isotropic");
  }
}

VectorXd noisy_gd_step(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
                       double eta, NoiseMode mode, int b, std::uint64_t seed,
                       const NoiseStats* stats, double noise_scale) {
  if (b < 1 || b > data.n) throw InvalidArgument("noise batch size must lie in [1, n]");
  if (mode == NoiseMode::kAnisotropic) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const double sd = noise_scale * std::sqrt(static_cast<double>(data.n) / b - 1.0);
    std::vector<double> w(data.n);
    for (double& x : w) x = 1.0 + sd * normal(rng);
    return theta - eta * weighted_grad(shape, theta, data, w);
  }
  if (mode != NoiseMode::kDiagonal && mode != NoiseMode::kIsotropic)
    throw InvalidArgument("noisy_gd_step needs anisotropic-sampling, diagonal or isotropic");
  NoiseStats local;
  if (stats == nullptr) {
    local = gradient_noise_stats(shape, theta, data);
    stats = &local;
  }
  const VectorXd g = grad(shape, theta, data);
  if (noise_scale == 0.0) return theta - eta * g;
  return theta - eta * (g + sample_injected_noise(shape, theta, data, mode, b, seed, *stats, noise_scale));
}

MlpTrainer::MlpTrainer(const MlpShape& shape, const Dataset& data, VectorXd theta0,
                       TrainConfig config)
    : shape_(shape),
      data_(data),
      oracle_(shape, data),
      config_(config),
      theta_(std::move(theta0)),
      eta_(config.eta),
      mode_(config.mode) {
  validate(config_, data_.n);
  if (theta_.size() != shape_.param_count())
    throw InvalidArgument("initial parameters do not match the network");
  initial_loss_ = forward_loss(shape_, theta_, data_);
}

double MlpTrainer::full_loss() const { return forward_loss(shape_, theta_, data_); }

void MlpTrainer::set_eta(double eta) {
  if (!(eta > 0.0)) throw InvalidArgument("eta must be positive");
  eta_ = eta;
}

void MlpTrainer::set_batch_size(int b) {
  if (b < 1 || b > data_.n) throw InvalidArgument("batch size must lie in [1, n]");
  mode_.b = b;
}

void MlpTrainer::step() {
  const std::uint64_t t = static_cast<std::uint64_t>(step_);
  const std::uint64_t noise_seed = detail::mix_seed(config_.seed, kNoiseTag + t);
  switch (config_.noise_mode) {
    case NoiseMode::kNone:
      theta_ -= eta_ * grad(shape_, theta_, data_);
      break;
    case NoiseMode::kSgd: {
      const Indices idx = quad::sample_batch(data_.n, mode_, detail::mix_seed(config_.seed, kBatchTag), t);
      theta_ -= eta_ * grad(shape_, theta_, data_, idx);
      break;
    }
    case NoiseMode::kAnisotropic:
      theta_ = noisy_gd_step(shape_, theta_, data_, eta_, config_.noise_mode, mode_.b, noise_seed,
                             nullptr, config_.noise_scale);
      break;
    case NoiseMode::kDiagonal:
    case NoiseMode::kIsotropic:
      if (!noise_ || step_ - noise_step_ >= config_.noise_refresh) {
        noise_ = gradient_noise_stats(shape_, theta_, data_);
        noise_step_ = step_;
      }
      theta_ = noisy_gd_step(shape_, theta_, data_, eta_, config_.noise_mode, mode_.b, noise_seed,
                             &*noise_, config_.noise_scale);
      break;
  }
  ++step_;
  const double l = full_loss();
  history_.push_back(l);
  if (!std::isfinite(l) || l > config_.blowup * std::max(initial_loss_, 1e-12) || !theta_.allFinite())
    diverged_ = true;
}

double MlpTrainer::batch_sharpness_now() const {
  return metrics::batch_sharpness_est(oracle_, theta_, mode_, 256,
                                      detail::mix_seed(config_.seed, kMetricTag));
}

metrics::TrainerState MlpTrainer::checkpoint() const {
  return metrics::TrainerState{theta_, step_, eta_, mode_.b, history_};
}

void MlpTrainer::restore(const metrics::TrainerState& s) {
  theta_ = s.params;
  step_ = s.step;
  eta_ = s.eta;
  mode_.b = s.batch_size;
  history_ = s.loss_history;
  diverged_ = false;
  noise_.reset();
}

SharpnessReport MlpTrainer::measure_now(const MetricsRequest& request) {
  const std::uint64_t ms = detail::mix_seed(config_.seed, kMetricTag + static_cast<std::uint64_t>(step_));
  Indices step_batch;
  if (request.step_sharpness)
    step_batch = quad::sample_batch(data_.n, mode_, detail::mix_seed(config_.seed, kBatchTag),
                                    static_cast<std::uint64_t>(step_));
  return metrics::measure(oracle_, theta_, mode_, request, step_, ms, step_batch, &warm_);
}

RunLog train(const MlpParams& init, const Dataset& data, const TrainConfig& config,
             const std::vector<ScheduleEvent>& schedule, const MetricsRequest& request) {
  validate_dataset(data);
  validate(config, data.n);
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const ScheduleEvent& e = schedule[i];
    if (e.at_step < 0 || e.at_step > config.steps) throw InvalidArgument("schedule step outside the run", static_cast<long>(i));
    if (!(e.value > 0.0)) throw InvalidArgument("schedule values must be positive", static_cast<long>(i));
    if (e.action == ScheduleEvent::Action::kSetBatch &&
        (e.value != std::floor(e.value) || e.value > data.n))
      throw InvalidArgument("scheduled batch size must be an integer in [1, n]", static_cast<long>(i));
    if (i > 0 && e.at_step < schedule[i - 1].at_step) throw InvalidArgument("schedule must be sorted", static_cast<long>(i));
  }

  RunLog log;
  for (const auto& e : schedule) log.schedule.push_back({e, false});
  MlpTrainer tr(init.shape, data, init.flat, config);

  auto record = [&]() {
    RunRow row;
    row.step = tr.steps_taken();
    row.loss = tr.steps_taken() == 0 ? tr.full_loss() : tr.loss_history().back();
    row.eta = tr.eta();
    row.batch_size = tr.batch_size();
    try {
      row.report = tr.measure_now(request);
    } catch (const ZeroGradientError&) {
      row.report.step = row.step;
    }
    log.rows.push_back(std::move(row));
  };

  std::size_t next_event = 0;
  auto apply_events = [&]() {
    while (next_event < schedule.size() && schedule[next_event].at_step == tr.steps_taken()) {
      const ScheduleEvent& e = schedule[next_event];
      if (e.action == ScheduleEvent::Action::kSetEta) tr.set_eta(e.value);
      else tr.set_batch_size(static_cast<int>(e.value));
      log.schedule[next_event].applied = true;
      ++next_event;
    }
  };

  apply_events();
  record();
  while (tr.steps_taken() < config.steps) {
    tr.step();
    if (tr.diverged()) break;
    apply_events();
    if (tr.steps_taken() % config.cadence == 0 || tr.steps_taken() == config.steps) record();
  }
  log.diverged = tr.diverged();
  log.steps_completed = tr.steps_taken();
  log.loss_history = tr.loss_history();
  log.final_params = tr.theta();
  log.catapults = detect_catapult(log.loss_history, config.catapult_window, config.catapult_factor, 1);
  return log;
}

std::optional<double> plateau_median(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  const std::size_t k = std::max<std::size_t>(1, (values.size() + 9) / 10);
  return median_of(std::vector<double>(values.end() - k, values.end()));
}

std::vector<StaticGapRow> gap_scan_static(const MlpShape& shape, const VectorXd& theta,
                                          const Dataset& data, const std::vector<int>& b_list,
                                          int num_batches, std::uint64_t seed,
                                          const numerics::PowerIterSettings& power) {
  for (std::size_t i = 0; i < b_list.size(); ++i) {
    if (b_list[i] < 1 || b_list[i] > data.n) throw InvalidArgument("batch size outside [1, n]", static_cast<long>(i));
    if (i > 0 && b_list[i] <= b_list[i - 1]) throw InvalidArgument("b_list must be ascending", static_cast<long>(i));
  }
  MlpOracle oracle(shape, data);
  const double lmax = metrics::lambda_max_full(oracle, theta, power);
  std::vector<StaticGapRow> rows;
  for (int b : b_list) {
    const BatchMode mode{quad::Replacement::kWithout, b};
    const auto plan = quad::plan_batches(data.n, mode, num_batches, detail::mix_seed(seed, b));
    std::vector<double> vals;
    StaticGapRow row;
    row.b = b;
    row.lambda_max = lmax;
    for (std::size_t k = 0; k < plan.batches.size(); ++k) {
      numerics::PowerIterSettings s = power;
      s.seed = detail::mix_seed(seed, 0x5ca9 + k);
      try {
        vals.push_back(numerics::top_eigenpair(oracle.batch_hessian_operator(theta, plan.batches[k]), s).lambda_max);
      } catch (const ConvergenceError&) {
        ++row.failed;
      }
    }
    if (vals.empty()) {
      row.lambda_max_b = std::numeric_limits<double>::quiet_NaN();
    } else {
      double m = 0.0;
      for (double v : vals) m += v;
      m /= vals.size();
      double var = 0.0;
      for (double v : vals) var += (v - m) * (v - m);
      row.lambda_max_b = m;
      row.lambda_max_b_stderr = vals.size() > 1 ? std::sqrt(var / (vals.size() - 1) / vals.size()) : 0.0;
    }
    row.gap = row.lambda_max_b - lmax;
    rows.push_back(row);
  }
  return rows;
}

std::vector<TrainedGapRow> gap_scan_trained(const MlpParams& init, const Dataset& data,
                                            const TrainConfig& base, const std::vector<int>& b_list,
                                            const MetricsRequest& request, int gap_batches) {
  MetricsRequest req = request;
  req.lambda_max = true;
  req.batch_sharpness = true;
  std::vector<TrainedGapRow> rows;
  for (int b : b_list) {
    TrainConfig cfg = base;
    cfg.mode.b = b;
    if (b == data.n) cfg.noise_mode = NoiseMode::kNone;
    const RunLog log = train(init, data, cfg, {}, req);
    TrainedGapRow row;
    row.b = b;
    row.diverged = log.diverged;
    std::vector<double> lm, bs;
    for (const auto& r : log.rows) {
      if (r.report.lambda_max) lm.push_back(*r.report.lambda_max);
      if (r.report.batch_sharpness) bs.push_back(*r.report.batch_sharpness);
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.final_lambda_max = plateau_median(lm).value_or(nan);
    row.final_batch_sharpness = plateau_median(bs).value_or(nan);
    if (!log.diverged && gap_batches > 0) {
      const auto g = gap_scan_static(init.shape, log.final_params, data, {b}, gap_batches,
                                     detail::mix_seed(cfg.seed, 0x6a9), req.full_power);
      row.final_lambda_max_b = g.front().lambda_max_b;
      row.final_gap = g.front().gap;
    } else {
      row.final_lambda_max_b = nan;
      row.final_gap = nan;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace eoss::nn
