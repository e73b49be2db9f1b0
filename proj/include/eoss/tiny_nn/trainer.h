#pragma once

// SGD and noisy full-batch GD on the MLP with mid-run hyperparameter
// schedules, catapult detection, and batch-size gap scans.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eoss/sharpness_metrics.h"
#include "eoss/tiny_nn/mlp.h"

namespace eoss::nn {

using metrics::BatchMode;
using metrics::MetricsRequest;
using metrics::SharpnessReport;

enum class NoiseMode { kNone, kSgd, kAnisotropic, kDiagonal, kIsotropic };
std::string to_string(NoiseMode m);
NoiseMode parse_noise_mode(const std::string& s);

struct TrainConfig {
  double eta = 0.05;
  BatchMode mode{quad::Replacement::kWithout, 8};
  long steps = 10000;
  std::uint64_t seed = 0;
  long cadence = 100;  // metric rows every `cadence` steps
  NoiseMode noise_mode = NoiseMode::kSgd;
  double init_scale = 1.0;
  // Per-sample gradient covariance refresh period for the injected-noise modes.
  int noise_refresh = 50;
  // Multiplies the injected noise; 0 gives plain GD.
  double noise_scale = 1.0;
  // Stops when the full loss exceeds blowup * max(initial loss, 1e-12).
  double blowup = 1e6;
  int catapult_window = 20;
  double catapult_factor = 3.0;
};

void validate(const TrainConfig& c, int n);

struct ScheduleEvent {
  enum class Action { kSetEta, kSetBatch };
  long at_step = 0;
  Action action = Action::kSetEta;
  double value = 0.0;
};
std::string to_string(ScheduleEvent::Action a);

struct CatapultEvent {
  long start_step = 0;
  long peak_step = 0;
  double peak_ratio = 0.0;
};

struct RunRow {
  long step = 0;
  double loss = 0.0;
  double eta = 0.0;
  int batch_size = 0;
  SharpnessReport report;
};

struct AppliedEvent {
  ScheduleEvent event;
  bool applied = false;
};

struct RunLog {
  std::vector<RunRow> rows;
  std::vector<AppliedEvent> schedule;
  std::vector<CatapultEvent> catapults;
  std::vector<double> loss_history;  // full loss after each step
  bool diverged = false;
  long steps_completed = 0;
  VectorXd final_params;
};

/// Events whose loss rises above factor * (median of the `window` preceding
/// values). An event closes once the loss drops back below that median;
/// events never overlap. Steps are series positions plus `step_offset`.
std::vector<CatapultEvent> detect_catapult(const std::vector<double>& loss, int window,
                                           double factor, long step_offset = 0);

/// Empirical diagonal and trace of the per-sample gradient covariance.
struct NoiseStats {
  VectorXd diag;
  double trace = 0.0;
};
NoiseStats gradient_noise_stats(const MlpShape& shape, const VectorXd& theta, const Dataset& data);

/// One step of noise-injected full-batch GD. `stats` are required for the
/// diagonal and isotropic modes and recomputed from theta when null.
VectorXd noisy_gd_step(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
                       double eta, NoiseMode mode, int b, std::uint64_t seed,
                       const NoiseStats* stats = nullptr, double noise_scale = 1.0);

// The injected perturbation alone (update direction minus the full gradient).
VectorXd sample_injected_noise(const MlpShape& shape, const VectorXd& theta, const Dataset& data,
                               NoiseMode mode, int b, std::uint64_t seed, const NoiseStats& stats,
                               double noise_scale = 1.0);

/// Steppable training run over an MLP and a dataset.
class MlpTrainer final : public metrics::TrainerHandle {
 public:
  MlpTrainer(const MlpShape& shape, const Dataset& data, VectorXd theta0, TrainConfig config);

  void step() override;
  double full_loss() const override;
  const std::vector<double>& loss_history() const override { return history_; }
  double eta() const override { return eta_; }
  void set_eta(double eta) override;
  int batch_size() const override { return mode_.b; }
  void set_batch_size(int b) override;
  double batch_sharpness_now() const override;
  metrics::TrainerState checkpoint() const override;
  void restore(const metrics::TrainerState& state) override;

  const VectorXd& theta() const { return theta_; }
  long steps_taken() const { return step_; }
  const BatchMode& mode() const { return mode_; }
  bool diverged() const { return diverged_; }
  SharpnessReport measure_now(const MetricsRequest& request);

 private:
  const MlpShape& shape_;
  const Dataset& data_;
  MlpOracle oracle_;
  TrainConfig config_;
  VectorXd theta_;
  double eta_;
  BatchMode mode_;
  long step_ = 0;
  std::vector<double> history_;
  double initial_loss_ = 0.0;
  bool diverged_ = false;
  std::optional<NoiseStats> noise_;
  long noise_step_ = -1;
  VectorXd warm_;
};

/// Trains with the schedule applied just before the step it names, records a
/// metric row at step 0, every `cadence` steps, and at the end. A diverged run
/// stops early with `diverged` set.
RunLog train(const MlpParams& init, const Dataset& data, const TrainConfig& config,
             const std::vector<ScheduleEvent>& schedule, const MetricsRequest& request);

struct StaticGapRow {
  int b = 0;
  double lambda_max_b = 0.0;
  double lambda_max_b_stderr = 0.0;
  double lambda_max = 0.0;
  double gap = 0.0;
  int failed = 0;  // batches whose power iteration did not converge
};

/// lambda_max^b - lambda_max at fixed parameters, batches drawn without
/// replacement. lambda_max is computed once and shared by every row.
std::vector<StaticGapRow> gap_scan_static(const MlpShape& shape, const VectorXd& theta,
                                          const Dataset& data, const std::vector<int>& b_list,
                                          int num_batches, std::uint64_t seed,
                                          const numerics::PowerIterSettings& power = {500, 1e-6, 0, {}});

struct TrainedGapRow {
  int b = 0;
  double final_lambda_max = 0.0;
  double final_batch_sharpness = 0.0;
  double final_lambda_max_b = 0.0;
  double final_gap = 0.0;
  bool diverged = false;
};

/// One training run per b from the same initialization; plateau values are
/// medians over the final 10% of metric rows. The gap is measured once at
/// the final parameters with that run's batch size.
std::vector<TrainedGapRow> gap_scan_trained(const MlpParams& init, const Dataset& data,
                                            const TrainConfig& base, const std::vector<int>& b_list,
                                            const MetricsRequest& request, int gap_batches);

// Median of the last ceil(10%) of values (at least one); nullopt when empty.
std::optional<double> plateau_median(const std::vector<double>& values);

}  // namespace eoss::nn
