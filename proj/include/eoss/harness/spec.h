#pragma once

// Declarative experiment specs (JSON). Parsing is strict: unknown keys and
// out-of-range values raise SpecError naming the offending field path.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eoss/quadratic_lab.h"
#include "eoss/tiny_nn/trainer.h"

namespace eoss::harness {

class SpecError : public std::runtime_error {
 public:
  SpecError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class Backend { kQuadratic, kMlp };

struct QuadraticSpec {
  // gaussian_means_1d | means_1d | random_psd | counterexample
  std::string kind = "gaussian_means_1d";
  int n = 2;
  int d = 1;
  int rank = 1;
  double scale = 1.0;
  std::vector<double> means;
  double alpha = 1.0;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::vector<double>> theta0;
};

struct MlpSpec {
  std::vector<int> dims{10, 32, 32, 4};
  nn::Activation activation = nn::Activation::kTanh;
  nn::SyntheticOptions dataset;
  nn::NoiseMode noise_mode = nn::NoiseMode::kSgd;
  int noise_refresh = 50;
  double noise_scale = 1.0;
  // Initialization seed; the cell seed when absent.
  std::optional<std::uint64_t> init_seed;
};

struct TrainingSpec {
  long steps = 1000;
  quad::Replacement replacement = quad::Replacement::kWith;
  long log_every = 1;
  double blowup = 1e6;
  int catapult_window = 20;
  double catapult_factor = 3.0;
};

struct MetricsSpec {
  std::vector<std::string> which{"batch_sharpness"};
  long cadence = 100;
  int num_batches = 64;
  int max_iters = 500;
  double full_tol = 1e-6;
  double batch_tol = 1e-4;
};

struct SweepSpec {
  std::vector<double> eta;
  std::vector<int> b{1};
  std::vector<std::uint64_t> seed{0};
  std::vector<double> init_scale{1.0};
  // Axes written into directory names, in order.
  std::vector<std::string> named_axes;
};

struct ProbeSpec {
  std::optional<double> eta_factor;
  std::optional<int> new_b;
  int probe_steps = 200;
  double catapult_factor = 3.0;
  int window = 20;
};

struct GapScanSpec {
  std::string mode = "static";  // static | trained
  std::vector<int> b_list;
  int num_batches = 64;
};

struct ExperimentSpec {
  std::string name;
  Backend backend = Backend::kQuadratic;
  QuadraticSpec quadratic;
  MlpSpec mlp;
  TrainingSpec training;
  MetricsSpec metrics;
  std::vector<nn::ScheduleEvent> schedule;
  SweepSpec sweep;
  std::string output_dir = "runs";
  std::optional<ProbeSpec> probe;
  std::optional<GapScanSpec> gap_scan;
  std::string raw_text;  // exact input bytes
};

ExperimentSpec parse_spec(const std::string& text);
ExperimentSpec load_spec(const std::string& path);

// Number of samples the backend trains on.
int sample_count(const ExperimentSpec& spec);
metrics::MetricsRequest metrics_request(const MetricsSpec& m);

// One point of the sweep grid.
struct Cell {
  double eta = 0.0;
  int b = 1;
  std::uint64_t seed = 0;
  double init_scale = 1.0;
  std::string rel_dir;  // name/axis=v/.../seed=s
};

std::vector<Cell> expand_sweep(const ExperimentSpec& spec);

// Shortest decimal that round-trips to the same double.
std::string shortest(double v);

}  // namespace eoss::harness
