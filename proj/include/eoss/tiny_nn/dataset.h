#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace eoss::nn {

enum class DatasetKind { kBlobs, kEasySeparable, kNoisyLabels };
std::string to_string(DatasetKind k);
DatasetKind parse_dataset_kind(const std::string& s);

/// Row-major inputs (n x d_in) and targets (n x k).
struct Dataset {
  int n = 0;
  int d_in = 0;
  int k = 0;
  std::vector<double> inputs;
  std::vector<double> targets;
  std::vector<int> labels;  // class index per row
  DatasetKind kind = DatasetKind::kBlobs;

  const double* input(int i) const { return inputs.data() + static_cast<std::size_t>(i) * d_in; }
  const double* target(int i) const { return targets.data() + static_cast<std::size_t>(i) * k; }
};

struct SyntheticOptions {
  DatasetKind kind = DatasetKind::kBlobs;
  int n = 512;
  int d_in = 10;
  int classes = 4;
  double spread = 1.0;
  double label_noise = 0.2;  // fraction of relabelled rows for kNoisyLabels
  std::uint64_t seed = 0;
};

/// Gaussian class clusters with one-hot targets. Blob centers are drawn from
/// N(0, I). Easy-separable data puts center k at (4 + 8 spread) e_k, far
/// enough apart that a linear probe separates the classes.
Dataset make_synthetic_dataset(const SyntheticOptions& options);

// Checks shape agreement and that one-hot rows sum to 1.
void validate_dataset(const Dataset& d);

}  // namespace eoss::nn
