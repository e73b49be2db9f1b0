#include "eoss/tiny_nn/dataset.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "eoss/errors.h"
#include "rng.h"

namespace eoss::nn {

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::kBlobs: return "blobs";
    case DatasetKind::kEasySeparable: return "easy-separable";
    case DatasetKind::kNoisyLabels: return "noisy-labels";
  }
  return "?";
}

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "blobs") return DatasetKind::kBlobs;
  if (s == "easy-separable") return DatasetKind::kEasySeparable;
  if (s == "noisy-labels") return DatasetKind::kNoisyLabels;
  throw InvalidArgument("unknown dataset kind '" + s + "'");
}

Dataset make_synthetic_dataset(const SyntheticOptions& o) {
  if (o.classes < 2) throw InvalidArgument("classes must be >= 2");
  if (o.n < 1 || o.d_in < 1) throw InvalidArgument("n and d_in must be >= 1");
  if (!(o.spread >= 0.0) || !std::isfinite(o.spread)) throw InvalidArgument("spread must be finite and >= 0");
  if (o.kind == DatasetKind::kEasySeparable && o.classes > o.d_in)
    throw InvalidArgument("easy-separable needs classes <= d_in");
  if (!(o.label_noise >= 0.0 && o.label_noise <= 1.0))
    throw InvalidArgument("label_noise must lie in [0, 1]");

  std::mt19937_64 rng(detail::mix_seed(o.seed, 0xda7a));
  std::normal_distribution<double> normal;

  std::vector<double> centers(static_cast<std::size_t>(o.classes) * o.d_in, 0.0);
  if (o.kind == DatasetKind::kEasySeparable) {
    const double sep = 4.0 + 8.0 * o.spread;
    for (int c = 0; c < o.classes; ++c) centers[c * o.d_in + c] = sep;
  } else {
    for (double& v : centers) v = normal(rng);
  }

  Dataset d;
  d.n = o.n;
  d.d_in = o.d_in;
  d.k = o.classes;
  d.kind = o.kind;
  d.labels.resize(o.n);
  for (int i = 0; i < o.n; ++i) d.labels[i] = i % o.classes;
  std::shuffle(d.labels.begin(), d.labels.end(), rng);

  d.inputs.resize(static_cast<std::size_t>(o.n) * o.d_in);
  for (int i = 0; i < o.n; ++i) {
    const double* c = centers.data() + d.labels[i] * o.d_in;
    for (int j = 0; j < o.d_in; ++j) d.inputs[i * o.d_in + j] = c[j] + o.spread * normal(rng);
  }

  if (o.kind == DatasetKind::kNoisyLabels) {
    // Permute the labels of a random subset of rows among themselves.
    std::vector<int> rows(o.n);
    std::iota(rows.begin(), rows.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng);
    const int m = static_cast<int>(std::lround(o.label_noise * o.n));
    std::vector<int> picked(rows.begin(), rows.begin() + m);
    std::vector<int> lab(m);
    for (int t = 0; t < m; ++t) lab[t] = d.labels[picked[t]];
    std::shuffle(lab.begin(), lab.end(), rng);
    for (int t = 0; t < m; ++t) d.labels[picked[t]] = lab[t];
  }

  d.targets.assign(static_cast<std::size_t>(o.n) * o.classes, 0.0);
  for (int i = 0; i < o.n; ++i) d.targets[i * o.classes + d.labels[i]] = 1.0;
  validate_dataset(d);
  return d;
}

void validate_dataset(const Dataset& d) {
  if (d.n < 1) throw InvalidArgument("dataset must have n >= 1");
  if (d.inputs.size() != static_cast<std::size_t>(d.n) * d.d_in)
    throw InvalidArgument("inputs size does not match n x d_in");
  if (d.targets.size() != static_cast<std::size_t>(d.n) * d.k)
    throw InvalidArgument("targets size does not match n x k");
  const bool one_hot = !d.labels.empty();
  if (one_hot && d.labels.size() != static_cast<std::size_t>(d.n))
    throw InvalidArgument("labels size does not match n");
  for (int i = 0; i < d.n; ++i) {
    double sum = 0.0, sq = 0.0;
    for (int j = 0; j < d.k; ++j) {
      sum += d.target(i)[j];
      sq += d.target(i)[j] * d.target(i)[j];
    }
    if (!std::isfinite(sq)) throw InvalidArgument("non-finite target row", i);
    if (one_hot && std::abs(sum - 1.0) > 1e-12) throw InvalidArgument("one-hot row does not sum to 1", i);
  }
}

}  // namespace eoss::nn
