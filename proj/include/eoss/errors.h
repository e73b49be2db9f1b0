#pragma once

#include <stdexcept>
#include <string>

namespace eoss {

// Thrown for rejected inputs (shape mismatch, non-finite entries, domain
// violations). Carries an optional offending index.
class InvalidArgument : public std::invalid_argument {
 public:
  explicit InvalidArgument(const std::string& what, long index = -1)
      : std::invalid_argument(what), index_(index) {}
  long index() const { return index_; }

 private:
  long index_;
};

// Power iteration ran out of iterations. The last estimate is kept so callers
// that tolerate loose convergence can still use it.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_estimate, int iters)
      : std::runtime_error(what), last_estimate_(last_estimate), iters_(iters) {}
  double last_estimate() const { return last_estimate_; }
  int iters() const { return iters_; }

 private:
  double last_estimate_;
  int iters_;
};

// A ratio whose denominator is a gradient norm hit (numerically) zero.
class ZeroGradientError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace eoss
