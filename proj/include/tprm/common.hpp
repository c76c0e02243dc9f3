#pragma once

#include <Eigen/Dense>

#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tprm {

using Index = Eigen::Index;
using Dims = std::vector<Index>;

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

// Numeric failures (non-finite conditionals, diverged solves) map to CLI
// exit code 1; bad shapes, parameters, and unreadable inputs map to 2.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Conditional-distribution parameters surfaced for exact verification.
struct NormalParams {
  double mean, variance;
};
struct GammaParams {
  double shape, rate;
};

inline Index dims_product(const Dims& dims) {
  Index n = 1;
  for (Index d : dims) n *= d;
  return n;
}

inline std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << "(";
  for (std::size_t k = 0; k < dims.size(); ++k) os << (k ? "x" : "") << dims[k];
  os << ")";
  return os.str();
}

inline void check_positive_dims(const Dims& dims, const char* what) {
  if (dims.empty())
    throw std::invalid_argument(std::string(what) + ": dims must be nonempty");
  for (Index d : dims)
    if (d <= 0)
      throw std::invalid_argument(std::string(what) + ": dims must be positive, got " +
                                  dims_to_string(dims));
}

}  // namespace tprm
