#pragma once

// Sampler-validation harness comparing two simulators of one joint
// distribution: marginal-conditional (prior then likelihood, iid draws) vs
// successive-conditional (Gibbs transition then data redraw). A correct
// sampler makes every statistic's two means agree; z-scores use iid standard
// errors on the forward side and batch-means standard errors on the chain.

#include <functional>

#include "tprm/common.hpp"

namespace tprm::geweke {

struct Result {
  double max_abs_z = 0.0;
  Index worst_stat = -1;
  VectorXd z;
};

inline double batch_means_se(const VectorXd& series, Index batches = 100) {
  const Index n = series.size();
  const Index len = n / batches;
  VectorXd means(batches);
  for (Index b = 0; b < batches; ++b) means[b] = series.segment(b * len, len).mean();
  const double grand = means.mean();
  const double var_b = (means.array() - grand).square().sum() / (batches - 1);
  return std::sqrt(var_b / batches);
}

/// forward() returns one iid statistic vector; step() advances the chain and
/// returns the statistic vector at the new state.
inline Result compare(const std::function<VectorXd()>& forward, Index n_forward,
                      const std::function<VectorXd()>& step, Index n_successive,
                      Index burn = 1000) {
  VectorXd probe = forward();
  const Index k = probe.size();
  MatrixXd f(n_forward, k), s(n_successive, k);
  f.row(0) = probe.transpose();
  for (Index t = 1; t < n_forward; ++t) f.row(t) = forward().transpose();
  for (Index t = 0; t < burn; ++t) (void)step();
  for (Index t = 0; t < n_successive; ++t) s.row(t) = step().transpose();

  Result res;
  res.z.resize(k);
  for (Index j = 0; j < k; ++j) {
    const double mf = f.col(j).mean();
    const double vf = (f.col(j).array() - mf).square().sum() / (n_forward - 1);
    const double se_f = std::sqrt(vf / n_forward);
    const double ms = s.col(j).mean();
    const double se_s = batch_means_se(s.col(j));
    res.z[j] = (mf - ms) / std::sqrt(se_f * se_f + se_s * se_s);
    if (std::fabs(res.z[j]) > res.max_abs_z) {
      res.max_abs_z = std::fabs(res.z[j]);
      res.worst_stat = j;
    }
  }
  return res;
}

/// Convenience: append x and x^2 for every component.
inline void push_moments(std::vector<double>& out, const double* x, Index n) {
  for (Index i = 0; i < n; ++i) {
    out.push_back(x[i]);
    out.push_back(x[i] * x[i]);
  }
}

}  // namespace tprm::geweke
