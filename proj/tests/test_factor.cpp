#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tprm/factor.hpp"

using namespace tprm;

namespace {

MatrixXd random_matrix(Index r, Index c, RngStream& rng, double sd = 1.0) {
  return MatrixXd::NullaryExpr(r, c, [&](Index, Index) { return rng.normal(0, sd); });
}

CPState state_with_subject(Index n, Index rank, RngStream& rng, Index id = 0) {
  CPState s;
  s.factors.weights = VectorXd::Ones(rank);
  s.factors.factors = {random_matrix(2, rank, rng)};
  s.factors.subject = random_matrix(n, rank, rng);
  s.partition_id = id;
  return s;
}

}  // namespace

TEST_CASE("assemble_L concatenates subject scores in partition order") {
  RngStream rng(3);
  auto a = state_with_subject(3, 2, rng, 0);
  MatrixXd single = assemble_L({a});
  CHECK(single == *a.factors.subject);

  auto b = state_with_subject(3, 2, rng, 1);
  MatrixXd both = assemble_L({a, b});
  REQUIRE(both.rows() == 3);
  REQUIRE(both.cols() == 4);
  CHECK(both.leftCols(2) == *a.factors.subject);
  CHECK(both.rightCols(2) == *b.factors.subject);

  // Index oracle: column j comes from partition j / R, column j % R.
  std::vector<CPState> states{a, b};
  for (Index j = 0; j < 4; ++j)
    for (Index i = 0; i < 3; ++i)
      CHECK(both(i, j) == (*states[j / 2].factors.subject)(i, j % 2));

  auto c = state_with_subject(5, 2, rng, 2);
  CHECK_THROWS_AS((void)assemble_L({a, c}), std::invalid_argument);
}

TEST_CASE("g conditional: prior fallback and ridge-regression limit") {
  RngStream rng(5);
  FactorState s;
  s.scores = random_matrix(4, 2, rng);
  s.basis = random_matrix(2, 6, rng);
  s.tau_psi = 1.7;
  MatrixXd l = random_matrix(4, 6, rng);

  // d_k = 0 for all j: draws revert to N(0, 1/n).
  FactorState zeroed = s;
  zeroed.basis.row(1).setZero();
  auto [mean, var] = g_conditional(zeroed, l, 1);
  CHECK(mean.isZero(0.0));
  CHECK(var == doctest::Approx(0.25));

  // Noiseless L = G0 D0 and large precision: mean approaches the true g_k.
  FactorState truth;
  truth.scores = random_matrix(4, 2, rng);
  truth.basis = random_matrix(2, 6, rng);
  truth.tau_psi = 1e10;
  MatrixXd clean = truth.scores * truth.basis;
  FactorState off = truth;
  off.scores.col(0) = random_matrix(4, 1, rng);
  auto [m2, v2] = g_conditional(off, clean, 0);
  CHECK((m2 - truth.scores.col(0)).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(v2 < 1e-9);
}

TEST_CASE("factor conditionals match a scalar loop oracle") {
  RngStream rng(7);
  FactorState s;
  s.scores = random_matrix(3, 2, rng);
  s.basis = random_matrix(2, 4, rng);
  s.tau_psi = 0.9;
  MatrixXd l = random_matrix(3, 4, rng);

  for (Index k = 0; k < 2; ++k) {
    // l*_j^{-k} = L_col_j - G d_j + d_kj g_k, per column.
    double d2 = 0;
    for (Index j = 0; j < 4; ++j) d2 += s.basis(k, j) * s.basis(k, j);
    const double sig2 = 1.0 / (3.0 + s.tau_psi * d2);
    VectorXd num = VectorXd::Zero(3);
    for (Index j = 0; j < 4; ++j) {
      VectorXd lstar = l.col(j) - s.scores * s.basis.col(j) + s.basis(k, j) * s.scores.col(k);
      num += s.basis(k, j) * lstar;
    }
    auto [mean, var] = g_conditional(s, l, k);
    CHECK(var == doctest::Approx(sig2).epsilon(1e-12));
    CHECK((mean - s.tau_psi * sig2 * num).cwiseAbs().maxCoeff() < 1e-12);

    const double g2 = s.scores.col(k).squaredNorm();
    const double sig2d = 1.0 / (1.0 + s.tau_psi * g2);
    auto [dmean, dvar] = d_conditional(s, l, k);
    CHECK(dvar == doctest::Approx(sig2d).epsilon(1e-12));
    for (Index j = 0; j < 4; ++j) {
      VectorXd lstar = l.col(j) - s.scores * s.basis.col(j) + s.basis(k, j) * s.scores.col(k);
      const double want = s.tau_psi * sig2d * s.scores.col(k).dot(lstar);
      CHECK(dmean[j] == doctest::Approx(want).epsilon(1e-10));
    }
  }
}

TEST_CASE("d conditional: prior fallback and least-squares limit") {
  RngStream rng(11);
  FactorState s;
  s.scores = random_matrix(5, 2, rng);
  s.basis = random_matrix(2, 3, rng);
  s.tau_psi = 2.0;
  MatrixXd l = random_matrix(5, 3, rng);

  FactorState zeroed = s;
  zeroed.scores.col(0).setZero();
  auto [mean, var] = d_conditional(zeroed, l, 0);
  CHECK(mean.isZero(0.0));
  CHECK(var == doctest::Approx(1.0));

  FactorState truth;
  truth.scores = random_matrix(5, 2, rng);
  truth.basis = random_matrix(2, 3, rng);
  truth.tau_psi = 1e10;
  MatrixXd clean = truth.scores * truth.basis;
  FactorState off = truth;
  off.basis.row(1) = random_matrix(1, 3, rng);
  auto [m2, v2] = d_conditional(off, clean, 1);
  CHECK((m2.transpose() - truth.basis.row(1)).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(v2 < 1e-9);
}

TEST_CASE("tau_psi conditional: exact rates and Frobenius oracle") {
  RngStream rng(13);
  FactorHyper h;
  h.beta0_tau_psi = 0.5;
  h.beta1_tau_psi = 0.25;
  FactorState s;
  s.scores = random_matrix(3, 2, rng);
  s.basis = random_matrix(2, 4, rng);
  MatrixXd exact = s.scores * s.basis;
  GammaParams g = tau_psi_conditional(s, exact, h);
  CHECK(g.shape == doctest::Approx(0.5 + 6.0));
  CHECK(g.rate == doctest::Approx(0.25));

  // ||L - GD||_F^2 = 4 gives rate beta1 + 2.
  MatrixXd shifted = exact;
  shifted(0, 0) += 2.0;
  GammaParams g2 = tau_psi_conditional(s, shifted, h);
  CHECK(g2.rate == doctest::Approx(0.25 + 2.0).epsilon(1e-12));

  MatrixXd l = random_matrix(3, 4, rng);
  double ss = 0;
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 4; ++j) {
      double rij = l(i, j);
      for (Index k = 0; k < 2; ++k) rij -= s.scores(i, k) * s.basis(k, j);
      ss += rij * rij;
    }
  GammaParams g3 = tau_psi_conditional(s, l, h);
  CHECK(g3.rate == doctest::Approx(0.25 + 0.5 * ss).epsilon(1e-12));
}

TEST_CASE("factor sweep recovers a noiseless low-rank L") {
  RngStream gen(17);
  MatrixXd g0 = random_matrix(6, 2, gen);
  MatrixXd d0 = random_matrix(2, 5, gen);
  MatrixXd l = g0 * d0;

  FactorHyper h;
  RngStream rng(2025, 3);
  FactorState s = init_factor_state(6, 3, 5, rng);  // K >= rank(L)
  MatrixXd mean_fit = MatrixXd::Zero(6, 5);
  const int iters = 2000, burn = 1000;
  for (int t = 0; t < iters; ++t) {
    factor_sweep(s, l, h, rng);
    if (t >= burn) mean_fit += s.scores * s.basis;
  }
  mean_fit /= (iters - burn);
  CHECK((mean_fit - l).norm() / l.norm() < 0.01);
}

TEST_CASE("fitted factors reproduce correlated column structure") {
  RngStream gen(19);
  // Two groups of perfectly correlated columns.
  VectorXd u = VectorXd::NullaryExpr(40, [&](Index) { return gen.normal(); });
  VectorXd v = VectorXd::NullaryExpr(40, [&](Index) { return gen.normal(); });
  MatrixXd l(40, 6);
  l << u, 2 * u, -u, v, 0.5 * v, v;

  FactorHyper h;
  RngStream rng(7, 7);
  FactorState s = init_factor_state(40, 2, 6, rng);
  MatrixXd mean_fit = MatrixXd::Zero(40, 6);
  const int iters = 1500, burn = 500;
  for (int t = 0; t < iters; ++t) {
    factor_sweep(s, l, h, rng);
    if (t >= burn) mean_fit += s.scores * s.basis;
  }
  mean_fit /= (iters - burn);

  auto corr = [](const VectorXd& a, const VectorXd& b) {
    const VectorXd ac = a.array() - a.mean(), bc = b.array() - b.mean();
    return ac.dot(bc) / (ac.norm() * bc.norm());
  };
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j) {
      const double want = corr(l.col(i), l.col(j));
      const double got = corr(mean_fit.col(i), mean_fit.col(j));
      CHECK(std::fabs(got - want) < 0.05);
    }
}

TEST_CASE("standardizer centers and scales columns") {
  RngStream rng(23);
  MatrixXd m = random_matrix(50, 3, rng, 4.0);
  m.col(1).array() += 10.0;
  Standardizer st = Standardizer::fit(m);
  MatrixXd z = st.apply(m);
  for (Index j = 0; j < 3; ++j) {
    CHECK(std::fabs(z.col(j).mean()) < 1e-12);
    const double sd = std::sqrt(z.col(j).squaredNorm() / 49 -
                                z.col(j).mean() * z.col(j).mean() * 50 / 49);
    CHECK(sd == doctest::Approx(1.0).epsilon(1e-10));
  }
  // Constant columns keep scale one rather than dividing by zero.
  MatrixXd flat = MatrixXd::Constant(10, 1, 3.0);
  Standardizer st2 = Standardizer::fit(flat);
  CHECK(st2.scale[0] == 1.0);
  CHECK(st2.apply(flat).col(0).isZero(0.0));
}
