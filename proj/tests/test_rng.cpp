#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "tprm/rng.hpp"

using namespace tprm;

namespace {

// Analytic moments of N(mean, sd^2) truncated to a half line, via the
// standard hazard-function identities.
struct TruncMoments {
  double mean, var;
};

TruncMoments truncated_moments(double mean, double sd, HalfLine side) {
  // Lower truncation at 0 for the nonnegative side; mirrored otherwise.
  // With alpha the standardized bound, E[Z | Z >= alpha] = lam and
  // Var[Z | Z >= alpha] = 1 + alpha*lam - lam^2, lam = phi(alpha)/sf(alpha).
  const double alpha = (side == HalfLine::nonnegative) ? -mean / sd : mean / sd;
  const double lam = normal_pdf(alpha) / normal_sf(alpha);
  const double vz = 1.0 + alpha * lam - lam * lam;
  if (side == HalfLine::nonnegative) return {mean + sd * lam, sd * sd * vz};
  return {mean - sd * lam, sd * sd * vz};
}

}  // namespace

TEST_CASE("normal quantile: pinned values and cdf round trip") {
  CHECK(normal_quantile(0.5) == 0.0);
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.025) == doctest::Approx(-1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.841344746068543) == doctest::Approx(1.0).epsilon(1e-12));
  for (double p : {1e-12, 1e-9, 1e-4, 0.01, 0.3, 0.5, 0.7, 0.99, 1 - 1e-9}) {
    const double z = normal_quantile(p);
    CHECK(normal_cdf(z) == doctest::Approx(p).epsilon(1e-10));
  }
  // Symmetry only where 1-p carries full precision.
  for (double p : {1e-6, 0.01, 0.3, 0.45}) {
    CHECK(normal_quantile(1.0 - p) ==
          doctest::Approx(-normal_quantile(p)).epsilon(1e-9));
  }
  CHECK_THROWS_AS((void)normal_quantile(0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)normal_quantile(1.0), std::invalid_argument);
}

TEST_CASE("rng streams are deterministic and distinct") {
  RngStream a(42, 1), b(42, 1), c(42, 2);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 64; ++i) {
    const double ua = a.uniform(), ub = b.uniform(), uc = c.uniform();
    all_equal = all_equal && (ua == ub);
    any_diff = any_diff || (ua != uc);
    CHECK(ua > 0.0);
    CHECK(ua < 1.0);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("gamma and beta samplers match first two moments") {
  RngStream rng(1234);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.gamma(3.0, 2.0);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  CHECK(mean == doctest::Approx(1.5).epsilon(0.01));
  CHECK(var == doctest::Approx(0.75).epsilon(0.03));

  // Shape below one exercises the boost path; Beta(0.5, 0.5) is the bathtub.
  s = s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.beta(0.5, 0.5);
    s += x;
    s2 += x * x;
  }
  const double bmean = s / n, bvar = s2 / n - bmean * bmean;
  CHECK(bmean == doctest::Approx(0.5).epsilon(0.01));
  CHECK(bvar == doctest::Approx(0.125).epsilon(0.03));
}

TEST_CASE("truncated normal: half-normal mean at the origin") {
  RngStream rng(99);
  const int n = 200000;
  double s = 0;
  for (int i = 0; i < n; ++i) {
    const double x = sample_truncated_normal(0.0, 1.0, HalfLine::nonnegative, rng);
    CHECK(x >= 0.0);
    s += x;
  }
  CHECK(s / n == doctest::Approx(std::sqrt(2.0 / M_PI)).epsilon(0.01));
}

TEST_CASE("truncated normal: negligible truncation leaves the normal intact") {
  RngStream rng(100);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = sample_truncated_normal(10.0, 1.0, HalfLine::nonnegative, rng);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  CHECK(mean == doctest::Approx(10.0).epsilon(0.005));
  CHECK(var == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("truncated normal: analytic moments at hard bounds") {
  RngStream rng(101);
  const int n = 200000;
  for (double mu : {-3.0, 0.0, 3.0}) {
    const TruncMoments want = truncated_moments(mu, 1.0, HalfLine::nonnegative);
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      const double x = sample_truncated_normal(mu, 1.0, HalfLine::nonnegative, rng);
      CHECK(x >= 0.0);
      s += x;
      s2 += x * x;
    }
    const double mean = s / n, var = s2 / n - mean * mean;
    CHECK(mean == doctest::Approx(want.mean).epsilon(0.01));
    CHECK(var == doctest::Approx(want.var).epsilon(0.05));
  }
}

TEST_CASE("truncated normal: far-tail rejection branch") {
  RngStream rng(102);
  const int n = 100000;
  // Standardized bound 6 forces Robert's sampler.
  const TruncMoments want = truncated_moments(-6.0, 1.0, HalfLine::nonnegative);
  double s = 0;
  for (int i = 0; i < n; ++i) {
    const double x = sample_truncated_normal(-6.0, 1.0, HalfLine::nonnegative, rng);
    CHECK(x >= 0.0);
    s += x;
  }
  CHECK(s / n == doctest::Approx(want.mean).epsilon(0.01));
}

TEST_CASE("truncated normal: nonpositive side mirrors") {
  RngStream rng(103);
  const int n = 100000;
  const TruncMoments want = truncated_moments(3.0, 2.0, HalfLine::nonpositive);
  double s = 0;
  for (int i = 0; i < n; ++i) {
    const double x = sample_truncated_normal(3.0, 2.0, HalfLine::nonpositive, rng);
    CHECK(x <= 0.0);
    s += x;
  }
  CHECK(s / n == doctest::Approx(want.mean).epsilon(0.02));
  CHECK_THROWS_AS((void)sample_truncated_normal(0.0, 0.0, HalfLine::nonnegative, rng),
                  std::invalid_argument);
}
