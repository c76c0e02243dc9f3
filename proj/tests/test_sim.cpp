#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tprm/sim.hpp"

using namespace tprm;

TEST_CASE("accuracy: perfect, all wrong, half") {
  VectorXi y(4);
  y << 1, 0, 1, 0;
  VectorXd p(4);
  p << 0.9, 0.1, 0.8, 0.2;
  CHECK(accuracy(y, p) == doctest::Approx(1.0));
  p << 0.1, 0.9, 0.2, 0.8;
  CHECK(accuracy(y, p) == doctest::Approx(0.0));
  p << 0.9, 0.1, 0.2, 0.8;
  CHECK(accuracy(y, p) == doctest::Approx(0.5));
}

TEST_CASE("accuracy is invariant to relabeling y and flipping predictor signs") {
  RngStream rng(77);
  const Index n = 60;
  VectorXi y(n), yflip(n);
  VectorXd p(n), pflip(n);
  for (Index i = 0; i < n; ++i) {
    y[i] = rng.bernoulli(0.5) ? 1 : 0;
    yflip[i] = 1 - y[i];
    p[i] = rng.uniform();
    pflip[i] = 1.0 - p[i];
  }
  CHECK(accuracy(y, p) == doctest::Approx(accuracy(yflip, pflip)));
}

TEST_CASE("phantom generator: exact bases, determinism, noise scale") {
  PhantomData clean = gen_phantom_2d(6, 0.0, 42);
  for (Index i = 0; i < 6; ++i) {
    const Tensor& want = clean.y[i] ? clean.base1 : clean.base0;
    CHECK(clean.images[i].data() == want.data());
  }
  // Difference of the bases is the 6x6 amplitude-5 square at (20, 20).
  VectorXd diff = clean.base1.data() - clean.base0.data();
  CHECK(diff.cwiseAbs().maxCoeff() == doctest::Approx(5.0));
  CHECK((diff.array() != 0.0).count() == 36);
  CHECK((diff - 5.0 * clean.truth_mask.data()).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK(clean.truth_mask.at({17, 17}) == 1.0);
  CHECK(clean.truth_mask.at({22, 22}) == 1.0);
  CHECK(clean.truth_mask.at({16, 17}) == 0.0);
  CHECK(clean.truth_mask.at({23, 22}) == 0.0);

  PhantomData a = gen_phantom_2d(5, 5.0, 7);
  PhantomData b = gen_phantom_2d(5, 5.0, 7);
  for (Index i = 0; i < 5; ++i) CHECK(a.images[i].data() == b.images[i].data());

  // Empirical noise sd over ~2e5 pixels within 1% of 5.
  PhantomData noisy = gen_phantom_2d(200, 5.0, 11);
  double ss = 0;
  Index count = 0;
  for (Index i = 0; i < 200; ++i) {
    const Tensor& base = noisy.y[i] ? noisy.base1 : noisy.base0;
    const VectorXd resid = noisy.images[i].data() - base.data();
    ss += resid.squaredNorm();
    count += resid.size();
  }
  CHECK(std::sqrt(ss / count) == doctest::Approx(5.0).epsilon(0.01));
}

TEST_CASE("sim3d generator: effect scaling, support, determinism") {
  const Index n = 4;
  Sim3dData zero = gen_sim_3d(n, 0.0, 99);
  Sim3dData strong = gen_sim_3d(n, 65.0, 99);
  // Same seed: identical labels and noise, so image differences are exactly
  // c0 * y_i * X0; with c0 = 0 the groups share one mean surface.
  Tensor x0 = cp_reconstruct(detail::sim3d_effect_factors());
  const VectorXd x0n = x0.data() * (14.0 / x0.data().norm());
  for (Index i = 0; i < n; ++i) {
    CHECK(zero.y[i] == strong.y[i]);
    const VectorXd diff = strong.images[i].data() - zero.images[i].data();
    if (zero.y[i] == 0) {
      CHECK(diff.cwiseAbs().maxCoeff() == 0.0);
    } else {
      CHECK((diff - 65.0 * x0n).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
  // Mask is the support of X0; the raw first bump peaks at one before the
  // fixed-magnitude rescaling.
  CHECK(zero.truth_mask.dims() == Dims{64, 64, 50});
  CHECK(x0.at({17, 17, 17}) == doctest::Approx(1.0));
  CHECK(zero.truth_mask.at({17, 17, 17}) == 1.0);
  CHECK(zero.truth_mask.at({5, 5, 5}) == 0.0);
  // Clamped offset keeps the last bump inside the 50-deep mode.
  const CPFactors eff = detail::sim3d_effect_factors();
  CHECK(eff.factors[2](36 + 7, 3) == doctest::Approx(1.0));
  CHECK(eff.factors[2].col(3).head(37).isZero(0.0));

  Sim3dData again = gen_sim_3d(n, 65.0, 99);
  for (Index i = 0; i < n; ++i) CHECK(again.images[i].data() == strong.images[i].data());
}

TEST_CASE("pca features: planted rank one, orthogonality, validation") {
  RngStream rng(5);
  VectorXd u = VectorXd::NullaryExpr(12, [&](Index) { return rng.normal(); });
  std::vector<Tensor> images;
  for (Index i = 0; i < 30; ++i) {
    const double score = rng.normal(0, 3.0);
    images.push_back(Tensor::from_raw_unchecked({3, 4}, score * u));
  }
  MatrixXd scores = baseline_pca_features(images, 3);
  const double total = scores.squaredNorm();
  CHECK(scores.col(0).squaredNorm() / total > 0.999);
  // Score columns are orthogonal.
  for (Index a = 0; a < 3; ++a)
    for (Index b = a + 1; b < 3; ++b)
      CHECK(std::fabs(scores.col(a).dot(scores.col(b))) < 1e-8 * total);
  CHECK_THROWS_AS((void)baseline_pca_features(images, 0), std::invalid_argument);
}

TEST_CASE("stack_images round trips subject slices") {
  RngStream rng(9);
  std::vector<Tensor> images;
  for (int i = 0; i < 3; ++i)
    images.push_back(Tensor(Dims{2, 2}, VectorXd::NullaryExpr(4, [&](Index) {
      return rng.normal();
    })));
  Tensor stacked = stack_images(images);
  CHECK(stacked.dims() == Dims{2, 2, 3});
  for (Index i = 0; i < 3; ++i)
    for (Index r = 0; r < 2; ++r)
      for (Index c = 0; c < 2; ++c)
        CHECK(stacked.at({r, c, i}) == images[i].at({r, c}));
}

TEST_CASE("score_mask arithmetic and empty-mask convention") {
  VectorXd truth(4), sig(4);
  truth << 1, 1, 0, 0;
  sig << 1, 0, 1, 0;
  MaskScore s = score_mask(Tensor::from_raw_unchecked({4}, sig),
                           Tensor::from_raw_unchecked({4}, truth));
  CHECK(s.precision == doctest::Approx(0.5));
  CHECK(s.recall == doctest::Approx(0.5));
  sig.setZero();
  MaskScore empty = score_mask(Tensor::from_raw_unchecked({4}, sig),
                               Tensor::from_raw_unchecked({4}, truth));
  CHECK(empty.precision == 0.0);
  CHECK(empty.recall == 0.0);
  CHECK(empty.positives == 0);
}

TEST_CASE("probit selection run separates a planted coefficient") {
  RngStream gen(13);
  const Index n = 150, m = 8;
  MatrixXd f = MatrixXd::NullaryExpr(n, m, [&](Index, Index) { return gen.normal(); });
  VectorXd btrue = VectorXd::Zero(m);
  btrue[2] = 1.4;
  VectorXi y(n);
  for (Index i = 0; i < n; ++i)
    y[i] = gen.bernoulli(normal_cdf(f.row(i).dot(btrue))) ? 1 : 0;
  SelectHyper h;
  ProbitRunResult run = run_probit_selection(f, y, h, 800, 400, 12345);
  CHECK(run.inclusion[2] > 0.5);
  for (Index k = 0; k < m; ++k)
    if (k != 2) CHECK(run.inclusion[k] < 0.5);
  CHECK(run.model_accuracy > 0.7);
  CHECK(run.b_lower[2] > 0.0);  // interval excludes zero for the true signal
}

TEST_CASE("multiscale and localized tensors are seed deterministic") {
  CHECK(gen_multiscale_tensor(3).data() == gen_multiscale_tensor(3).data());
  CHECK(gen_localized_tensor(3).data() == gen_localized_tensor(3).data());
  CHECK(gen_multiscale_tensor(3).dims() == Dims{32, 32, 32});
}
