#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tprm/pipeline.hpp"

using namespace tprm;

namespace {

// Toy stacked dataset: n subjects of 8x8 images, one planted block pattern
// whose amplitude tracks the class label, plus noise.
struct ToyData {
  Tensor x;
  VectorXi y;
};

ToyData make_toy(Index n, double signal, std::uint64_t seed, double noise_sd = 1.0) {
  RngStream rng(seed, 77);
  VectorXi y(n);
  for (Index i = 0; i < n; ++i) y[i] = rng.bernoulli(0.5) ? 1 : 0;
  VectorXd buf(8 * 8 * n);
  for (Index r = 0; r < 8; ++r)
    for (Index c = 0; c < 8; ++c)
      for (Index i = 0; i < n; ++i) {
        double v = rng.normal(0.0, noise_sd);
        // Pattern lives in the top-left 4x4 block.
        if (r < 4 && c < 4) v += signal * (y[i] ? 1.0 : -1.0);
        buf[(r * 8 + c) * n + i] = v;
      }
  return {Tensor(Dims{8, 8, n}, buf), y};
}

PipelineConfig quick_config() {
  PipelineConfig cfg;
  cfg.block_dims = {4, 4};
  cfg.rank = 2;
  cfg.factor_model = true;
  cfg.factor_rank = 4;
  cfg.iters = 60;
  cfg.burn_in = 20;
  cfg.thin = 2;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("fit: bookkeeping of chain lengths, shapes, and metadata") {
  ToyData data = make_toy(20, 1.0, 5);
  PipelineConfig cfg = quick_config();
  ChainStore chain = fit(data.x, data.y, std::nullopt, cfg);

  const Index kept = (cfg.iters - cfg.burn_in) / cfg.thin;
  CHECK(chain.meta.at("kept_draws").get<Index>() == kept);
  CHECK(chain.meta.at("partitions").get<Index>() == 4);
  CHECK(chain.meta.at("coef_count").get<Index>() == 4);
  for (const auto& name : chain.names()) {
    if (name.rfind("posterior_", 0) == 0) {
      CHECK(chain.draw_count(name) == 1);
    } else {
      CHECK(chain.draw_count(name) == kept);
    }
  }
  CHECK(chain.shape("partition_0000_A1") == Dims{4, 2});
  CHECK(chain.shape("coef_b") == Dims{4});
  CHECK(chain.shape("feature_scale") == Dims{8});
  CHECK(chain.has("factor_basis"));
  CHECK(!chain.has("coef_gamma"));  // no clinical covariates

  // Dimension mismatches are rejected up front.
  VectorXi bad_y = VectorXi::Zero(7);
  CHECK_THROWS_AS((void)fit(data.x, bad_y, std::nullopt, cfg), std::invalid_argument);
  PipelineConfig bad_cfg = cfg;
  bad_cfg.burn_in = cfg.iters;
  CHECK_THROWS_AS((void)fit(data.x, data.y, std::nullopt, bad_cfg), std::invalid_argument);
  bad_cfg = cfg;
  bad_cfg.thin = 7;  // (iters - burn_in) not a multiple
  CHECK_THROWS_AS((void)fit(data.x, data.y, std::nullopt, bad_cfg), std::invalid_argument);
  VectorXi nonbinary = data.y;
  nonbinary[3] = 2;
  CHECK_THROWS_AS((void)fit(data.x, nonbinary, std::nullopt, cfg), std::invalid_argument);
}

TEST_CASE("fit is seed-deterministic") {
  ToyData data = make_toy(16, 0.8, 9);
  PipelineConfig cfg = quick_config();
  cfg.iters = 40;
  cfg.burn_in = 10;
  cfg.thin = 1;
  ChainStore a = fit(data.x, data.y, std::nullopt, cfg);
  ChainStore b = fit(data.x, data.y, std::nullopt, cfg);
  REQUIRE(a.names() == b.names());
  for (const auto& name : a.names()) CHECK(a.matrix(name) == b.matrix(name));
}

TEST_CASE("fit accepts clinical covariates and records gamma draws") {
  ToyData data = make_toy(18, 0.8, 13);
  RngStream rng(3);
  MatrixXd z = MatrixXd::NullaryExpr(18, 2, [&](Index, Index) { return rng.normal(); });
  PipelineConfig cfg = quick_config();
  cfg.iters = 30;
  cfg.burn_in = 10;
  cfg.thin = 1;
  ChainStore chain = fit(data.x, data.y, z, cfg);
  CHECK(chain.has("coef_gamma"));
  CHECK(chain.shape("coef_gamma") == Dims{2});
  CHECK(chain.matrix("coef_gamma").allFinite());
}

TEST_CASE("screen: zero, strong, and planted mixtures") {
  RngStream rng(21);
  auto make_state = [&](double scale) {
    CPState s;
    s.factors.weights = VectorXd::Ones(2);
    s.factors.factors = {MatrixXd::Ones(3, 2)};
    s.factors.subject =
        MatrixXd::NullaryExpr(5, 2, [&](Index, Index) { return scale * rng.normal(); });
    return s;
  };
  CPState zero = make_state(0.0);
  zero.factors.subject->setZero();
  CPState strong = make_state(1.0);
  std::vector<CPState> states{zero, strong, make_state(0.0), make_state(2.0)};
  states[2].factors.subject->setZero();
  const auto survivors = screen(states, 1e-8);
  CHECK(survivors == std::vector<Index>{1, 3});
}

TEST_CASE("fit with screening drops flat partitions end to end") {
  // Signal lives in block 0 (rows<4, cols<4); blocks 1 and 2 are exactly zero.
  const Index n = 16;
  RngStream rng(31, 4);
  VectorXi y(n);
  for (Index i = 0; i < n; ++i) y[i] = (i % 2 == 0) ? 1 : 0;
  VectorXd buf = VectorXd::Zero(8 * 8 * n);
  for (Index r = 0; r < 8; ++r)
    for (Index c = 0; c < 8; ++c)
      for (Index i = 0; i < n; ++i) {
        if (r < 4 && c < 4)
          buf[(r * 8 + c) * n + i] = (y[i] ? 2.0 : -2.0) + rng.normal(0, 0.3);
        if (r >= 4 && c >= 4) buf[(r * 8 + c) * n + i] = rng.normal(0, 1.0);
      }
  Tensor x(Dims{8, 8, n}, buf);

  PipelineConfig cfg = quick_config();
  cfg.factor_model = false;
  cfg.screening = true;
  cfg.screen_tol = 1e-2;  // above the Monte Carlo floor of a null partition
  cfg.iters = 80;
  cfg.burn_in = 40;
  cfg.thin = 1;
  cfg.seed = 3;
  ChainStore chain = fit(x, y, std::nullopt, cfg);
  const auto survivors = chain.meta.at("survivors").get<std::vector<Index>>();
  CHECK(survivors == std::vector<Index>{0, 3});
  CHECK(chain.has("partition_0000_lambda"));
  CHECK(!chain.has("partition_0001_lambda"));
  CHECK(chain.meta.at("coef_count").get<Index>() == 4);  // 2 survivors x R=2
}

TEST_CASE("projection: single-draw no-factor identity with cp_reconstruct") {
  // Hand-build a chain holding one draw so the projection must equal the
  // rank-R reconstruction with the subject mode replaced by b.
  RngStream rng(41);
  const Index rank = 2;
  MatrixXd a1 = MatrixXd::NullaryExpr(3, rank, [&](Index, Index) { return rng.normal(); });
  MatrixXd a2 = MatrixXd::NullaryExpr(4, rank, [&](Index, Index) { return rng.normal(); });
  VectorXd lambda(rank), b(rank);
  lambda << 1.5, -0.7;
  b << 0.3, 2.0;

  ChainStore chain;
  chain.register_series("partition_0000_lambda", {rank});
  chain.register_series("partition_0000_tau", {1});
  chain.register_series("partition_0000_A1", {3, rank});
  chain.register_series("partition_0000_A2", {4, rank});
  chain.register_series("feature_mean", {rank});
  chain.register_series("feature_scale", {rank});
  chain.register_series("coef_b", {rank});
  chain.append_vector("partition_0000_lambda", lambda);
  chain.append_scalar("partition_0000_tau", 1.0);
  chain.append_matrix("partition_0000_A1", a1);
  chain.append_matrix("partition_0000_A2", a2);
  chain.append_vector("feature_mean", VectorXd::Zero(rank));
  chain.append_vector("feature_scale", VectorXd::Ones(rank));
  chain.append_vector("coef_b", b);
  chain.meta = {{"spatial_dims", Dims{3, 4}},
                {"spatial_blocks", Dims{3, 4}},
                {"factor_model", false},
                {"rank", rank},
                {"survivors", std::vector<Index>{0}},
                {"config", {{"pad_blocks", false}}}};

  ProjectionResult proj = projection(chain);
  CPFactors f;
  f.weights = lambda.cwiseProduct(b);
  f.factors = {a1, a2};
  Tensor want = cp_reconstruct(f);
  CHECK((proj.mean.data() - want.data()).lpNorm<Eigen::Infinity>() < 1e-12);
  // One draw: the interval collapses onto the value; significance marks
  // exactly the nonzero voxels.
  CHECK(proj.lower.data() == proj.mean.data());
  for (Index v = 0; v < want.size(); ++v)
    CHECK(proj.significance.data()[v] == (want.data()[v] != 0.0 ? 1.0 : 0.0));
}

TEST_CASE("projection: zero coefficients give a zero, insignificant map") {
  ToyData data = make_toy(14, 0.0, 51);
  PipelineConfig cfg = quick_config();
  cfg.factor_model = false;
  cfg.iters = 40;
  cfg.burn_in = 20;
  cfg.thin = 1;
  ChainStore chain = fit(data.x, data.y, std::nullopt, cfg);
  // Overwrite the recorded coefficients with zeros: projection must vanish.
  ChainStore zeroed;
  zeroed.meta = chain.meta;
  for (const auto& name : chain.names()) {
    zeroed.register_series(name, chain.shape(name));
    MatrixXd draws = chain.matrix(name);
    if (name == "coef_b") draws.setZero();
    for (Index t = 0; t < draws.rows(); ++t) {
      const VectorXd row = draws.row(t);
      zeroed.append(name, row.data(), row.size());
    }
  }
  ProjectionResult proj = projection(zeroed);
  CHECK(proj.mean.data().isZero(0.0));
  CHECK(proj.significance.data().isZero(0.0));
}

TEST_CASE("cross validation: reproducibility and chance level on null data") {
  ToyData data = make_toy(40, 0.0, 61);
  PipelineConfig cfg = quick_config();
  cfg.iters = 60;
  cfg.burn_in = 30;
  cfg.thin = 1;
  CrossValidationResult r1 = cross_validate(data.x, data.y, std::nullopt, cfg, 4);
  CrossValidationResult r2 = cross_validate(data.x, data.y, std::nullopt, cfg, 4);
  CHECK(r1.fold_accuracy == r2.fold_accuracy);
  CHECK(r1.mean_accuracy > 0.25);
  CHECK(r1.mean_accuracy < 0.75);
  CHECK_THROWS_AS((void)cross_validate(data.x, data.y, std::nullopt, cfg, 1),
                  std::invalid_argument);
}

TEST_CASE("cross validation separates a wide-margin construction") {
  ToyData data = make_toy(40, 2.5, 71, 0.5);
  PipelineConfig cfg = quick_config();
  // Feature count is manageable here, so run without the factor layer, the
  // same regime the 2-D experiments use.
  cfg.factor_model = false;
  cfg.iters = 400;
  cfg.burn_in = 200;
  cfg.thin = 1;
  CrossValidationResult r = cross_validate(data.x, data.y, std::nullopt, cfg, 4);
  CHECK(r.mean_accuracy >= 0.95);

  // In-sample prediction on the training fit is also near perfect.
  ChainStore chain = fit(data.x, data.y, std::nullopt, cfg);
  VectorXd p = predict_probs(chain, data.x, std::nullopt);
  double correct = 0;
  for (Index i = 0; i < p.size(); ++i)
    correct += ((p[i] > 0.5 ? 1 : 0) == data.y[i]) ? 1.0 : 0.0;
  CHECK(correct / p.size() >= 0.95);
}

TEST_CASE("cross validation never leaks test subjects into training") {
  ToyData data = make_toy(24, 1.5, 81, 0.5);
  PipelineConfig cfg = quick_config();
  cfg.iters = 40;
  cfg.burn_in = 20;
  cfg.thin = 1;
  const Index folds = 3;
  const auto fold_of = cv_fold_assignment(data.y, folds, cfg.seed);

  // Poison fold 0's test subjects with NaN sentinels. Any leak into the
  // training phase trips the samplers' finiteness guards and throws.
  VectorXd buf = data.x.data();
  const Index n = 24, voxels = 64;
  for (Index i = 0; i < n; ++i)
    if (fold_of[i] == 0)
      for (Index v = 0; v < voxels; ++v)
        buf[v * n + i] = std::numeric_limits<double>::quiet_NaN();
  Tensor poisoned = Tensor::from_raw_unchecked(data.x.dims(), buf);

  CrossValidationResult r;
  CHECK_NOTHROW(r = cross_validate(poisoned, data.y, std::nullopt, cfg, folds, 0));
  CHECK(std::isfinite(r.fold_accuracy[0]));
  CHECK(r.fold_accuracy[0] >= 0.0);
  CHECK(r.fold_accuracy[0] <= 1.0);

  // Poisoning a training subject of fold 0 must trip the guard instead.
  VectorXd buf2 = data.x.data();
  Index train_subject = -1;
  for (Index i = 0; i < n; ++i)
    if (fold_of[i] != 0) {
      train_subject = i;
      break;
    }
  for (Index v = 0; v < voxels; ++v)
    buf2[v * n + train_subject] = std::numeric_limits<double>::quiet_NaN();
  Tensor poisoned_train = Tensor::from_raw_unchecked(data.x.dims(), buf2);
  CHECK_THROWS_AS(
      (void)cross_validate(poisoned_train, data.y, std::nullopt, cfg, folds, 0),
      NumericError);
}
