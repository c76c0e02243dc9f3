#pragma once

#include "tprm/cp_als.hpp"
#include "tprm/pipeline.hpp"

namespace tprm {

/// Fraction of correct 0.5-thresholded classifications.
inline double accuracy(const VectorXi& y, const VectorXd& p_hat) {
  if (y.size() != p_hat.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (y.size() == 0) throw std::invalid_argument("accuracy: empty input");
  double correct = 0;
  for (Index i = 0; i < y.size(); ++i)
    correct += ((p_hat[i] > 0.5 ? 1 : 0) == y[i]) ? 1.0 : 0.0;
  return correct / static_cast<double>(y.size());
}

/// Stacks per-subject images into one tensor with the subject mode last.
inline Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw std::invalid_argument("stack: no images");
  const Dims& sp = images[0].dims();
  const Index n = static_cast<Index>(images.size());
  const Index voxels = images[0].size();
  Dims dims = sp;
  dims.push_back(n);
  VectorXd buf(voxels * n);
  for (Index i = 0; i < n; ++i) {
    if (images[i].dims() != sp) throw std::invalid_argument("stack: image dims differ");
    for (Index v = 0; v < voxels; ++v) buf[v * n + i] = images[i].data()[v];
  }
  return Tensor::from_raw_unchecked(std::move(dims), std::move(buf));
}

// ---------------------------------------------------------------------------
// Generators

struct PhantomData {
  VectorXi y;
  std::vector<Tensor> images;  // 32 x 32 each
  Tensor truth_mask;           // 1 on the group-difference support
  Tensor base0, base1;         // X0(0) and X0(1)
};

namespace detail {

// Smooth 2-D base with a slowly decaying spectrum: rotated anisotropic bumps,
// a faint ripple, and a ramp. Deliberately not low rank, like a real image
// slice, and kept dim around the effect region so the group difference is the
// only structure living there.
inline double phantom_base_value(double r, double c) {
  auto bump = [](double r, double c, double cr, double cc, double sr, double sc,
                 double angle, double amp) {
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double u = ca * (r - cr) + sa * (c - cc);
    const double v = -sa * (r - cr) + ca * (c - cc);
    return amp * std::exp(-0.5 * (u * u / (sr * sr) + v * v / (sc * sc)));
  };
  // The background is exactly zero on a disc around the effect site (20, 20)
  // and fades in beyond it: the group difference is the only structure living
  // in its block, like a lesion in an otherwise quiet region.
  const double d = std::sqrt((r - 20) * (r - 20) + (c - 20) * (c - 20));
  const double x = std::min(std::max((d - 7.0) / 5.0, 0.0), 1.0);
  const double window = x * x * (3.0 - 2.0 * x);
  return window *
         (bump(r, c, 5, 9, 4, 2.5, 0.5, 16.0) + bump(r, c, 9, 27, 3, 5, -0.7, 13.0) +
          bump(r, c, 27, 7, 5, 3, 0.9, 12.0) + bump(r, c, 28, 29, 2, 3, -0.3, 10.0) +
          bump(r, c, 3, 18, 2, 6, 1.2, 11.0) + bump(r, c, 18, 3, 6, 2, -1.1, 11.0) +
          bump(r, c, 11, 12, 2, 2, 0.2, 9.0) + bump(r, c, 30, 12, 2, 4, 0.8, 8.0) +
          1.2 * std::sin(0.55 * r + 0.9 * c) * std::cos(0.35 * r - 0.6 * c + 0.7) +
          0.8 * std::sin(1.1 * r - 0.45 * c + 0.4) + 0.06 * (r + c));
}

}  // namespace detail

/// 2-D phantom: y ~ Bernoulli(1/2); X_i = X0(y_i) + N(0, noise_sd^2) noise.
/// The group difference X0(1) - X0(0) is a 6x6 square of amplitude 5 centered
/// at (20, 20); the emitted mask is its support.
inline PhantomData gen_phantom_2d(Index n, double noise_sd, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("phantom: n must be >= 1");
  if (!(noise_sd >= 0)) throw std::invalid_argument("phantom: bad noise sd");
  const Index dim = 32;
  VectorXd base(dim * dim), mask(dim * dim);
  for (Index r = 0; r < dim; ++r)
    for (Index c = 0; c < dim; ++c) {
      base[r * dim + c] = detail::phantom_base_value(r, c);
      mask[r * dim + c] = (r >= 17 && r < 23 && c >= 17 && c < 23) ? 1.0 : 0.0;
    }
  VectorXd base1 = base + 5.0 * mask;

  PhantomData out;
  out.truth_mask = Tensor::from_raw_unchecked({dim, dim}, mask);
  out.base0 = Tensor::from_raw_unchecked({dim, dim}, base);
  out.base1 = Tensor::from_raw_unchecked({dim, dim}, base1);
  out.y.resize(n);
  out.images.reserve(n);
  RngStream label_rng(seed, 101), noise_rng(seed, 102);
  for (Index i = 0; i < n; ++i) {
    out.y[i] = label_rng.bernoulli(0.5) ? 1 : 0;
    VectorXd img = out.y[i] ? base1 : base;
    for (Index v = 0; v < img.size(); ++v) img[v] += noise_rng.normal(0.0, noise_sd);
    out.images.push_back(Tensor::from_raw_unchecked({dim, dim}, std::move(img)));
  }
  return out;
}

struct Sim3dData {
  VectorXi y;
  std::vector<Tensor> images;  // 64 x 64 x 50 each
  Tensor truth_mask;           // support of the rank-4 effect tensor
};

namespace detail {

// Fixed smooth 3-D template in [0, 250]: three rotated Gaussian bumps whose
// cross terms keep the template away from exact low CP rank.
inline Tensor sim3d_template() {
  const Dims dims{64, 64, 50};
  VectorXd buf(dims_product(dims));
  auto bump = [](double x, double y, double z, const double c[3], const double s[3],
                 double rot) {
    const double u = std::cos(rot) * (x - c[0]) + std::sin(rot) * (y - c[1]);
    const double v = -std::sin(rot) * (x - c[0]) + std::cos(rot) * (y - c[1]);
    const double w = (z - c[2]) + 0.3 * u;
    return std::exp(-0.5 * (u * u / (s[0] * s[0]) + v * v / (s[1] * s[1]) +
                            w * w / (s[2] * s[2])));
  };
  // Bump centers sit away from the effect tensor's diagonal support so the
  // template structure carries no class signal.
  const double c1[3] = {48, 12, 12}, s1[3] = {9, 6, 7};
  const double c2[3] = {14, 48, 36}, s2[3] = {7, 10, 8};
  const double c3[3] = {52, 52, 14}, s3[3] = {8, 7, 6};
  double maxv = 0;
  Index at = 0;
  for (Index x = 0; x < 64; ++x)
    for (Index y = 0; y < 64; ++y)
      for (Index z = 0; z < 50; ++z, ++at) {
        const double v = 1.0 * bump(x, y, z, c1, s1, 0.5) + 0.8 * bump(x, y, z, c2, s2, -0.7) +
                         0.9 * bump(x, y, z, c3, s3, 0.3);
        buf[at] = v;
        maxv = std::max(maxv, v);
      }
  buf *= 250.0 / maxv;
  return Tensor::from_raw_unchecked(dims, std::move(buf));
}

// Rank-4 effect tensor with sine-arc factor columns: column r of each mode
// carries sin(j pi / 14), j = 1..13, starting at offset c_r (clamped to fit).
inline CPFactors sim3d_effect_factors() {
  const Index offsets[4] = {10, 22, 34, 46};
  CPFactors f;
  f.weights = VectorXd::Ones(4);
  for (Index jd : {Index(64), Index(64), Index(50)}) {
    MatrixXd a = MatrixXd::Zero(jd, 4);
    for (Index r = 0; r < 4; ++r) {
      const Index c = std::min(offsets[r], jd - 14);
      for (Index j = 1; j <= 13; ++j) a(c + j, r) = std::sin(j * M_PI / 14.0);
    }
    f.factors.push_back(std::move(a));
  }
  return f;
}

}  // namespace detail

/// 3-D study data: X_i = G0 + c0 y_i X0 + N(0, 70^2) noise, with G0 the fixed
/// template and X0 the rank-4 sine-bump effect tensor, rescaled to a fixed
/// total magnitude ||X0||_F = effect_norm. The raw sine products would give
/// an effect so strong that every feature extractor separates the groups
/// perfectly, which contradicts the regime the study design targets; the
/// rescaling keeps the bump shapes and offsets while restoring a contrast
/// where the extraction method matters.
inline Sim3dData gen_sim_3d(Index n, double c0, std::uint64_t seed,
                            double effect_norm = 14.0) {
  if (n < 1) throw std::invalid_argument("sim3d: n must be >= 1");
  if (!(effect_norm > 0)) throw std::invalid_argument("sim3d: bad effect norm");
  const Tensor g0 = detail::sim3d_template();
  Tensor x0 = cp_reconstruct(detail::sim3d_effect_factors());
  x0 = Tensor::from_raw_unchecked(x0.dims(),
                                  VectorXd(x0.data() * (effect_norm / x0.data().norm())));
  VectorXd mask(x0.size());
  for (Index v = 0; v < x0.size(); ++v) mask[v] = x0.data()[v] != 0.0 ? 1.0 : 0.0;

  Sim3dData out;
  out.truth_mask = Tensor::from_raw_unchecked(x0.dims(), std::move(mask));
  out.y.resize(n);
  out.images.reserve(n);
  RngStream label_rng(seed, 201), noise_rng(seed, 202);
  const double noise_sd = 70.0;
  for (Index i = 0; i < n; ++i) {
    out.y[i] = label_rng.bernoulli(0.5) ? 1 : 0;
    VectorXd img = g0.data();
    if (out.y[i]) img += c0 * x0.data();
    for (Index v = 0; v < img.size(); ++v) img[v] += noise_rng.normal(0.0, noise_sd);
    out.images.push_back(Tensor::from_raw_unchecked(x0.dims(), std::move(img)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Baseline feature extractors

/// Top-R principal component scores of row observations (U Sigma from the
/// Gram eigendecomposition of the centered rows).
inline MatrixXd pca_scores(const MatrixXd& rows, Index r) {
  if (r < 1) throw std::invalid_argument("pca: need r >= 1");
  if (r > std::min(rows.rows(), rows.cols()))
    throw std::invalid_argument("pca: r exceeds the data rank bound");
  const MatrixXd centered = rows.rowwise() - rows.colwise().mean();
  const MatrixXd gram = centered * centered.transpose();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram);
  const Index n = rows.rows();
  MatrixXd scores(n, r);
  for (Index k = 0; k < r; ++k) {
    const double ev = std::max(eig.eigenvalues()[n - 1 - k], 0.0);
    scores.col(k) = eig.eigenvectors().col(n - 1 - k) * std::sqrt(ev);
  }
  return scores;
}

/// Vectorized-PCA baseline: flatten images to rows, center, top-R scores.
inline MatrixXd baseline_pca_features(const std::vector<Tensor>& images, Index r) {
  if (images.empty()) throw std::invalid_argument("pca features: no images");
  const Index n = static_cast<Index>(images.size());
  MatrixXd rows(n, images[0].size());
  for (Index i = 0; i < n; ++i) {
    if (images[i].dims() != images[0].dims())
      throw std::invalid_argument("pca features: image dims differ");
    rows.row(i) = images[i].data();
  }
  return pca_scores(rows, r);
}

/// Subject scores of a non-partitioned CP-ALS fit on the stacked tensor,
/// weight-scaled so magnitudes carry component strength.
inline MatrixXd tals_features_stacked(const Tensor& stacked, Index r) {
  const CpAlsResult res = cp_als(stacked, r, 40, 1e-5);
  return res.factors.factors.back() * res.factors.weights.asDiagonal();
}

inline MatrixXd baseline_tals_features(const std::vector<Tensor>& images, Index r) {
  return tals_features_stacked(stack_images(images), r);
}

// ---------------------------------------------------------------------------
// Standalone probit-selection runs on a fixed feature matrix

struct ProbitRunResult {
  MatrixXd b_draws;      // retained draws x features
  MatrixXd gamma_draws;  // retained draws x q
  VectorXd inclusion;    // mean of delta
  VectorXd b_mean, b_lower, b_upper;
  double model_accuracy = 0.0;  // in-sample, 0/1 loss at 0.5 on Phi(F b_mean)
};

/// Spike-and-slab probit on fixed features, swept after a slab warm start. Model accuracy follows the posterior-mean coefficients.
inline ProbitRunResult run_probit_selection(const MatrixXd& features, const VectorXi& y,
                                            const SelectHyper& h, Index iters, Index burn,
                                            std::uint64_t seed,
                                            const std::optional<MatrixXd>& z = std::nullopt) {
  if (features.rows() != y.size()) throw std::invalid_argument("probit run: size mismatch");
  if (burn < 0 || burn >= iters) throw std::invalid_argument("probit run: need burn < iters");
  const Index n = y.size(), m = features.cols();
  const MatrixXd zmat = z ? *z : MatrixXd(n, 0);
  RngStream rng(seed, 301);
  RegressionState s = init_regression_state(n, m, zmat.cols());
  warm_start_coefficients(s, y, zmat, features, h, rng);

  const Index kept = iters - burn;
  ProbitRunResult out;
  out.b_draws.resize(kept, m);
  out.gamma_draws.resize(kept, zmat.cols());
  VectorXd incl_sum = VectorXd::Zero(m);
  for (Index t = 0; t < iters; ++t) {
    probit_sweep(s, y, zmat, features, h, rng);
    if (t >= burn) {
      out.b_draws.row(t - burn) = s.coef.transpose();
      out.gamma_draws.row(t - burn) = s.gamma.transpose();
      for (Index k = 0; k < m; ++k) incl_sum[k] += s.include[k];
    }
  }
  out.inclusion = incl_sum / static_cast<double>(kept);
  out.b_mean = out.b_draws.colwise().mean();
  out.b_lower.resize(m);
  out.b_upper.resize(m);
  std::vector<double> col(kept);
  for (Index k = 0; k < m; ++k) {
    for (Index t = 0; t < kept; ++t) col[t] = out.b_draws(t, k);
    std::sort(col.begin(), col.end());
    auto quant = [&](double p) {
      const double hh = p * (kept - 1);
      const Index lo = static_cast<Index>(hh);
      if (lo + 1 >= kept) return col.back();
      return col[lo] + (hh - lo) * (col[lo + 1] - col[lo]);
    };
    out.b_lower[k] = quant(0.025);
    out.b_upper[k] = quant(0.975);
  }
  const VectorXd gamma_mean = out.gamma_draws.colwise().mean();
  VectorXd p_hat(n);
  const VectorXd eta = features * out.b_mean + zmat * gamma_mean;
  for (Index i = 0; i < n; ++i) p_hat[i] = normal_cdf(eta[i]);
  out.model_accuracy = accuracy(y, p_hat);
  return out;
}

// ---------------------------------------------------------------------------
// Experiment drivers

struct MaskScore {
  double precision = 0.0, recall = 0.0;
  Index positives = 0;
};

inline MaskScore score_mask(const Tensor& significance, const Tensor& truth) {
  if (!significance.same_shape(truth)) throw std::invalid_argument("mask: shape mismatch");
  double tp = 0, fp = 0, fn = 0;
  for (Index v = 0; v < truth.size(); ++v) {
    const bool sig = significance.data()[v] != 0.0;
    const bool real = truth.data()[v] != 0.0;
    tp += (sig && real) ? 1 : 0;
    fp += (sig && !real) ? 1 : 0;
    fn += (!sig && real) ? 1 : 0;
  }
  MaskScore s;
  s.positives = static_cast<Index>(tp + fp);
  s.precision = (tp + fp) > 0 ? tp / (tp + fp) : 0.0;
  s.recall = (tp + fn) > 0 ? tp / (tp + fn) : 0.0;
  return s;
}

struct DecompRow {
  std::string method;  // bayes | als | partition
  Index rank;
  double rmse;
};

namespace detail {

// Posterior-mean reconstruction from a decomposition-only chain.
inline Tensor gibbs_mean_reconstruction(const Tensor& x, const CPHyper& h, Index iters,
                                        Index burn, RngStream& rng) {
  CPState state = init_cp_state(x.dims(), std::nullopt, h, rng);
  CpBlockSampler sampler(x, h, false);
  VectorXd acc = VectorXd::Zero(x.size());
  Index kept = 0;
  for (Index t = 0; t < iters; ++t) {
    sampler.sweep(state, rng);
    if (t >= burn) {
      acc += cp_reconstruct(state.factors).data();
      ++kept;
    }
  }
  return Tensor::from_raw_unchecked(x.dims(), acc / static_cast<double>(kept));
}

}  // namespace detail

/// Synthetic 32^3 tensor with structure at several scales: planted rank-one
/// components with staggered weights plus white noise.
inline Tensor gen_multiscale_tensor(std::uint64_t seed, double noise_sd = 2.0) {
  RngStream rng(seed, 401);
  const Dims dims{32, 32, 32};
  const double weights[8] = {200, 170, 140, 120, 60, 50, 45, 40};
  CPFactors f;
  f.weights = Eigen::Map<const VectorXd>(weights, 8);
  for (int d = 0; d < 3; ++d) {
    MatrixXd a(32, 8);
    for (Index r = 0; r < 8; ++r) {
      for (Index j = 0; j < 32; ++j) a(j, r) = rng.normal();
      a.col(r).normalize();
    }
    f.factors.push_back(std::move(a));
  }
  VectorXd buf = cp_reconstruct(f).data();
  for (Index v = 0; v < buf.size(); ++v) buf[v] += rng.normal(0.0, noise_sd);
  return Tensor::from_raw_unchecked(dims, std::move(buf));
}

/// Synthetic 32^3 image whose structure is spatially localized: each 16^3
/// octant carries its own rank-2 pattern, so a partitioned decomposition at
/// matched rank has the advantage.
inline Tensor gen_localized_tensor(std::uint64_t seed, double noise_sd = 2.0) {
  RngStream rng(seed, 402);
  const Dims dims{32, 32, 32};
  const PartitionGrid grid(dims, {16, 16, 16});
  std::vector<Tensor> blocks;
  for (Index s = 0; s < grid.block_count(); ++s) {
    CPFactors f;
    f.weights = VectorXd::Zero(2);
    f.weights << 150.0 + 20.0 * rng.uniform(), 90.0 + 15.0 * rng.uniform();
    for (int d = 0; d < 3; ++d) {
      MatrixXd a(16, 2);
      for (Index r = 0; r < 2; ++r) {
        for (Index j = 0; j < 16; ++j) a(j, r) = rng.normal();
        a.col(r).normalize();
      }
      f.factors.push_back(std::move(a));
    }
    blocks.push_back(cp_reconstruct(f));
  }
  VectorXd buf = unpartition(blocks, grid).data();
  for (Index v = 0; v < buf.size(); ++v) buf[v] += rng.normal(0.0, noise_sd);
  return Tensor::from_raw_unchecked(dims, std::move(buf));
}

/// Decomposition comparison at ranks {2, 4, 8}: Bayesian CP vs ALS on a
/// multiscale tensor (whole image) and partitioned-vs-not on a localized one.
inline std::vector<DecompRow> run_decomp_experiment(std::uint64_t seed, Index iters = 2000,
                                                    Index burn = 1000) {
  std::vector<DecompRow> rows;
  const Tensor multi = gen_multiscale_tensor(seed);
  for (Index rank : {2, 4, 8}) {
    CPHyper h;
    h.rank = rank;
    RngStream rng(seed, 500 + static_cast<std::uint64_t>(rank));
    const Tensor recon = detail::gibbs_mean_reconstruction(multi, h, iters, burn, rng);
    rows.push_back({"bayes", rank, rmse(multi, recon)});
    const CpAlsResult als = cp_als(multi, rank, 500, 1e-9);
    rows.push_back({"als", rank, rmse(multi, cp_reconstruct(als.factors))});
  }

  const Tensor localized = gen_localized_tensor(seed + 1);
  const PartitionGrid grid({32, 32, 32}, {16, 16, 16});
  for (Index rank : {2, 4, 8}) {
    CPHyper h;
    h.rank = rank;
    // Whole image at rank R.
    RngStream rng(seed, 600 + static_cast<std::uint64_t>(rank));
    const Tensor whole = detail::gibbs_mean_reconstruction(localized, h, iters, burn, rng);
    rows.push_back({"bayes_whole", rank, rmse(localized, whole)});
    // Partitioned at matched per-block rank R.
    std::vector<Tensor> blocks = partition(localized, grid);
    std::vector<Tensor> recon_blocks(blocks.size(), Tensor());
    std::vector<RngStream> streams;
    for (Index s = 0; s < grid.block_count(); ++s)
      streams.emplace_back(seed, 700 + static_cast<std::uint64_t>(rank) * 64 +
                                     static_cast<std::uint64_t>(s));
    parallel_for(grid.block_count(), [&](Index s) {
      recon_blocks[s] = detail::gibbs_mean_reconstruction(blocks[s], h, iters, burn, streams[s]);
    });
    rows.push_back({"partition", rank, rmse(localized, unpartition(recon_blocks, grid))});
  }
  return rows;
}

struct PhantomVariant {
  std::string method;  // tprm_s16 | tprm_s1 | fpca
  Tensor projection_mean, lower, upper, significance;
  MaskScore score;
};

struct PhantomExperiment {
  Tensor truth_mask;
  std::vector<PhantomVariant> variants;
};

namespace detail {

// Projection of probit coefficients through fixed basis images (for the
// vectorized-PCA baseline): per draw, sum_k b_k / scale_k * image_k.
inline PhantomVariant project_through_images(const std::string& name,
                                             const MatrixXd& b_draws,
                                             const VectorXd& scales,
                                             const std::vector<VectorXd>& basis_images,
                                             const Dims& dims) {
  const Index voxels = dims_product(dims);
  const Index draws = b_draws.rows();
  MatrixXd proj(voxels, draws);
  for (Index t = 0; t < draws; ++t) {
    VectorXd img = VectorXd::Zero(voxels);
    for (std::size_t k = 0; k < basis_images.size(); ++k)
      img += (b_draws(t, static_cast<Index>(k)) / scales[static_cast<Index>(k)]) *
             basis_images[k];
    proj.col(t) = img;
  }
  PhantomVariant out;
  out.method = name;
  VectorXd mean = proj.rowwise().mean(), lo(voxels), hi(voxels), sig(voxels);
  std::vector<double> row(draws);
  for (Index v = 0; v < voxels; ++v) {
    for (Index t = 0; t < draws; ++t) row[t] = proj(v, t);
    std::sort(row.begin(), row.end());
    auto quant = [&](double p) {
      const double hh = p * (draws - 1);
      const Index q = static_cast<Index>(hh);
      if (q + 1 >= draws) return row.back();
      return row[q] + (hh - q) * (row[q + 1] - row[q]);
    };
    lo[v] = quant(0.025);
    hi[v] = quant(0.975);
    sig[v] = (lo[v] > 0 || hi[v] < 0) ? 1.0 : 0.0;
  }
  out.projection_mean = Tensor::from_raw_unchecked(dims, mean);
  out.lower = Tensor::from_raw_unchecked(dims, lo);
  out.upper = Tensor::from_raw_unchecked(dims, hi);
  out.significance = Tensor::from_raw_unchecked(dims, sig);
  return out;
}

}  // namespace detail

/// 2-D localization study: TPRM with S=16 and S=1 (rank 8, no factor layer)
/// plus the vectorized-PCA baseline, each with voxelwise credible maps scored
/// against the generator's truth mask.
inline PhantomExperiment run_phantom_experiment(std::uint64_t seed, Index n = 200,
                                                double noise_sd = 5.0, Index iters = 5000,
                                                Index burn = 3000, Index rank = 8) {
  PhantomData data = gen_phantom_2d(n, noise_sd, seed);
  const Tensor stacked = stack_images(data.images);

  PhantomExperiment out;
  out.truth_mask = data.truth_mask;

  PipelineConfig cfg;
  cfg.rank = rank;
  cfg.factor_model = false;  // feature count is manageable here
  cfg.iters = iters;
  cfg.burn_in = burn;
  cfg.thin = 1;
  cfg.cp.nu0_tau = 1.0;
  cfg.cp.nu1_tau = 1e-4;
  cfg.cp.kappa = 1e-4;
  cfg.select.slab_var = 1e4;

  for (const Index s_blocks : {Index(8), Index(32)}) {
    PipelineConfig c = cfg;
    c.block_dims = {s_blocks, s_blocks};
    c.seed = derive_seed(seed, 11 + static_cast<std::uint64_t>(s_blocks));
    const ChainStore chain = fit(stacked, data.y, std::nullopt, c);
    ProjectionResult proj = projection(chain);
    PhantomVariant v;
    v.method = s_blocks == 8 ? "tprm_s16" : "tprm_s1";
    v.projection_mean = proj.mean;
    v.lower = proj.lower;
    v.upper = proj.upper;
    v.significance = proj.significance;
    v.score = score_mask(proj.significance, data.truth_mask);
    out.variants.push_back(std::move(v));
  }

  // Vectorized-PCA baseline: probit on standardized top-R scores, projected
  // back through the component images.
  {
    const Index voxels = 32 * 32;
    MatrixXd rows(n, voxels);
    for (Index i = 0; i < n; ++i) rows.row(i) = data.images[i].data();
    const MatrixXd centered = rows.rowwise() - rows.colwise().mean();
    const MatrixXd gram = centered * centered.transpose();
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram);
    MatrixXd scores(n, rank);
    std::vector<VectorXd> basis_images;
    for (Index k = 0; k < rank; ++k) {
      const double ev = std::max(eig.eigenvalues()[n - 1 - k], 0.0);
      const VectorXd u = eig.eigenvectors().col(n - 1 - k);
      scores.col(k) = u * std::sqrt(ev);
      // Component image: X' u / sigma_k, the voxel pattern of one score unit.
      basis_images.push_back(ev > 0 ? VectorXd(centered.transpose() * u / std::sqrt(ev))
                                    : VectorXd::Zero(voxels));
    }
    const Standardizer st = Standardizer::fit(scores);
    const MatrixXd sstd = st.apply(scores);
    const ProbitRunResult run = run_probit_selection(sstd, data.y, cfg.select, iters, burn,
                                                     derive_seed(seed, 31));
    PhantomVariant v = detail::project_through_images("fpca", run.b_draws, st.scale,
                                                      basis_images, {32, 32});
    v.score = score_mask(v.significance, data.truth_mask);
    out.variants.push_back(std::move(v));
  }
  return out;
}

struct Sim3dRow {
  Index replication;
  std::string method;  // pmtd | tals | fpca
  double c0;
  double accuracy;
};

struct Sim3dOptions {
  Index subjects = 200;
  double effect_norm = 14.0;
  Dims block_dims{16, 16, 25};  // 32 partitions of the 64 x 64 x 50 volume
  Index block_rank = 4;
  Index tals_rank = 4;
  Index pca_rank = 4;       // fpca component count, matched to the tensor rank
  Index factor_scores = 64; // principal components kept from pmtd features
  Index probit_iters = 2000;
  Index probit_burn = 1000;
};

/// One replication of the 3-D comparison: model accuracy of the partition
/// pipeline (per-block ALS features, PCA compression, probit selection)
/// against the whole-tensor ALS and vectorized-PCA baselines.
inline std::vector<Sim3dRow> run_sim3d_replication(Index rep, double c0, std::uint64_t seed,
                                                   const Sim3dOptions& opt = {}) {
  Sim3dData data = gen_sim_3d(opt.subjects, c0, derive_seed(seed, 7000 + rep), opt.effect_norm);
  const Index n = opt.subjects;
  std::vector<Sim3dRow> rows;

  auto probit_acc = [&](const MatrixXd& feats, std::uint64_t salt) {
    const Standardizer st = Standardizer::fit(feats);
    SelectHyper h;
    const ProbitRunResult run = run_probit_selection(
        st.apply(feats), data.y, h, opt.probit_iters, opt.probit_burn,
        derive_seed(seed, salt + 100 * static_cast<std::uint64_t>(rep)));
    return run.model_accuracy;
  };

  {  // pmtd: partition, per-block ALS subject scores, PCA compression.
    const Tensor stacked = stack_images(data.images);
    Dims parent = stacked.dims();
    Dims blocks_dims = opt.block_dims;
    blocks_dims.push_back(n);
    const PartitionGrid grid(parent, blocks_dims, true);
    const std::vector<Tensor> blocks = partition(stacked, grid);
    const Index s_count = grid.block_count();
    MatrixXd feats(n, s_count * opt.block_rank);
    std::vector<MatrixXd> block_feats(s_count);
    parallel_for(s_count, [&](Index s) {
      const CpAlsResult res = cp_als(blocks[s], opt.block_rank, 30, 1e-5);
      block_feats[s] = res.factors.factors.back() * res.factors.weights.asDiagonal();
    });
    for (Index s = 0; s < s_count; ++s)
      feats.middleCols(s * opt.block_rank, opt.block_rank) = block_feats[s];
    const Standardizer st = Standardizer::fit(feats);
    const MatrixXd compressed = pca_scores(st.apply(feats), opt.factor_scores);
    rows.push_back({rep, "pmtd", c0, probit_acc(compressed, 41)});

    // tals: whole-tensor ALS subject scores (stacked tensor reused here).
    rows.push_back({rep, "tals", c0, probit_acc(tals_features_stacked(stacked, opt.tals_rank), 43)});
  }

  {  // fpca: vectorized PCA scores.
    const MatrixXd feats = baseline_pca_features(data.images, opt.pca_rank);
    rows.push_back({rep, "fpca", c0, probit_acc(feats, 47)});
  }
  return rows;
}

inline std::vector<Sim3dRow> run_sim3d_experiment(Index replications, double c0,
                                                  std::uint64_t seed,
                                                  const Sim3dOptions& opt = {}) {
  if (replications < 1) throw std::invalid_argument("sim3d: need replications >= 1");
  std::vector<Sim3dRow> rows;
  for (Index rep = 0; rep < replications; ++rep) {
    const auto r = run_sim3d_replication(rep, c0, seed, opt);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return rows;
}

}  // namespace tprm
