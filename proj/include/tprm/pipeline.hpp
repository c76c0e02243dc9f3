#pragma once

#include "tprm/chain.hpp"
#include "tprm/cp_gibbs.hpp"
#include "tprm/factor.hpp"
#include "tprm/parallel.hpp"
#include "tprm/probit.hpp"

namespace tprm {

struct PipelineConfig {
  Dims block_dims;        // spatial block dims; empty = single whole-image partition
  Index rank = 5;         // R per partition
  Index factor_rank = 100;  // K; 0 picks min(P_L, N)/2
  bool factor_model = true;
  bool screening = false;
  double screen_tol = 1e-8;
  bool pad_blocks = true;
  Index iters = 5000;
  Index burn_in = 3000;
  Index thin = 1;
  std::uint64_t seed = 0;
  CPHyper cp;
  FactorHyper factor;
  SelectHyper select;

  void validate() const {
    if (rank < 1) throw std::invalid_argument("pipeline: rank must be >= 1");
    if (factor_rank < 0) throw std::invalid_argument("pipeline: factor rank must be >= 0");
    if (iters < 1 || burn_in < 0 || burn_in >= iters)
      throw std::invalid_argument("pipeline: need 0 <= burn_in < iters");
    if (thin < 1) throw std::invalid_argument("pipeline: thin must be >= 1");
    if ((iters - burn_in) % thin != 0)
      throw std::invalid_argument("pipeline: iters - burn_in must be a multiple of thin");
    if (!(screen_tol >= 0)) throw std::invalid_argument("pipeline: screen_tol must be >= 0");
    cp.validate();
    factor.validate();
    select.validate();
  }
};

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  return {{"block_dims", c.block_dims},
          {"rank", c.rank},
          {"factor_rank", c.factor_rank},
          {"factor_model", c.factor_model},
          {"screening", c.screening},
          {"screen_tol", c.screen_tol},
          {"pad_blocks", c.pad_blocks},
          {"iters", c.iters},
          {"burn_in", c.burn_in},
          {"thin", c.thin},
          {"seed", c.seed},
          {"cp", {{"nu0_tau", c.cp.nu0_tau}, {"nu1_tau", c.cp.nu1_tau}, {"kappa", c.cp.kappa}}},
          {"factor",
           {{"beta0_tau_psi", c.factor.beta0_tau_psi}, {"beta1_tau_psi", c.factor.beta1_tau_psi}}},
          {"select",
           {{"slab_var", c.select.slab_var},
            {"spike_var", c.select.spike_var},
            {"alpha0_pi", c.select.alpha0_pi},
            {"alpha1_pi", c.select.alpha1_pi},
            {"nu0_upsilon", c.select.nu0_upsilon},
            {"nu1_upsilon", c.select.nu1_upsilon}}}};
}

namespace stream_id {
constexpr std::uint64_t regression = 0;
constexpr std::uint64_t factor = 1;
inline std::uint64_t partition(Index s) { return 2 + static_cast<std::uint64_t>(s); }
inline std::uint64_t screening(Index total, Index s) {
  return 2 + static_cast<std::uint64_t>(total + s);
}
constexpr std::uint64_t cv_split = 9001;
}  // namespace stream_id

/// Survivors of the first-screening rule: partition s is kept when the
/// largest |entry| of its weight-scaled subject scores, L_s diag(lambda_s),
/// reaches tol. The lambda weighting makes the rule invariant to the CP scale
/// split between weights and scores (the raw scores alone are not, since the
/// diffuse weight prior lets lambda absorb arbitrary magnitude).
inline std::vector<Index> screen(const std::vector<CPState>& mean_states, double tol) {
  std::vector<Index> keep;
  for (std::size_t s = 0; s < mean_states.size(); ++s) {
    if (!mean_states[s].factors.subject)
      throw std::invalid_argument("screen: state lacks subject scores");
    const MatrixXd scaled =
        *mean_states[s].factors.subject * mean_states[s].factors.weights.asDiagonal();
    if (scaled.cwiseAbs().maxCoeff() >= tol) keep.push_back(static_cast<Index>(s));
  }
  return keep;
}

namespace detail {

inline std::string zpad(Index v, int width = 4) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

struct FitLayout {
  Dims spatial_dims, spatial_blocks;
  Index subjects = 0, spatial_order = 0, partitions = 0;
  bool pad = false;

  PartitionGrid spatial_grid() const {
    return PartitionGrid(spatial_dims, spatial_blocks, pad);
  }
  PartitionGrid stacked_grid() const {
    Dims parent = spatial_dims, blocks = spatial_blocks;
    parent.push_back(subjects);
    blocks.push_back(subjects);
    return PartitionGrid(parent, blocks, pad);
  }
};

inline FitLayout make_layout(const Tensor& x, const PipelineConfig& cfg) {
  if (x.order() < 2)
    throw std::invalid_argument("fit: tensor must have spatial modes plus a subject mode");
  FitLayout ly;
  ly.spatial_dims.assign(x.dims().begin(), x.dims().end() - 1);
  ly.subjects = x.dims().back();
  ly.spatial_order = static_cast<Index>(ly.spatial_dims.size());
  ly.spatial_blocks = cfg.block_dims.empty() ? ly.spatial_dims : cfg.block_dims;
  if (static_cast<Index>(ly.spatial_blocks.size()) != ly.spatial_order)
    throw std::invalid_argument("fit: block dims order does not match spatial order");
  ly.pad = cfg.pad_blocks;
  ly.partitions = ly.spatial_grid().block_count();
  return ly;
}

// Decomposition-only pass used by the first screening: per-partition Gibbs
// chains. The accumulated statistic is the per-draw lambda-weighted score
// matrix, which is stable under the joint sign flips of (lambda_r, l_r).
inline std::vector<CPState> screening_means(const std::vector<Tensor>& blocks,
                                            const FitLayout& ly, const PipelineConfig& cfg) {
  CPHyper h = cfg.cp;
  h.rank = cfg.rank;
  std::vector<CPState> means(blocks.size());
  parallel_for(static_cast<Index>(blocks.size()), [&](Index s) {
    RngStream rng(cfg.seed, stream_id::screening(ly.partitions, s));
    CPState state = init_cp_state(ly.spatial_blocks, ly.subjects, h, rng);
    CpBlockSampler sampler(blocks[s], h, true);
    MatrixXd weighted_sum = MatrixXd::Zero(ly.subjects, h.rank);
    Index kept = 0;
    for (Index t = 0; t < cfg.iters; ++t) {
      sampler.sweep(state, rng);
      if (t >= cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0) {
        weighted_sum += *state.factors.subject * state.factors.weights.asDiagonal();
        ++kept;
      }
    }
    CPState mean = state;
    mean.partition_id = s;
    *mean.factors.subject = weighted_sum / static_cast<double>(kept);
    mean.factors.weights = VectorXd::Ones(h.rank);
    means[s] = std::move(mean);
  });
  return means;
}

}  // namespace detail

/// Full TPRM Gibbs fit on a stacked tensor (subject mode last). Sweep order
/// per iteration: latent probit draw, per-partition CP updates, factor block,
/// then the selection block. Features are the standardized subject scores,
/// compressed through the factor model when enabled. Returns the recorded
/// chain; deterministic given cfg.seed.
inline ChainStore fit(const Tensor& x, const VectorXi& y, const std::optional<MatrixXd>& z,
                      const PipelineConfig& cfg) {
  cfg.validate();
  const detail::FitLayout ly = detail::make_layout(x, cfg);
  const Index n = ly.subjects;
  if (y.size() != n)
    throw std::invalid_argument("fit: response length " + std::to_string(y.size()) +
                                " does not match subject mode " + std::to_string(n));
  for (Index i = 0; i < n; ++i)
    if (y[i] != 0 && y[i] != 1) throw std::invalid_argument("fit: response must be 0/1");
  MatrixXd zmat = z ? *z : MatrixXd(n, 0);
  if (zmat.rows() != n) throw std::invalid_argument("fit: covariate rows != subjects");
  const Index q = zmat.cols();

  CPHyper cph = cfg.cp;
  cph.rank = cfg.rank;
  const Index big_s = ly.partitions;
  const std::vector<Tensor> blocks = partition(x, ly.stacked_grid());

  // First screening: decomposition-only chains, then drop flat partitions.
  std::vector<Index> survivors(big_s);
  std::iota(survivors.begin(), survivors.end(), Index{0});
  if (cfg.screening) {
    survivors = screen(detail::screening_means(blocks, ly, cfg), cfg.screen_tol);
    if (survivors.empty()) throw NumericError("fit: screening removed every partition");
  }
  const Index s_kept = static_cast<Index>(survivors.size());
  const Index p_l = s_kept * cfg.rank;

  Index k_factors = 0;
  if (cfg.factor_model) {
    k_factors = cfg.factor_rank > 0 ? cfg.factor_rank : std::max<Index>(1, std::min(p_l, n) / 2);
    k_factors = std::min(k_factors, std::min(p_l, n));
  }
  const Index m = cfg.factor_model ? k_factors : p_l;

  // Component streams: draws are reproducible regardless of the worker count.
  RngStream main_rng(cfg.seed, stream_id::regression);
  RngStream factor_rng(cfg.seed, stream_id::factor);
  std::vector<RngStream> part_rng;
  std::vector<CPState> states;
  std::vector<CpBlockSampler> samplers;
  part_rng.reserve(s_kept);
  states.reserve(s_kept);
  samplers.reserve(s_kept);
  for (Index i = 0; i < s_kept; ++i) {
    const Index s = survivors[i];
    part_rng.emplace_back(cfg.seed, stream_id::partition(s));
    states.push_back(init_cp_state(ly.spatial_blocks, n, cph, part_rng.back()));
    states.back().partition_id = s;
    samplers.emplace_back(blocks[s], cph, true);
  }

  FactorState fstate;
  if (cfg.factor_model) fstate = init_factor_state(n, k_factors, p_l, factor_rng);
  RegressionState reg = init_regression_state(n, m, q);

  ChainStore chain;
  for (Index i = 0; i < s_kept; ++i) {
    const std::string tag = "partition_" + detail::zpad(survivors[i]);
    chain.register_series(tag + "_lambda", {cfg.rank});
    chain.register_series(tag + "_tau", {1});
    for (Index d = 0; d < ly.spatial_order; ++d)
      chain.register_series(tag + "_A" + std::to_string(d + 1),
                            {ly.spatial_blocks[d], cfg.rank});
  }
  chain.register_series("feature_mean", {p_l});
  chain.register_series("feature_scale", {p_l});
  if (cfg.factor_model) {
    chain.register_series("factor_basis", {k_factors, p_l});
    chain.register_series("factor_tau_psi", {1});
  }
  chain.register_series("coef_b", {m});
  chain.register_series("coef_delta", {m});
  chain.register_series("coef_pi", {1});
  if (q > 0) chain.register_series("coef_gamma", {q});
  chain.register_series("coef_upsilon", {1});
  chain.register_series("latent_w", {n});

  MatrixXd l_mean_acc = MatrixXd::Zero(n, p_l);
  MatrixXd score_mean_acc = cfg.factor_model ? MatrixXd::Zero(n, k_factors) : MatrixXd();
  Index kept = 0;

  auto assemble_survivors = [&]() {
    MatrixXd l(n, p_l);
    for (Index i = 0; i < s_kept; ++i)
      l.middleCols(i * cfg.rank, cfg.rank) = *states[i].factors.subject;
    return l;
  };

  // Initialization schedule, mirroring the real-data workflow: let the
  // decomposition (and factor layer) mature for a short warmup before the
  // selection block couples in, then give b a data-informed slab start.
  // Without this the first delta update sees noise features, the inclusion
  // probability collapses, and real features can take thousands of sweeps to
  // escape the spike.
  const Index warmup = std::min<Index>(200, cfg.burn_in / 2);
  for (Index t = 0; t < warmup; ++t) {
    parallel_for(s_kept, [&](Index i) { samplers[i].sweep(states[i], part_rng[i]); });
    if (cfg.factor_model) {
      const MatrixXd l = assemble_survivors();
      factor_sweep(fstate, Standardizer::fit_rms(l).apply(l), cfg.factor, factor_rng);
    }
  }
  {
    const MatrixXd l0 = assemble_survivors();
    const Standardizer st0 = Standardizer::fit_rms(l0);
    const MatrixXd feats0 = cfg.factor_model ? fstate.scores : st0.apply(l0);
    warm_start_coefficients(reg, y, zmat, feats0, cfg.select, main_rng);
  }

  for (Index t = 0; t < cfg.iters; ++t) {
    // latent probit draw against the current features and coefficients
    MatrixXd l = assemble_survivors();
    Standardizer st = Standardizer::fit_rms(l);
    MatrixXd feats = cfg.factor_model ? fstate.scores : st.apply(l);
    update_w(reg, y, zmat, feats, main_rng);

    // per-partition decomposition sweeps; conditionally independent given the data
    parallel_for(s_kept, [&](Index i) { samplers[i].sweep(states[i], part_rng[i]); });

    // factor block on the standardized assembled features
    l = assemble_survivors();
    st = Standardizer::fit_rms(l);
    const MatrixXd lstd = st.apply(l);
    if (cfg.factor_model) {
      factor_sweep(fstate, lstd, cfg.factor, factor_rng);
      feats = fstate.scores;
    } else {
      feats = lstd;
    }

    // selection block
    for (Index k = 0; k < m; ++k) update_delta(reg, cfg.select, k, main_rng);
    VectorXd resid = reg.w - zmat * reg.gamma - feats * reg.coef;
    for (Index k = 0; k < m; ++k) {
      const VectorXd wtilde = resid + feats.col(k) * reg.coef[k];
      const double old = reg.coef[k];
      update_b(reg, cfg.select, wtilde, feats, k, main_rng);
      resid.noalias() -= feats.col(k) * (reg.coef[k] - old);
    }
    update_pi(reg, cfg.select, main_rng);
    update_gamma(reg, cfg.select, zmat, feats, main_rng);
    update_upsilon(reg, cfg.select, main_rng);

    if (t >= cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0) {
      for (Index i = 0; i < s_kept; ++i) {
        const std::string tag = "partition_" + detail::zpad(survivors[i]);
        chain.append_vector(tag + "_lambda", states[i].factors.weights);
        chain.append_scalar(tag + "_tau", states[i].tau);
        for (Index d = 0; d < ly.spatial_order; ++d)
          chain.append_matrix(tag + "_A" + std::to_string(d + 1), states[i].factors.factors[d]);
      }
      chain.append_vector("feature_mean", st.mean);
      chain.append_vector("feature_scale", st.scale);
      if (cfg.factor_model) {
        chain.append_matrix("factor_basis", fstate.basis);
        chain.append_scalar("factor_tau_psi", fstate.tau_psi);
      }
      chain.append_vector("coef_b", reg.coef);
      VectorXd delta(m);
      for (Index k = 0; k < m; ++k) delta[k] = reg.include[k];
      chain.append_vector("coef_delta", delta);
      chain.append_scalar("coef_pi", reg.pi);
      if (q > 0) chain.append_vector("coef_gamma", reg.gamma);
      chain.append_scalar("coef_upsilon", reg.upsilon);
      chain.append_vector("latent_w", reg.w);
      l_mean_acc += l;
      if (cfg.factor_model) score_mean_acc += fstate.scores;
      ++kept;
    }
  }

  chain.register_series("posterior_L_mean", {n, p_l});
  chain.append_matrix("posterior_L_mean", MatrixXd(l_mean_acc / kept));
  if (cfg.factor_model) {
    chain.register_series("posterior_G_mean", {n, k_factors});
    chain.append_matrix("posterior_G_mean", MatrixXd(score_mean_acc / kept));
  }

  chain.meta = {{"config", config_to_json(cfg)},
                {"spatial_dims", ly.spatial_dims},
                {"spatial_blocks", ly.spatial_blocks},
                {"subjects", n},
                {"covariates", q},
                {"partitions", big_s},
                {"survivors", survivors},
                {"rank", cfg.rank},
                {"factor_model", cfg.factor_model},
                {"factor_rank", k_factors},
                {"coef_count", m},
                {"kept_draws", kept}};
  return chain;
}

struct ProjectionResult {
  Tensor mean, lower, upper;  // voxelwise posterior mean and 95% bounds
  Tensor significance;        // 1 where the interval excludes zero
};

/// Image-space projection of the selection coefficients through the fitted
/// decomposition, with voxelwise equal-tailed credible intervals. Coefficients
/// are mapped back to raw feature scale (through the factor basis when the
/// factor model was active) before reconstruction; screened-out partitions
/// project to zero.
inline ProjectionResult projection(const ChainStore& chain, double level = 0.95) {
  const Dims spatial = chain.meta.at("spatial_dims").get<Dims>();
  const Dims blocks_d = chain.meta.at("spatial_blocks").get<Dims>();
  const bool factor_model = chain.meta.at("factor_model").get<bool>();
  const Index rank = chain.meta.at("rank").get<Index>();
  const std::vector<Index> survivors = chain.meta.at("survivors").get<std::vector<Index>>();
  const bool pad = chain.meta.at("config").at("pad_blocks").get<bool>();
  const PartitionGrid grid(spatial, blocks_d, pad);
  const Index spatial_order = static_cast<Index>(spatial.size());

  const MatrixXd b_draws = chain.matrix("coef_b");
  const MatrixXd scale_draws = chain.matrix("feature_scale");
  const Index draws = b_draws.rows();
  const Index p_l = scale_draws.cols();

  // Raw-scale coefficients per draw: (D' b) or b, divided by feature scales.
  MatrixXd beta(draws, p_l);
  if (factor_model) {
    const MatrixXd basis_draws = chain.matrix("factor_basis");
    const Index k = b_draws.cols();
    for (Index t = 0; t < draws; ++t) {
      const VectorXd flat = basis_draws.row(t);  // rows are strided views
      Eigen::Map<const MatrixXd> basis_t(flat.data(), k, p_l);
      beta.row(t) = (basis_t.transpose() * b_draws.row(t).transpose()).transpose();
    }
  } else {
    beta = b_draws;
  }
  beta.array() /= scale_draws.array();

  std::vector<Tensor> mean_blocks, lo_blocks, hi_blocks, sig_blocks;
  const Index block_voxels = dims_product(blocks_d);
  std::map<Index, Index> survivor_pos;
  for (std::size_t i = 0; i < survivors.size(); ++i)
    survivor_pos[survivors[i]] = static_cast<Index>(i);

  std::vector<double> voxel(draws);
  for (Index s = 0; s < grid.block_count(); ++s) {
    if (!survivor_pos.count(s)) {
      mean_blocks.push_back(Tensor::zeros(blocks_d));
      lo_blocks.push_back(Tensor::zeros(blocks_d));
      hi_blocks.push_back(Tensor::zeros(blocks_d));
      sig_blocks.push_back(Tensor::zeros(blocks_d));
      continue;
    }
    const Index pos = survivor_pos[s];
    const std::string tag = "partition_" + detail::zpad(s);
    const MatrixXd lambda_draws = chain.matrix(tag + "_lambda");
    std::vector<MatrixXd> a_draws;
    for (Index d = 0; d < spatial_order; ++d)
      a_draws.push_back(chain.matrix(tag + "_A" + std::to_string(d + 1)));

    MatrixXd block_draws(block_voxels, draws);
    for (Index t = 0; t < draws; ++t) {
      CPFactors f;
      f.weights = lambda_draws.row(t).transpose().cwiseProduct(
          beta.row(t).segment(pos * rank, rank).transpose());
      for (Index d = 0; d < spatial_order; ++d) {
        const VectorXd flat = a_draws[d].row(t);
        f.factors.push_back(
            Eigen::Map<const MatrixXd>(flat.data(), blocks_d[d], rank));
      }
      block_draws.col(t) = cp_reconstruct(f).data();
    }

    VectorXd vmean = block_draws.rowwise().mean();
    VectorXd vlo(block_voxels), vhi(block_voxels), vsig(block_voxels);
    const double lo_p = (1.0 - level) / 2.0, hi_p = 1.0 - lo_p;
    for (Index v = 0; v < block_voxels; ++v) {
      for (Index t = 0; t < draws; ++t) voxel[static_cast<std::size_t>(t)] = block_draws(v, t);
      std::sort(voxel.begin(), voxel.end());
      auto quant = [&](double p) {
        const double h = p * (draws - 1);
        const Index lo = static_cast<Index>(h);
        if (lo + 1 >= draws) return voxel.back();
        return voxel[lo] + (h - lo) * (voxel[lo + 1] - voxel[lo]);
      };
      vlo[v] = quant(lo_p);
      vhi[v] = quant(hi_p);
      vsig[v] = (vlo[v] > 0.0 || vhi[v] < 0.0) ? 1.0 : 0.0;
    }
    mean_blocks.push_back(Tensor::from_raw_unchecked(blocks_d, vmean));
    lo_blocks.push_back(Tensor::from_raw_unchecked(blocks_d, vlo));
    hi_blocks.push_back(Tensor::from_raw_unchecked(blocks_d, vhi));
    sig_blocks.push_back(Tensor::from_raw_unchecked(blocks_d, vsig));
  }

  return ProjectionResult{unpartition(mean_blocks, grid), unpartition(lo_blocks, grid),
                          unpartition(hi_blocks, grid), unpartition(sig_blocks, grid)};
}

/// Posterior predictive probabilities for new subjects. Factor scores and CP
/// components are identified only up to sign, permutation, and rotation, and
/// the frame drifts across the chain, so features for new subjects are
/// extracted per retained draw — that draw's spatial design, standardization,
/// and factor basis — and met with the same draw's coefficients.
inline VectorXd predict_probs(const ChainStore& chain, const Tensor& xnew,
                              const std::optional<MatrixXd>& znew) {
  const Dims spatial = chain.meta.at("spatial_dims").get<Dims>();
  const Dims blocks_d = chain.meta.at("spatial_blocks").get<Dims>();
  const bool factor_model = chain.meta.at("factor_model").get<bool>();
  const Index rank = chain.meta.at("rank").get<Index>();
  const std::vector<Index> survivors = chain.meta.at("survivors").get<std::vector<Index>>();
  const bool pad = chain.meta.at("config").at("pad_blocks").get<bool>();
  const Index n_train = chain.meta.at("subjects").get<Index>();
  const Index q = chain.meta.at("covariates").get<Index>();

  if (xnew.order() != static_cast<Index>(spatial.size()) + 1)
    throw std::invalid_argument("predict: tensor order mismatch");
  for (std::size_t d = 0; d < spatial.size(); ++d)
    if (xnew.dims()[d] != spatial[d])
      throw std::invalid_argument("predict: spatial dims do not match the fitted model");
  const Index n_new = xnew.dims().back();
  MatrixXd zmat = znew ? *znew : MatrixXd(n_new, 0);
  if (zmat.rows() != n_new) throw std::invalid_argument("predict: covariate rows mismatch");
  if (zmat.cols() != q) throw std::invalid_argument("predict: covariate columns mismatch");

  detail::FitLayout ly;
  ly.spatial_dims = spatial;
  ly.spatial_blocks = blocks_d;
  ly.subjects = n_new;
  ly.spatial_order = static_cast<Index>(spatial.size());
  ly.pad = pad;
  const std::vector<Tensor> blocks = partition(xnew, ly.stacked_grid());
  const Index block_voxels = dims_product(blocks_d);
  const Index s_kept = static_cast<Index>(survivors.size());
  const Index p_l = s_kept * rank;

  // Per-survivor matrices of subject columns (block_voxels x n_new).
  std::vector<MatrixXd> subj_cols;
  subj_cols.reserve(survivors.size());
  for (Index s : survivors) {
    const VectorXd& buf = blocks[s].data();
    MatrixXd m(block_voxels, n_new);
    for (Index v = 0; v < block_voxels; ++v)
      for (Index j = 0; j < n_new; ++j) m(v, j) = buf[v * n_new + j];
    subj_cols.push_back(std::move(m));
  }

  const MatrixXd b_draws = chain.matrix("coef_b");
  const MatrixXd mean_draws = chain.matrix("feature_mean");
  const MatrixXd scale_draws = chain.matrix("feature_scale");
  const Index draws = b_draws.rows();
  const MatrixXd gamma_draws = q > 0 ? chain.matrix("coef_gamma") : MatrixXd::Zero(draws, 0);
  MatrixXd basis_draws, tau_psi_draws;
  if (factor_model) {
    basis_draws = chain.matrix("factor_basis");
    tau_psi_draws = chain.matrix("factor_tau_psi");
  }
  std::vector<MatrixXd> lambda_draws, tau_draws;
  std::vector<std::vector<MatrixXd>> a_draws(survivors.size());
  for (std::size_t i = 0; i < survivors.size(); ++i) {
    const std::string tag = "partition_" + detail::zpad(survivors[i]);
    lambda_draws.push_back(chain.matrix(tag + "_lambda"));
    tau_draws.push_back(chain.matrix(tag + "_tau"));
    for (Index d = 0; d < ly.spatial_order; ++d)
      a_draws[i].push_back(chain.matrix(tag + "_A" + std::to_string(d + 1)));
  }

  VectorXd p = VectorXd::Zero(n_new);
  for (Index t = 0; t < draws; ++t) {
    MatrixXd l(n_new, p_l);
    for (Index i = 0; i < s_kept; ++i) {
      CPFactors f;
      f.weights = lambda_draws[i].row(t).transpose();
      for (Index d = 0; d < ly.spatial_order; ++d) {
        const VectorXd flat = a_draws[i][d].row(t);
        f.factors.push_back(Eigen::Map<const MatrixXd>(flat.data(), blocks_d[d], rank));
      }
      MatrixXd design(block_voxels, rank);
      for (Index r = 0; r < rank; ++r)
        design.col(r) = detail::rank_design(f, r, -1, f.weights[r]);
      // Subject-mode regression with the score prior's precision, matching
      // the subject-score conditional; plain least squares is its tau -> inf limit
      // and blows up when fitted components are collinear.
      const double tau = tau_draws[i](t, 0);
      MatrixXd prec = tau * (design.transpose() * design);
      prec.diagonal().array() += static_cast<double>(n_train);
      const Eigen::LLT<MatrixXd> llt(prec);
      l.middleCols(i * rank, rank) =
          (tau * llt.solve(design.transpose() * subj_cols[i])).transpose();
    }
    const MatrixXd lstd = (l.rowwise() - mean_draws.row(t)).array().rowwise() /
                          scale_draws.row(t).array();

    MatrixXd feats;
    if (factor_model) {
      const Index k = b_draws.cols();
      const VectorXd flat = basis_draws.row(t);
      Eigen::Map<const MatrixXd> basis(flat.data(), k, p_l);
      const double tau_psi = tau_psi_draws(t, 0);
      MatrixXd prec = tau_psi * (basis * basis.transpose());
      prec.diagonal().array() += static_cast<double>(n_train);
      const Eigen::LLT<MatrixXd> llt(prec);
      feats = (tau_psi * llt.solve(basis * lstd.transpose())).transpose();
    } else {
      feats = lstd;
    }

    const VectorXd eta =
        feats * b_draws.row(t).transpose() + zmat * gamma_draws.row(t).transpose();
    for (Index i = 0; i < n_new; ++i) p[i] += normal_cdf(eta[i]);
  }
  return p / static_cast<double>(draws);
}

struct CrossValidationResult {
  double mean_accuracy = 0.0;
  VectorXd fold_accuracy;
};

/// Stratified fold labels: classes are shuffled separately (seeded) and dealt
/// round robin, so fold class balance is within one subject of even.
inline std::vector<Index> cv_fold_assignment(const VectorXi& y, Index folds,
                                             std::uint64_t seed) {
  RngStream split_rng(seed, stream_id::cv_split);
  std::vector<Index> fold_of(y.size());
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<Index> idx;
    for (Index i = 0; i < y.size(); ++i)
      if (y[i] == cls) idx.push_back(i);
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(split_rng.uniform() * i)]);
    for (std::size_t i = 0; i < idx.size(); ++i)
      fold_of[idx[i]] = static_cast<Index>(i % folds);
  }
  return fold_of;
}

/// Stratified k-fold cross validation. Each fold refits the full pipeline on
/// the training subjects only; test features come from the train-fitted
/// structure via subject-mode least squares. only_fold >= 0 restricts the run
/// to a single fold (the mean then covers just that fold).
inline CrossValidationResult cross_validate(const Tensor& x, const VectorXi& y,
                                            const std::optional<MatrixXd>& z,
                                            const PipelineConfig& cfg, Index folds = 10,
                                            Index only_fold = -1) {
  cfg.validate();
  if (folds < 2) throw std::invalid_argument("cross_validate: need at least 2 folds");
  const Index n = x.dims().back();
  if (y.size() != n) throw std::invalid_argument("cross_validate: response length mismatch");
  if (folds > n) throw std::invalid_argument("cross_validate: more folds than subjects");

  const std::vector<Index> fold_of = cv_fold_assignment(y, folds, cfg.seed);

  const Index spatial_voxels = x.size() / n;
  CrossValidationResult res;
  res.fold_accuracy = VectorXd::Constant(folds, std::numeric_limits<double>::quiet_NaN());
  for (Index f = 0; f < folds; ++f) {
    if (only_fold >= 0 && f != only_fold) continue;
    std::vector<Index> train, test;
    for (Index i = 0; i < n; ++i) (fold_of[i] == f ? test : train).push_back(i);
    if (test.empty() || train.empty())
      throw std::invalid_argument("cross_validate: empty fold");

    auto gather = [&](const std::vector<Index>& take) {
      Dims dims = x.dims();
      dims.back() = static_cast<Index>(take.size());
      VectorXd buf(spatial_voxels * static_cast<Index>(take.size()));
      for (Index v = 0; v < spatial_voxels; ++v)
        for (std::size_t j = 0; j < take.size(); ++j)
          buf[v * static_cast<Index>(take.size()) + static_cast<Index>(j)] =
              x.data()[v * n + take[j]];
      return Tensor::from_raw_unchecked(std::move(dims), std::move(buf));
    };

    const Tensor xtrain = gather(train);
    const Tensor xtest = gather(test);
    VectorXi ytrain(static_cast<Index>(train.size())), ytest(static_cast<Index>(test.size()));
    for (std::size_t j = 0; j < train.size(); ++j) ytrain[j] = y[train[j]];
    for (std::size_t j = 0; j < test.size(); ++j) ytest[j] = y[test[j]];
    std::optional<MatrixXd> ztrain, ztest;
    if (z) {
      MatrixXd a(train.size(), z->cols()), b(test.size(), z->cols());
      for (std::size_t j = 0; j < train.size(); ++j) a.row(j) = z->row(train[j]);
      for (std::size_t j = 0; j < test.size(); ++j) b.row(j) = z->row(test[j]);
      ztrain = a;
      ztest = b;
    }

    PipelineConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(f));
    const ChainStore chain = fit(xtrain, ytrain, ztrain, fold_cfg);
    const VectorXd p = predict_probs(chain, xtest, ztest);
    double correct = 0;
    for (Index j = 0; j < p.size(); ++j)
      correct += ((p[j] > 0.5 ? 1 : 0) == ytest[j]) ? 1.0 : 0.0;
    res.fold_accuracy[f] = correct / static_cast<double>(p.size());
  }
  double total = 0;
  Index counted = 0;
  for (Index f = 0; f < folds; ++f)
    if (!std::isnan(res.fold_accuracy[f])) {
      total += res.fold_accuracy[f];
      ++counted;
    }
  res.mean_accuracy = total / static_cast<double>(counted);
  return res;
}

}  // namespace tprm
