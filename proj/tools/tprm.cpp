// tprm: partitioned Bayesian tensor decomposition, selection, and simulation
// studies over TPRM tensor files. Subcommands: decompose, fit, predict,
// simulate. Exit codes: 0 success, 1 numeric failure, 2 usage/input error.
#include <CLI11.hpp>

#include "tprm/config.hpp"
#include "tprm/io.hpp"
#include "tprm/sim.hpp"

namespace fs = std::filesystem;
using namespace tprm;

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

void write_factor_outputs(const fs::path& dir, Index partition, const CPFactors& f) {
  const std::string tag = "partition_" + detail::zpad(partition);
  write_tensor(dir / (tag + "_lambda.tprm"),
               Tensor(Dims{f.rank()}, f.weights));
  for (std::size_t d = 0; d < f.factors.size(); ++d) {
    const MatrixXd& a = f.factors[d];
    VectorXd flat(a.size());
    for (Index j = 0; j < a.rows(); ++j)
      for (Index r = 0; r < a.cols(); ++r) flat[j * a.cols() + r] = a(j, r);
    write_tensor(dir / (tag + "_A" + std::to_string(d + 1) + ".tprm"),
                 Tensor(Dims{a.rows(), a.cols()}, flat));
  }
}

struct DecomposeArgs {
  std::string input, out, method = "gibbs";
  std::vector<Index> blocks;
  Index rank = 5;
  Index iters = 2000;
  Index burn_in = -1;
  std::uint64_t seed = 0;
};

int cmd_decompose(const DecomposeArgs& args) {
  RunManifest manifest;
  manifest.command = "decompose";
  manifest.started = RunManifest::timestamp();
  manifest.seed = args.seed;
  manifest.add_input(args.input);

  const Tensor x = read_tensor(args.input);
  const Index burn = args.burn_in >= 0 ? args.burn_in : args.iters / 2;
  if (args.method != "gibbs" && args.method != "als")
    throw InputError("decompose: method must be gibbs or als");
  if (burn >= args.iters) throw InputError("decompose: burn-in must be below iters");

  Dims block_dims = args.blocks.empty() ? x.dims() : Dims(args.blocks);
  const PartitionGrid grid(x.dims(), block_dims, true);
  const std::vector<Tensor> blocks = partition(x, grid);

  fs::create_directories(fs::path(args.out) / "factors");
  std::vector<Tensor> recon_blocks(blocks.size(), Tensor());
  std::vector<RngStream> streams;
  for (Index s = 0; s < grid.block_count(); ++s) streams.emplace_back(args.seed, 2 + s);

  CPHyper h;
  h.rank = args.rank;
  parallel_for(grid.block_count(), [&](Index s) {
    if (args.method == "als") {
      const CpAlsResult res = cp_als(blocks[s], args.rank, args.iters, 1e-9);
      recon_blocks[s] = cp_reconstruct(res.factors);
      write_factor_outputs(fs::path(args.out) / "factors", s, res.factors);
    } else {
      CPState state = init_cp_state(blocks[s].dims(), std::nullopt, h, streams[s]);
      CpBlockSampler sampler(blocks[s], h, false);
      VectorXd recon_acc = VectorXd::Zero(blocks[s].size());
      CPFactors mean = state.factors;
      mean.weights.setZero();
      for (auto& a : mean.factors) a.setZero();
      Index kept = 0;
      for (Index t = 0; t < args.iters; ++t) {
        sampler.sweep(state, streams[s]);
        if (t >= burn) {
          recon_acc += cp_reconstruct(state.factors).data();
          mean.weights += state.factors.weights;
          for (std::size_t d = 0; d < mean.factors.size(); ++d)
            mean.factors[d] += state.factors.factors[d];
          ++kept;
        }
      }
      recon_acc /= static_cast<double>(kept);
      mean.weights /= static_cast<double>(kept);
      for (auto& a : mean.factors) a /= static_cast<double>(kept);
      recon_blocks[s] = Tensor::from_raw_unchecked(blocks[s].dims(), std::move(recon_acc));
      write_factor_outputs(fs::path(args.out) / "factors", s, mean);
    }
  });

  const Tensor recon = unpartition(recon_blocks, grid);
  const double err = rmse(x, recon);
  const double rel = err * std::sqrt(static_cast<double>(x.size())) /
                     std::max(x.data().norm(), 1e-300);
  write_tensor(fs::path(args.out) / "reconstruction.tprm", recon);
  {
    CsvWriter w(fs::path(args.out) / "rmse.csv");
    w.row({"method", "rank", "partitions", "rmse", "relative_error"});
    w.row({args.method, std::to_string(args.rank), std::to_string(grid.block_count()),
           fmt(err), fmt(rel)});
  }
  manifest.add_output(fs::path(args.out) / "reconstruction.tprm");
  manifest.add_output(fs::path(args.out) / "rmse.csv");
  manifest.config = {{"rank", args.rank},   {"blocks", block_dims},
                     {"method", args.method}, {"iters", args.iters},
                     {"burn_in", burn}};
  manifest.finished = RunManifest::timestamp();
  manifest.write(fs::path(args.out) / "manifest.json");
  std::printf("decompose: rmse %.6g (relative %.3g), outputs in %s\n", err, rel,
              args.out.c_str());
  return 0;
}

struct FitArgs {
  std::string tensor, response, covariates, config, out;
  std::vector<Index> blocks;
  Index rank = -1;
  Index iters = -1, burn_in = -1, thin = -1;
  Index factor_rank = -1;
  int factor_model = -1, screening = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_fit(const FitArgs& args) {
  RunManifest manifest;
  manifest.command = "fit";
  manifest.started = RunManifest::timestamp();
  manifest.add_input(args.tensor);
  manifest.add_input(args.response);
  if (!args.covariates.empty()) manifest.add_input(args.covariates);
  if (!args.config.empty()) manifest.add_input(args.config);

  PipelineConfig cfg;
  if (!args.config.empty()) cfg = parse_config_file(args.config);
  if (!args.blocks.empty()) cfg.block_dims = Dims(args.blocks);
  if (args.rank >= 0) cfg.rank = args.rank;
  if (args.iters >= 0) cfg.iters = args.iters;
  if (args.burn_in >= 0) cfg.burn_in = args.burn_in;
  if (args.thin >= 0) cfg.thin = args.thin;
  if (args.factor_rank >= 0) cfg.factor_rank = args.factor_rank;
  if (args.factor_model >= 0) cfg.factor_model = args.factor_model != 0;
  if (args.screening >= 0) cfg.screening = args.screening != 0;
  if (args.seed_set) cfg.seed = args.seed;

  const Tensor x = read_tensor(args.tensor);
  const VectorXi y = read_response_csv(args.response);
  std::optional<MatrixXd> z;
  if (!args.covariates.empty()) z = read_covariates_csv(args.covariates);

  const ChainStore chain = fit(x, y, z, cfg);
  fs::create_directories(args.out);
  chain.save(fs::path(args.out) / "chain");
  manifest.add_output(fs::path(args.out) / "chain");

  {  // per-coefficient posterior summary
    const VectorXd mean = chain.mean("coef_b");
    const auto [lo, hi] = chain.interval("coef_b");
    const VectorXd incl = chain.mean("coef_delta");
    CsvWriter w(fs::path(args.out) / "summary.csv");
    w.row({"coefficient", "post_mean", "ci_lower", "ci_upper", "inclusion_prob"});
    for (Index k = 0; k < mean.size(); ++k)
      w.row({"b_" + detail::zpad(k), fmt(mean[k]), fmt(lo[k]), fmt(hi[k]), fmt(incl[k])});
    if (chain.has("coef_gamma")) {
      const VectorXd gm = chain.mean("coef_gamma");
      const auto [glo, ghi] = chain.interval("coef_gamma");
      for (Index j = 0; j < gm.size(); ++j)
        w.row({"gamma_" + detail::zpad(j), fmt(gm[j]), fmt(glo[j]), fmt(ghi[j]), ""});
    }
  }
  manifest.add_output(fs::path(args.out) / "summary.csv");

  const ProjectionResult proj = projection(chain);
  write_tensor(fs::path(args.out) / "projection_mean.tprm", proj.mean);
  write_tensor(fs::path(args.out) / "projection_lower.tprm", proj.lower);
  write_tensor(fs::path(args.out) / "projection_upper.tprm", proj.upper);
  write_tensor(fs::path(args.out) / "significance.tprm", proj.significance);
  for (const char* name : {"projection_mean.tprm", "projection_lower.tprm",
                           "projection_upper.tprm", "significance.tprm"})
    manifest.add_output(fs::path(args.out) / name);

  manifest.config = config_to_json(cfg);
  manifest.seed = cfg.seed;
  manifest.finished = RunManifest::timestamp();
  manifest.write(fs::path(args.out) / "manifest.json");
  std::printf("fit: %lld coefficients, %lld retained draws, outputs in %s\n",
              static_cast<long long>(chain.mean("coef_b").size()),
              static_cast<long long>(chain.draw_count("coef_b")), args.out.c_str());
  return 0;
}

struct PredictArgs {
  std::string model, tensor, covariates, out;
};

int cmd_predict(const PredictArgs& args) {
  RunManifest manifest;
  manifest.command = "predict";
  manifest.started = RunManifest::timestamp();
  manifest.add_input(args.tensor);
  if (!args.covariates.empty()) manifest.add_input(args.covariates);

  const ChainStore chain = ChainStore::load(fs::path(args.model) / "chain");
  const Tensor xnew = read_tensor(args.tensor);
  if (xnew.order() < 2 || xnew.dims().back() < 1)
    throw InputError("predict: tensor must carry at least one subject");
  std::optional<MatrixXd> znew;
  if (!args.covariates.empty()) znew = read_covariates_csv(args.covariates);

  const VectorXd p = predict_probs(chain, xnew, znew);
  {
    CsvWriter w(args.out);
    w.row({"subject", "probability", "label"});
    for (Index i = 0; i < p.size(); ++i)
      w.row({std::to_string(i), fmt(p[i]), p[i] > 0.5 ? "1" : "0"});
  }
  manifest.add_output(args.out);
  manifest.seed =
      chain.meta.value("config", nlohmann::json::object()).value<std::uint64_t>("seed", 0);
  manifest.finished = RunManifest::timestamp();
  manifest.write(fs::path(args.out).parent_path() / "predict_manifest.json");
  std::printf("predict: %lld subjects -> %s\n", static_cast<long long>(p.size()),
              args.out.c_str());
  return 0;
}

struct SimulateArgs {
  std::string experiment, out;
  Index replications = 20;
  double c0 = 65.0;
  Index iters = -1;
  std::uint64_t seed = 0;
};

int cmd_simulate(const SimulateArgs& args) {
  fs::create_directories(args.out);
  RunManifest manifest;
  manifest.command = "simulate";
  manifest.started = RunManifest::timestamp();
  manifest.seed = args.seed;
  manifest.config = {{"experiment", args.experiment},
                     {"replications", args.replications},
                     {"c0", args.c0},
                     {"seed", args.seed}};

  if (args.experiment == "decomp") {
    const Index iters = args.iters > 0 ? args.iters : 2000;
    const auto rows = run_decomp_experiment(args.seed, iters, iters / 2);
    CsvWriter w(fs::path(args.out) / "rmse_table.csv");
    w.row({"method", "rank", "rmse"});
    for (const auto& r : rows)
      w.row({r.method, std::to_string(r.rank), fmt(r.rmse)});
    manifest.add_output(fs::path(args.out) / "rmse_table.csv");
  } else if (args.experiment == "phantom2d") {
    const Index iters = args.iters > 0 ? args.iters : 5000;
    const auto exp = run_phantom_experiment(args.seed, 200, 5.0, iters, iters * 3 / 5);
    write_tensor(fs::path(args.out) / "truth_mask.tprm", exp.truth_mask);
    manifest.add_output(fs::path(args.out) / "truth_mask.tprm");
    CsvWriter w(fs::path(args.out) / "metrics.csv");
    w.row({"method", "precision", "recall", "significant_voxels"});
    for (const auto& v : exp.variants) {
      w.row({v.method, fmt(v.score.precision), fmt(v.score.recall),
             std::to_string(v.score.positives)});
      write_tensor(fs::path(args.out) / ("projection_" + v.method + ".tprm"),
                   v.projection_mean);
      write_tensor(fs::path(args.out) / ("significance_" + v.method + ".tprm"),
                   v.significance);
      manifest.add_output(fs::path(args.out) / ("projection_" + v.method + ".tprm"));
      manifest.add_output(fs::path(args.out) / ("significance_" + v.method + ".tprm"));
    }
    manifest.add_output(fs::path(args.out) / "metrics.csv");
  } else if (args.experiment == "sim3d") {
    Sim3dOptions opt;
    if (args.iters > 0) {
      opt.probit_iters = args.iters;
      opt.probit_burn = args.iters / 2;
    }
    const auto rows = run_sim3d_experiment(args.replications, args.c0, args.seed, opt);
    CsvWriter w(fs::path(args.out) / "metrics.csv");
    w.row({"replication", "method", "c0", "accuracy"});
    std::map<std::string, std::pair<double, Index>> agg;
    for (const auto& r : rows) {
      w.row({std::to_string(r.replication), r.method, fmt(r.c0), fmt(r.accuracy)});
      agg[r.method].first += r.accuracy;
      agg[r.method].second += 1;
    }
    CsvWriter t(fs::path(args.out) / "comparison_table.csv");
    t.row({"method", "c0", "mean_accuracy"});
    for (const auto& [method, acc] : agg)
      t.row({method, fmt(args.c0), fmt(acc.first / acc.second)});
    manifest.add_output(fs::path(args.out) / "metrics.csv");
    manifest.add_output(fs::path(args.out) / "comparison_table.csv");
  } else {
    throw InputError("simulate: experiment must be decomp, phantom2d, or sim3d");
  }
  manifest.finished = RunManifest::timestamp();
  manifest.write(fs::path(args.out) / "manifest.json");
  std::printf("simulate %s: outputs in %s\n", args.experiment.c_str(), args.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tensor partition regression models"};
  app.require_subcommand(1);

  DecomposeArgs da;
  auto* dec = app.add_subcommand("decompose", "CP-decompose a tensor file");
  dec->add_option("--input", da.input, "TPRM tensor file")->required();
  dec->add_option("--rank", da.rank, "components per partition");
  dec->add_option("--blocks", da.blocks, "partition block dims, e.g. 8 8 8");
  dec->add_option("--method", da.method, "gibbs or als");
  dec->add_option("--iters", da.iters, "sweeps (gibbs) or max iterations (als)");
  dec->add_option("--burn-in", da.burn_in, "burn-in sweeps (gibbs)");
  dec->add_option("--seed", da.seed, "rng seed");
  dec->add_option("--out", da.out, "output directory")->required();

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "fit the full partition regression model");
  fit_cmd->add_option("--tensor", fa.tensor, "stacked TPRM tensor, subject mode last")
      ->required();
  fit_cmd->add_option("--response", fa.response, "response CSV (header + 0/1 rows)")
      ->required();
  fit_cmd->add_option("--covariates", fa.covariates, "clinical covariate CSV");
  fit_cmd->add_option("--config", fa.config, "key = value config file");
  fit_cmd->add_option("--blocks", fa.blocks, "spatial block dims");
  fit_cmd->add_option("--rank", fa.rank, "components per partition");
  fit_cmd->add_option("--iters", fa.iters, "total Gibbs sweeps");
  fit_cmd->add_option("--burn-in", fa.burn_in, "burn-in sweeps");
  fit_cmd->add_option("--thin", fa.thin, "thinning stride");
  fit_cmd->add_option("--factor-rank", fa.factor_rank, "latent factor count K");
  fit_cmd->add_option("--factor-model", fa.factor_model, "1 to compress features, 0 to skip");
  fit_cmd->add_option("--screening", fa.screening, "1 to screen flat partitions first");
  fit_cmd->add_option("--seed", fa.seed, "rng seed")->each([&](const std::string&) {
    fa.seed_set = true;
  });
  fit_cmd->add_option("--out", fa.out, "output directory")->required();

  PredictArgs pa;
  auto* pred = app.add_subcommand("predict", "posterior predictive for new subjects");
  pred->add_option("--model", pa.model, "fit output directory")->required();
  pred->add_option("--tensor", pa.tensor, "stacked TPRM tensor of new subjects")->required();
  pred->add_option("--covariates", pa.covariates, "clinical covariate CSV");
  pred->add_option("--out", pa.out, "prediction CSV path")->required();

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "run a synthetic study");
  sim->add_option("--experiment", sa.experiment, "decomp, phantom2d, or sim3d")->required();
  sim->add_option("--replications", sa.replications, "Monte Carlo replications (sim3d)");
  sim->add_option("--c0", sa.c0, "effect strength (sim3d)");
  sim->add_option("--iters", sa.iters, "sampler iterations override");
  sim->add_option("--seed", sa.seed, "rng seed");
  sim->add_option("--out", sa.out, "output directory")->required();

  try {
    app.parse(argc, argv);
    if (dec->parsed()) return cmd_decompose(da);
    if (fit_cmd->parsed()) return cmd_fit(fa);
    if (pred->parsed()) return cmd_predict(pa);
    if (sim->parsed()) return cmd_simulate(sa);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return 1;
  }
}
