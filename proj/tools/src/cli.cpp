#include "netequiv/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <iomanip>
#include <optional>
#include <ostream>

#include "netequiv/align.hpp"
#include "netequiv/dmap.hpp"
#include "netequiv/error.hpp"
#include "netequiv/experiments.hpp"
#include "netequiv/io.hpp"
#include "netequiv/mahalanobis.hpp"
#include "netequiv/sampling.hpp"
#include "netequiv/transform.hpp"

namespace netequiv::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunArgs {
  std::string config;
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct FitArgs {
  std::string points;
  std::string clouds;
  std::string covariances;
  int ell = 1;
  int k = 10;
  std::optional<double> epsilon;
  std::optional<int> max_rank;
  bool euclidean = false;
  std::uint64_t seed = 0;
  std::string out;
};

struct AlignArgs {
  std::string model1;
  std::string model2;
  std::string correspondences;
  int count = 0;
  std::string out;
};

struct TransformArgs {
  std::string bundle;
  std::string phi;
  std::string psi;
  std::string map;
  std::string input;
  std::string out;
  bool inverse = false;
};

fs::path default_out_root() {
  const char* root = std::getenv("NETEQUIV_OUT_ROOT");
  return root && *root ? fs::path(root) : fs::path("results");
}

int cmd_run(const RunArgs& a, int verbosity, std::ostream& out) {
  experiments::ExperimentConfig cfg;
  if (!a.config.empty()) {
    cfg = experiments::load_config(a.config);
  } else if (!a.scenario.empty()) {
    cfg = experiments::ExperimentConfig::defaults(experiments::scenario_from_string(a.scenario));
    cfg.output_dir = default_out_root() / a.scenario;
  } else {
    throw Error(ErrorKind::kConfig, "run needs --config or --scenario");
  }
  if (a.seed) cfg.seed = *a.seed;
  if (!a.out.empty()) cfg.output_dir = a.out;
  cfg.validate();
  const auto result = experiments::run_scenario(cfg);
  const auto& r = result.report;
  out << "scenario " << r.at("scenario").get<std::string>() << " -> " << result.output_dir.string() << "\n";
  for (const auto& t : r.at("training"))
    out << "  " << t.at("architecture").get<std::string>() << " training mse " << t.at("training_mse").get<double>()
        << ", validation mse " << t.at("validation_mse").get<double>() << "\n";
  if (r.contains("alignment")) {
    const auto& al = r.at("alignment");
    out << "  alignment residual " << al.at("residual").get<double>() << ", normalized aligned rmse "
        << al.at("normalized_aligned_rmse").get<double>() << "\n";
  }
  if (verbosity > 0) {
    for (const auto& [stage, seconds] : result.timings.items())
      out << "  [" << stage << "] " << seconds.get<double>() << " s\n";
  }
  return kExitOk;
}

std::vector<mahalanobis::CovarianceEstimate> covariances_from_csv(const fs::path& path, int dim,
                                                                  const mahalanobis::PseudoinverseOptions& opts) {
  const auto table = io::read_csv(path);
  if (table.values.cols() != static_cast<Eigen::Index>(dim) * dim) {
    throw Error(ErrorKind::kShape, path.string() + ": expected " + std::to_string(dim * dim) +
                                       " columns (row-major covariance per point)");
  }
  std::vector<mahalanobis::CovarianceEstimate> out;
  for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
    Eigen::MatrixXd c(dim, dim);
    for (int r = 0; r < dim; ++r)
      for (int s = 0; s < dim; ++s) c(r, s) = table.values(i, r * dim + s);
    out.push_back(mahalanobis::from_covariance(c, mahalanobis::CovarianceSource::kAnalyticJacobian, opts));
  }
  return out;
}

int cmd_fit(const FitArgs& a, std::ostream& out) {
  dmap::FitOptions fo;
  fo.ell = a.ell;
  fo.k_neighbors = a.k;
  fo.epsilon = a.epsilon;
  fo.use_mahalanobis = !a.euclidean;
  fo.pinv.max_rank = a.max_rank;
  fo.solver.lanczos.seed = a.seed;
  dmap::FitResult result;
  if (!a.clouds.empty()) {
    auto nbhds = sampling::load_neighborhoods(a.clouds);
    if (!a.points.empty()) {
      const auto pts = io::read_csv(a.points).values;
      if (pts.rows() != nbhds.n() || pts.cols() != nbhds.m())
        throw Error(ErrorKind::kShape, "points and neighborhoods disagree in shape");
      nbhds.base_points = pts;
    }
    result = dmap::fit(nbhds, fo);
  } else {
    if (a.points.empty()) throw Error(ErrorKind::kConfig, "fit-dmap needs --points");
    const auto pts = io::read_csv(a.points).values;
    std::vector<mahalanobis::CovarianceEstimate> covs;
    if (!a.covariances.empty()) {
      covs = covariances_from_csv(a.covariances, static_cast<int>(pts.cols()), fo.pinv);
      if (static_cast<Eigen::Index>(covs.size()) != pts.rows())
        throw Error(ErrorKind::kShape, std::to_string(covs.size()) + " covariances for " +
                                           std::to_string(pts.rows()) + " points");
    } else if (!a.euclidean) {
      throw Error(ErrorKind::kConfig, "fit-dmap needs --clouds, --covariances or --euclidean");
    }
    result = dmap::fit(pts, covs, fo);
  }
  result.model.save(a.out);
  out << "epsilon " << io::format_double(result.model.epsilon()) << " (median rule "
      << io::format_double(result.diagnostics.epsilon_median_rule) << ")\n";
  out << "candidate eigenvalues";
  for (double v : result.diagnostics.candidate_eigenvalues) out << " " << io::format_double(v);
  out << "\nkept";
  for (std::size_t p = 0; p < result.model.kept_indices().size(); ++p)
    out << " " << result.model.kept_indices()[p] << ":" << io::format_double(result.model.raw_eigenvalues()(
                                                               static_cast<Eigen::Index>(p)));
  out << "\nmodel written to " << a.out << "\n";
  return kExitOk;
}

int cmd_align(const AlignArgs& a, std::ostream& out) {
  const auto m1 = dmap::DiffusionMapModel::load(a.model1);
  const auto m2 = dmap::DiffusionMapModel::load(a.model2);
  transform::BuildOptions bo;
  bo.correspondence_count = a.count;
  if (!a.correspondences.empty()) {
    const auto table = io::read_csv(a.correspondences);
    if (table.values.cols() != 2) throw Error(ErrorKind::kShape, "correspondence file needs two index columns");
    for (Eigen::Index i = 0; i < table.values.rows(); ++i)
      bo.correspondences.emplace_back(static_cast<int>(table.values(i, 0)), static_cast<int>(table.values(i, 1)));
    if (bo.correspondences.empty()) throw Error(ErrorKind::kAlignment, "correspondence file is empty");
  }
  const auto t = transform::assemble(m1, m2, {}, {}, bo);
  align::save(a.out, t.map);
  out << "O =\n" << t.map.matrix << "\nresidual " << io::format_double(t.map.residual) << "\n";
  for (const auto& w : t.warnings) out << "warning: " << w << "\n";
  return kExitOk;
}

int cmd_transform(const TransformArgs& a, std::ostream& out) {
  transform::NetworkTransform t;
  const bool assembling = !a.phi.empty() || !a.psi.empty() || !a.map.empty();
  if (assembling) {
    if (a.phi.empty() || a.psi.empty() || a.map.empty())
      throw Error(ErrorKind::kConfig, "--phi, --psi and --map must be given together");
    t.phi = dmap::DiffusionMapModel::load(a.phi);
    t.psi = dmap::DiffusionMapModel::load(a.psi);
    t.map = align::load(a.map);
    if (t.map.dim() != t.phi.ell() || t.phi.ell() != t.psi.ell())
      throw Error(ErrorKind::kShape, "models and orthogonal map disagree in dimension");
    t.provenance = "assembled from " + a.phi + ", " + a.psi + ", " + a.map;
    if (!a.bundle.empty()) {
      transform::save_bundle(a.bundle, t);
      out << "bundle written to " << a.bundle << "\n";
    }
  } else if (!a.bundle.empty()) {
    t = transform::load_bundle(a.bundle);
  } else {
    throw Error(ErrorKind::kConfig, "transform needs --bundle or --phi/--psi/--map");
  }
  if (a.input.empty()) return kExitOk;
  if (a.out.empty()) throw Error(ErrorKind::kConfig, "--input needs --out");
  const auto input = io::read_csv(a.input).values;
  const int in_dim = a.inverse ? t.psi.dim() : t.phi.dim();
  const int out_dim = a.inverse ? t.phi.dim() : t.psi.dim();
  if (input.cols() != in_dim)
    throw Error(ErrorKind::kShape, "input has " + std::to_string(input.cols()) + " columns, expected " +
                                       std::to_string(in_dim));
  Eigen::MatrixXd result(input.rows(), out_dim);
  for (Eigen::Index i = 0; i < input.rows(); ++i) {
    const Eigen::VectorXd y = input.row(i).transpose();
    result.row(i) = (a.inverse ? transform::invert_transform(t, y) : transform::apply_transform(t, y)).transpose();
  }
  io::write_csv(a.out, result, "y");
  out << input.rows() << " rows written to " << a.out << "\n";
  return kExitOk;
}

int cmd_inspect(const std::string& target, std::ostream& out) {
  fs::path path(target);
  if (fs::is_directory(path)) {
    bool found = false;
    for (const char* name : {"manifest.json", "report.json"}) {
      if (fs::exists(path / name)) {
        out << "== " << (path / name).string() << "\n" << io::read_json(path / name).dump(2) << "\n";
        found = true;
      }
    }
    if (!found) throw Error(ErrorKind::kIo, target + ": no manifest.json or report.json");
    return kExitOk;
  }
  out << io::read_json(path).dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Equivalence transforms between neural network activation spaces", "netequiv"};
  app.require_subcommand(1);
  int verbosity = 0;
  app.add_flag("-v,--verbose", verbosity, "Print stage timings");

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Run a scenario and write its report");
  run_cmd->add_option("--config", run_args.config, "Scenario config (JSON)")->check(CLI::ExistingFile);
  run_cmd->add_option("--scenario", run_args.scenario, "parabola_41, different_inputs_42 or vectorfield_43");
  run_cmd->add_option("--seed", run_args.seed, "Master seed override");
  run_cmd->add_option("--out", run_args.out, "Output directory (default $NETEQUIV_OUT_ROOT/<scenario>)");

  FitArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit-dmap", "Fit a diffusion map model");
  fit_cmd->add_option("--points", fit_args.points, "Points CSV (one row per point)");
  fit_cmd->add_option("--clouds", fit_args.clouds, "Neighborhood directory")->check(CLI::ExistingDirectory);
  fit_cmd->add_option("--covariances", fit_args.covariances, "Row-major covariance per point (CSV)");
  fit_cmd->add_option("--ell", fit_args.ell, "Embedding dimension")->required();
  fit_cmd->add_option("--k", fit_args.k, "Neighbor rank for the bandwidth rule");
  fit_cmd->add_option("--epsilon", fit_args.epsilon, "Kernel bandwidth override");
  fit_cmd->add_option("--max-rank", fit_args.max_rank, "Rank cap of covariance pseudoinverses");
  fit_cmd->add_flag("--euclidean", fit_args.euclidean, "Plain Euclidean kernel");
  fit_cmd->add_option("--seed", fit_args.seed, "Eigensolver seed");
  fit_cmd->add_option("--out", fit_args.out, "Model directory")->required();

  AlignArgs align_args;
  auto* align_cmd = app.add_subcommand("align", "Estimate the orthogonal map between two models");
  align_cmd->add_option("--model1", align_args.model1, "First model directory")->required();
  align_cmd->add_option("--model2", align_args.model2, "Second model directory")->required();
  align_cmd->add_option("--correspondences", align_args.correspondences, "CSV of index pairs (i, j)");
  align_cmd->add_option("--count", align_args.count, "Implicit correspondences 0..count-1 (default max(ell, 10))");
  align_cmd->add_option("--out", align_args.out, "Output JSON")->required();

  TransformArgs tr_args;
  auto* tr_cmd = app.add_subcommand("transform", "Apply or assemble a transform bundle");
  tr_cmd->add_option("--bundle", tr_args.bundle, "Bundle directory (read, or written when assembling)");
  tr_cmd->add_option("--phi", tr_args.phi, "Network 1 model directory");
  tr_cmd->add_option("--psi", tr_args.psi, "Network 2 model directory");
  tr_cmd->add_option("--map", tr_args.map, "Orthogonal map JSON");
  tr_cmd->add_option("--input", tr_args.input, "Tap activations CSV");
  tr_cmd->add_option("--out", tr_args.out, "Output CSV");
  tr_cmd->add_flag("--inverse", tr_args.inverse, "Map network 2 activations back to network 1");

  std::string inspect_target;
  auto* inspect_cmd = app.add_subcommand("inspect", "Pretty-print an artifact manifest or report");
  inspect_cmd->add_option("path", inspect_target, "Artifact file or directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(run_args, verbosity, out);
    if (fit_cmd->parsed()) return cmd_fit(fit_args, out);
    if (align_cmd->parsed()) return cmd_align(align_args, out);
    if (tr_cmd->parsed()) return cmd_transform(tr_args, out);
    if (inspect_cmd->parsed()) return cmd_inspect(inspect_target, out);
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return e.kind() == ErrorKind::kConfig ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace netequiv::cli
