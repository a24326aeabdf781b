#include "netequiv/dmap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

#include "netequiv/error.hpp"
#include "netequiv/io.hpp"

namespace netequiv::dmap {

Eigen::MatrixXd NormalizationChain::w() const {
  const Eigen::VectorXd s = q_diag.cwiseSqrt();
  return s.asDiagonal() * t_hat * s.asDiagonal();
}

Eigen::MatrixXd NormalizationChain::markov() const {
  const Eigen::VectorXd s = q_diag.cwiseSqrt();
  return s.cwiseInverse().asDiagonal() * t_hat * s.asDiagonal();
}

NormalizationChain normalize(mahalanobis::KernelMatrix kernel) {
  Eigen::MatrixXd& m = kernel.values;
  const auto n = m.rows();
  if (m.cols() != n || n == 0) throw Error(ErrorKind::kShape, "kernel must be a non-empty square matrix");
  NormalizationChain chain;
  chain.epsilon = kernel.epsilon;
  chain.p_diag = m.rowwise().sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(chain.p_diag(i) > 0.0) || !std::isfinite(chain.p_diag(i)))
      throw Error(ErrorKind::kDegenerateKernel, "kernel row " + std::to_string(i) + " has zero sum");
  }
  // In place: K -> W -> That.
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) m(i, j) /= chain.p_diag(i) * chain.p_diag(j);
  chain.q_diag = m.rowwise().sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(chain.q_diag(i) > 0.0) || !std::isfinite(chain.q_diag(i)))
      throw Error(ErrorKind::kDegenerateKernel, "normalized kernel row " + std::to_string(i) + " has zero sum");
  }
  const Eigen::VectorXd s = chain.q_diag.cwiseSqrt();
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) m(i, j) /= s(i) * s(j);
  chain.t_hat = std::move(m);
  return chain;
}

eigen::EigenPairs spectral_decompose(const NormalizationChain& chain, int count, const eigen::SolverOptions& opts) {
  if (count > chain.t_hat.rows()) {
    throw Error(ErrorKind::kShape, "requested " + std::to_string(count) + " eigenpairs from " +
                                       std::to_string(chain.t_hat.rows()) + " points");
  }
  return eigen::top_eigenpairs(chain.t_hat, count, opts);
}

double local_linear_residual(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double bandwidth_divisor) {
  const auto n = x.rows();
  const auto p = x.cols();
  if (y.size() != n) throw Error(ErrorKind::kShape, "regression target length mismatch");
  if (n < 3) throw Error(ErrorKind::kInsufficientPoints, "local linear regression needs at least 3 points");
  const double mean = y.mean();
  const double sd = std::sqrt((y.array() - mean).square().mean());
  if (!(sd > 0.0)) return 0.0;

  Eigen::MatrixXd d2(n, n);
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index j = 0; j < n; ++j) {
    d2(j, j) = 0.0;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = (x.row(i) - x.row(j)).squaredNorm();
      d2(i, j) = d2(j, i) = v;
      dists.push_back(std::sqrt(v));
    }
  }
  auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  const double scale = *mid / bandwidth_divisor;
  const double scale_sq = scale > 0.0 ? scale * scale : 1.0;

  Eigen::MatrixXd design(n, p + 1);
  Eigen::VectorXd w(n);
  double sse = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    w = (-d2.col(i).array() / scale_sq).exp().matrix();
    w(i) = 0.0;  // leave one out
    design.col(0).setOnes();
    design.rightCols(p) = x.rowwise() - x.row(i);
    const Eigen::MatrixXd wd = w.asDiagonal() * design;
    const Eigen::MatrixXd normal = design.transpose() * wd;
    const Eigen::VectorXd rhs = wd.transpose() * y;
    double prediction = mean;
    if (w.sum() > 0.0) {
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(normal);
      prediction = cod.solve(rhs)(0);
      if (!std::isfinite(prediction)) prediction = mean;
    }
    sse += (y(i) - prediction) * (y(i) - prediction);
  }
  return std::sqrt(sse / static_cast<double>(n)) / sd;
}

HarmonicResult remove_harmonics(const Eigen::MatrixXd& columns, int requested, const HarmonicOptions& opts) {
  const int total = static_cast<int>(columns.cols());
  const int first = opts.drop_first ? 1 : 0;
  if (total - first < 1 || total < 2) throw Error(ErrorKind::kShape, "harmonic screening needs >= 2 candidate columns");
  if (requested < 1) throw Error(ErrorKind::kShape, "must request at least one direction");

  std::vector<Eigen::Index> rows;
  const auto n = columns.rows();
  if (opts.max_points > 0 && n > opts.max_points) {
    for (int i = 0; i < opts.max_points; ++i) rows.push_back(static_cast<Eigen::Index>(i) * n / opts.max_points);
  } else {
    for (Eigen::Index i = 0; i < n; ++i) rows.push_back(i);
  }
  const Eigen::MatrixXd sub = columns(rows, Eigen::all);

  HarmonicResult out;
  out.residuals.assign(static_cast<std::size_t>(total), std::numeric_limits<double>::quiet_NaN());
  out.kept.push_back(first);
  for (int c = first + 1; c < total; ++c) {
    const Eigen::MatrixXd regressors = sub(Eigen::all, out.kept);
    const double r = local_linear_residual(regressors, sub.col(c), opts.bandwidth_divisor);
    out.residuals[static_cast<std::size_t>(c)] = r;
    if (static_cast<int>(out.kept.size()) < requested && r > opts.threshold) out.kept.push_back(c);
  }
  if (static_cast<int>(out.kept.size()) < requested) {
    std::string msg = "only " + std::to_string(out.kept.size()) + " of " + std::to_string(requested) +
                      " independent directions found; residuals:";
    for (int c = first + 1; c < total; ++c) msg += " " + io::format_double(out.residuals[static_cast<std::size_t>(c)]);
    throw Error(ErrorKind::kInsufficientDirections, msg);
  }
  return out;
}

DiffusionMapModel::DiffusionMapModel(Eigen::MatrixXd reference_points, Eigen::MatrixXd embedding,
                                     Eigen::VectorXd eigenvalues, Eigen::VectorXd raw_eigenvalues, double epsilon,
                                     std::vector<int> kept_indices)
    : reference_points_(std::move(reference_points)),
      embedding_(std::move(embedding)),
      eigenvalues_(std::move(eigenvalues)),
      raw_eigenvalues_(std::move(raw_eigenvalues)),
      epsilon_(epsilon),
      kept_indices_(std::move(kept_indices)) {
  if (embedding_.rows() != reference_points_.rows() || eigenvalues_.size() != embedding_.cols() ||
      raw_eigenvalues_.size() != embedding_.cols() || static_cast<Eigen::Index>(kept_indices_.size()) != embedding_.cols()) {
    throw Error(ErrorKind::kShape, "inconsistent diffusion map model");
  }
}

namespace {
int nearest_row(const Eigen::MatrixXd& rows, const Eigen::VectorXd& v) {
  if (rows.rows() == 0) throw Error(ErrorKind::kState, "diffusion map model is empty");
  if (rows.cols() != v.size()) {
    throw Error(ErrorKind::kShape, "query has dimension " + std::to_string(v.size()) + ", model expects " +
                                       std::to_string(rows.cols()));
  }
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double d = (rows.row(i).transpose() - v).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}
}  // namespace

int DiffusionMapModel::nearest_reference(const Eigen::VectorXd& y) const { return nearest_row(reference_points_, y); }

int DiffusionMapModel::nearest_embedding(const Eigen::VectorXd& z) const { return nearest_row(embedding_, z); }

Eigen::VectorXd DiffusionMapModel::embed(const Eigen::VectorXd& y) const {
  return embedding_.row(nearest_reference(y)).transpose();
}

Eigen::VectorXd DiffusionMapModel::inverse_embed(const Eigen::VectorXd& z) const {
  return reference_points_.row(nearest_embedding(z)).transpose();
}

void DiffusionMapModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "netequiv.dmap/1";
  manifest["n"] = n();
  manifest["ell"] = ell();
  manifest["dim"] = dim();
  manifest["epsilon"] = epsilon_;
  manifest["eigenvalues"] = io::vector_to_json(eigenvalues_);
  manifest["raw_eigenvalues"] = io::vector_to_json(raw_eigenvalues_);
  manifest["kept_indices"] = kept_indices_;
  io::write_json(dir / "manifest.json", manifest);
  io::write_csv(dir / "reference_points.csv", reference_points_, "y");
  io::write_csv(dir / "embedding.csv", embedding_, "phi");
}

DiffusionMapModel DiffusionMapModel::load(const std::filesystem::path& dir) {
  const auto manifest = io::read_json(dir / "manifest.json");
  try {
    auto refs = io::read_csv(dir / "reference_points.csv").values;
    auto emb = io::read_csv(dir / "embedding.csv").values;
    if (refs.rows() != manifest.at("n").get<int>() || emb.cols() != manifest.at("ell").get<int>())
      throw Error(ErrorKind::kShape, dir.string() + ": manifest disagrees with matrices");
    return DiffusionMapModel(std::move(refs), std::move(emb), io::vector_from_json(manifest.at("eigenvalues")),
                             io::vector_from_json(manifest.at("raw_eigenvalues")), manifest.at("epsilon").get<double>(),
                             manifest.at("kept_indices").get<std::vector<int>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kIo, dir.string() + ": malformed manifest: " + e.what());
  }
}

FitResult fit(const Eigen::MatrixXd& points, std::span<const mahalanobis::CovarianceEstimate> covariances,
              const FitOptions& opts) {
  const auto n = points.rows();
  if (opts.ell < 1) throw Error(ErrorKind::kShape, "ell must be >= 1", "validate");
  if (n <= opts.ell) {
    throw Error(ErrorKind::kInsufficientPoints,
                "need more points (" + std::to_string(n) + ") than embedding dimensions (" + std::to_string(opts.ell) + ")",
                "validate");
  }
  if (n <= opts.k_neighbors) {
    throw Error(ErrorKind::kInsufficientPoints,
                "need more points (" + std::to_string(n) + ") than k=" + std::to_string(opts.k_neighbors), "validate");
  }
  if (opts.use_mahalanobis && static_cast<Eigen::Index>(covariances.size()) != n) {
    throw Error(ErrorKind::kShape, std::to_string(covariances.size()) + " covariances for " + std::to_string(n) + " points",
                "validate");
  }

  FitResult result;
  auto& diag = result.diagnostics;

  const std::vector<Eigen::MatrixXd> pinvs = run_stage("covariance", [&] {
    std::vector<Eigen::MatrixXd> out;
    out.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      if (opts.use_mahalanobis) {
        out.push_back(covariances[static_cast<std::size_t>(i)].pseudoinverse);
        diag.covariance_ranks.push_back(covariances[static_cast<std::size_t>(i)].rank);
      } else {
        out.push_back(Eigen::MatrixXd::Identity(points.cols(), points.cols()));
      }
    }
    return out;
  });

  Eigen::MatrixXd d2 = run_stage("distances", [&] { return mahalanobis::squared_distance_matrix(points, pinvs); });
  const double epsilon = run_stage("bandwidth", [&] {
    diag.epsilon_median_rule = mahalanobis::select_bandwidth(d2, opts.k_neighbors);
    return opts.epsilon ? *opts.epsilon : diag.epsilon_median_rule;
  });
  NormalizationChain chain = run_stage("normalize", [&] {
    return normalize(mahalanobis::kernel_from_squared_distances(std::move(d2), epsilon));
  });

  const int wanted = opts.candidates > 0 ? opts.candidates : 2 * opts.ell + 8;
  const int count = static_cast<int>(std::min<Eigen::Index>(wanted, n));
  const eigen::EigenPairs pairs = run_stage("eigensolve", [&] { return spectral_decompose(chain, count, opts.solver); });
  diag.lanczos_iterations = pairs.iterations;
  diag.leading_eigenvalue = pairs.values(0);
  diag.candidate_eigenvalues.assign(pairs.values.data(), pairs.values.data() + pairs.values.size());
  {
    const Eigen::VectorXd s = chain.q_diag.cwiseSqrt();
    const Eigen::VectorXd row_sums = (chain.t_hat * s).cwiseQuotient(s);
    diag.markov_row_sum_deviation = (row_sums.array() - 1.0).abs().maxCoeff();
  }

  // phi_p = Q^-1/2 v_p, scaled so that sum_i pi_i phi_p(i)^2 = 1 for the
  // stationary distribution pi = Q / sum(Q).
  const double mass = chain.q_diag.sum();
  const Eigen::MatrixXd candidates =
      std::sqrt(mass) * (chain.q_diag.cwiseSqrt().cwiseInverse().asDiagonal() * pairs.vectors);

  const HarmonicResult harmonics = run_stage("harmonics", [&] {
    if (candidates.cols() < 2) throw Error(ErrorKind::kInsufficientDirections, "too few candidate eigenvectors");
    return remove_harmonics(candidates, opts.ell, opts.harmonics);
  });
  diag.harmonic_residuals = harmonics.residuals;

  Eigen::VectorXd raw(opts.ell), lambdas(opts.ell);
  Eigen::MatrixXd embedding(n, opts.ell);
  run_stage("rescale", [&] {
    for (int p = 0; p < opts.ell; ++p) {
      const int idx = harmonics.kept[static_cast<std::size_t>(p)];
      double a = pairs.values(idx);
      if (!(a > 0.0)) {
        throw Error(ErrorKind::kNumeric, "kept eigenvalue " + io::format_double(a) + " (index " + std::to_string(idx) +
                                             ") is not positive");
      }
      a = std::min(a, 1.0);
      raw(p) = a;
      lambdas(p) = std::pow(a, 1.0 / (2.0 * epsilon));
      embedding.col(p) = candidates.col(idx);
      if (opts.scale_by_eigenvalue) embedding.col(p) *= lambdas(p);
    }
    return 0;
  });

  result.model = DiffusionMapModel(points, std::move(embedding), std::move(lambdas), std::move(raw), epsilon,
                                   harmonics.kept);
  return result;
}

FitResult fit(const sampling::NeighborhoodSet& nbhds, const FitOptions& opts) {
  nbhds.validate();
  std::vector<mahalanobis::CovarianceEstimate> covs;
  if (opts.use_mahalanobis) {
    covs = run_stage("covariance", [&] {
      std::vector<mahalanobis::CovarianceEstimate> out;
      out.reserve(nbhds.clouds.size());
      for (const auto& cloud : nbhds.clouds) out.push_back(mahalanobis::empirical_covariance(cloud, opts.pinv));
      return out;
    });
  }
  const Eigen::MatrixXd points = opts.base_point == BasePoint::kCenter ? nbhds.base_points : nbhds.cloud_means();
  return fit(points, covs, opts);
}

}  // namespace netequiv::dmap
