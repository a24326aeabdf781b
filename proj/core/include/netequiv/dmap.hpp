#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "netequiv/eigensolver.hpp"
#include "netequiv/mahalanobis.hpp"
#include "netequiv/sampling.hpp"

namespace netequiv::dmap {

// Density normalization of a kernel matrix.
//   W    = P^-1 K P^-1,  P_ii = sum_j K_ij
//   That = Q^-1/2 W Q^-1/2, Q_ii = sum_j W_ij
// W is not stored; w() rebuilds it from That and Q.
struct NormalizationChain {
  Eigen::VectorXd p_diag;
  Eigen::VectorXd q_diag;
  Eigen::MatrixXd t_hat;
  double epsilon = 0.0;

  Eigen::MatrixXd w() const;
  // Row-stochastic Markov matrix T = Q^-1 W.
  Eigen::MatrixXd markov() const;
};

// Consumes the kernel so that large problems hold a single n x n buffer.
NormalizationChain normalize(mahalanobis::KernelMatrix kernel);

// Eigenpairs of That in descending order, deterministic signs.
eigen::EigenPairs spectral_decompose(const NormalizationChain& chain, int count,
                                     const eigen::SolverOptions& opts = {});

struct HarmonicOptions {
  // Columns whose normalized leave-one-out local linear regression residual
  // exceeds this are treated as new directions.
  double threshold = 0.5;
  // Drop column 0 (the constant eigenvector) before screening.
  bool drop_first = true;
  // Regression is run on an evenly strided subsample of at most this many rows.
  int max_points = 2000;
  // Kernel scale of the regression: median pairwise distance / this.
  double bandwidth_divisor = 3.0;
};

struct HarmonicResult {
  std::vector<int> kept;          // column indices into the input
  std::vector<double> residuals;  // per input column; NaN where not evaluated
};

// Normalized leave-one-out residual of predicting `target` from `regressors`
// by local linear regression.
double local_linear_residual(const Eigen::MatrixXd& regressors, const Eigen::VectorXd& target,
                             double bandwidth_divisor = 3.0);

// Greedy screening in column order. Throws kInsufficientDirections when fewer
// than `requested` columns survive.
HarmonicResult remove_harmonics(const Eigen::MatrixXd& columns, int requested, const HarmonicOptions& opts = {});

enum class BasePoint { kCenter, kCloudMean };

struct FitOptions {
  int ell = 1;
  int k_neighbors = 10;
  std::optional<double> epsilon;  // overrides the median rule when set
  // Identity covariances give a plain Euclidean kernel (control runs).
  bool use_mahalanobis = true;
  mahalanobis::PseudoinverseOptions pinv;
  BasePoint base_point = BasePoint::kCenter;
  HarmonicOptions harmonics;
  // Candidate eigenvectors computed before screening; 0 picks 2*ell + 8.
  int candidates = 0;
  // Multiply embedding columns by lambda_p.
  bool scale_by_eigenvalue = false;
  eigen::SolverOptions solver;
};

struct FitDiagnostics {
  double epsilon_median_rule = 0.0;
  double markov_row_sum_deviation = 0.0;
  double leading_eigenvalue = 0.0;
  std::vector<double> candidate_eigenvalues;
  std::vector<double> harmonic_residuals;
  std::vector<int> covariance_ranks;
  int lanczos_iterations = 0;
};

class DiffusionMapModel {
 public:
  DiffusionMapModel() = default;
  DiffusionMapModel(Eigen::MatrixXd reference_points, Eigen::MatrixXd embedding, Eigen::VectorXd eigenvalues,
                    Eigen::VectorXd raw_eigenvalues, double epsilon, std::vector<int> kept_indices);

  bool empty() const { return reference_points_.rows() == 0; }
  int n() const { return static_cast<int>(reference_points_.rows()); }
  int ell() const { return static_cast<int>(embedding_.cols()); }
  int dim() const { return static_cast<int>(reference_points_.cols()); }

  const Eigen::MatrixXd& reference_points() const { return reference_points_; }
  const Eigen::MatrixXd& embedding() const { return embedding_; }
  // lambda_p = a_p^(1/(2 eps)), descending
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  // a_p, eigenvalues of That
  const Eigen::VectorXd& raw_eigenvalues() const { return raw_eigenvalues_; }
  double epsilon() const { return epsilon_; }
  const std::vector<int>& kept_indices() const { return kept_indices_; }

  // Nearest reference point (lowest index on ties).
  int nearest_reference(const Eigen::VectorXd& y) const;
  // Nearest embedding row (lowest index on ties).
  int nearest_embedding(const Eigen::VectorXd& z) const;

  Eigen::VectorXd embed(const Eigen::VectorXd& y) const;
  Eigen::VectorXd inverse_embed(const Eigen::VectorXd& z) const;

  // Directory: manifest.json + reference_points.csv + embedding.csv.
  void save(const std::filesystem::path& dir) const;
  static DiffusionMapModel load(const std::filesystem::path& dir);

 private:
  Eigen::MatrixXd reference_points_;
  Eigen::MatrixXd embedding_;
  Eigen::VectorXd eigenvalues_;
  Eigen::VectorXd raw_eigenvalues_;
  double epsilon_ = 0.0;
  std::vector<int> kept_indices_;
};

struct FitResult {
  DiffusionMapModel model;
  FitDiagnostics diagnostics;
};

// Points plus one covariance estimate per point.
FitResult fit(const Eigen::MatrixXd& points, std::span<const mahalanobis::CovarianceEstimate> covariances,
              const FitOptions& opts);

// Empirical covariances of each cloud; base points per opts.base_point.
FitResult fit(const sampling::NeighborhoodSet& nbhds, const FitOptions& opts);

}  // namespace netequiv::dmap
