#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace netequiv::mahalanobis {

enum class CovarianceSource { kEmpirical, kAnalyticJacobian, kIdentity };

struct PseudoinverseOptions {
  // Singular values below relative_cutoff * sigma_max are treated as zero.
  double relative_cutoff = 1e-8;
  // Optional cap on the kept rank, e.g. the declared intrinsic dimension.
  std::optional<int> max_rank;
};

struct CovarianceEstimate {
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd pseudoinverse;
  int rank = 0;
  CovarianceSource source = CovarianceSource::kEmpirical;
  bool degenerate = false;
};

// Symmetric PSD input; Moore-Penrose pseudoinverse by eigenvalue thresholding.
CovarianceEstimate from_covariance(Eigen::MatrixXd covariance, CovarianceSource source,
                                   const PseudoinverseOptions& opts = {});

// Unbiased sample covariance (divides by q-1) of the rows of `cloud`.
CovarianceEstimate empirical_covariance(const Eigen::MatrixXd& cloud, const PseudoinverseOptions& opts = {});

// J J^T for an l x d Jacobian.
CovarianceEstimate analytic_covariance(const Eigen::MatrixXd& jacobian, const PseudoinverseOptions& opts = {});

CovarianceEstimate identity_covariance(int dim);

// (yi - yj)^T (Pi + Pj) (yi - yj). Exactly symmetric in (i, j).
double mahalanobis_sq(const Eigen::VectorXd& yi, const Eigen::VectorXd& yj, const Eigen::MatrixXd& pi,
                      const Eigen::MatrixXd& pj);

// All-pairs squared Mahalanobis distances; rows of `points` are the y_i.
Eigen::MatrixXd squared_distance_matrix(const Eigen::MatrixXd& points, std::span<const Eigen::MatrixXd> pseudoinverses);

// Median over points of the squared distance to the k-th nearest other point
// (average of the two middle values for an even count).
double select_bandwidth(const Eigen::MatrixXd& squared_distances, int k = 10);

struct KernelMatrix {
  Eigen::MatrixXd values;
  double epsilon = 0.0;

  int n() const { return static_cast<int>(values.rows()); }
};

// exp(-d^2 / (2 eps)); consumes the distance matrix to reuse its storage.
KernelMatrix kernel_from_squared_distances(Eigen::MatrixXd squared_distances, double epsilon);

KernelMatrix kernel_matrix(const Eigen::MatrixXd& points, std::span<const Eigen::MatrixXd> pseudoinverses,
                           double epsilon);

std::vector<Eigen::MatrixXd> pseudoinverses_of(std::span<const CovarianceEstimate> estimates);

void write_kernel_csv(const std::filesystem::path& path, const KernelMatrix& kernel);
// One JSON header line {"format","n","epsilon",...} followed by n*n
// little-endian float64 values in row-major order.
void write_kernel_binary(const std::filesystem::path& path, const KernelMatrix& kernel);
KernelMatrix read_kernel_binary(const std::filesystem::path& path);

}  // namespace netequiv::mahalanobis
