#include "netequiv/mahalanobis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "netequiv/error.hpp"
#include "netequiv/io.hpp"

namespace netequiv::mahalanobis {

CovarianceEstimate from_covariance(Eigen::MatrixXd covariance, CovarianceSource source,
                                   const PseudoinverseOptions& opts) {
  if (covariance.rows() != covariance.cols()) throw Error(ErrorKind::kShape, "covariance must be square");
  if (!covariance.allFinite()) throw Error(ErrorKind::kNumeric, "covariance has non-finite entries");
  CovarianceEstimate est;
  est.source = source;
  // Symmetrize exactly before decomposing.
  covariance = 0.5 * (covariance + covariance.transpose()).eval();
  const auto dim = covariance.rows();
  est.pseudoinverse = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance);
  if (eig.info() != Eigen::Success) throw Error(ErrorKind::kNumeric, "covariance eigendecomposition failed");
  const Eigen::VectorXd& values = eig.eigenvalues();  // ascending
  const double sigma_max = dim ? values.cwiseAbs().maxCoeff() : 0.0;
  if (sigma_max > 0.0) {
    const double cutoff = opts.relative_cutoff * sigma_max;
    const int cap = opts.max_rank ? std::max(0, *opts.max_rank) : static_cast<int>(dim);
    for (Eigen::Index i = dim - 1; i >= 0 && est.rank < cap; --i) {
      if (values(i) <= cutoff) break;
      est.pseudoinverse.noalias() += (1.0 / values(i)) * eig.eigenvectors().col(i) * eig.eigenvectors().col(i).transpose();
      ++est.rank;
    }
  }
  est.pseudoinverse = 0.5 * (est.pseudoinverse + est.pseudoinverse.transpose()).eval();
  est.degenerate = est.rank == 0;
  est.covariance = std::move(covariance);
  return est;
}

CovarianceEstimate empirical_covariance(const Eigen::MatrixXd& cloud, const PseudoinverseOptions& opts) {
  if (cloud.rows() < 2) throw Error(ErrorKind::kShape, "empirical covariance needs at least 2 points");
  const Eigen::RowVectorXd mean = cloud.colwise().mean();
  const Eigen::MatrixXd centered = cloud.rowwise() - mean;
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(cloud.rows() - 1);
  return from_covariance(std::move(cov), CovarianceSource::kEmpirical, opts);
}

CovarianceEstimate analytic_covariance(const Eigen::MatrixXd& jacobian, const PseudoinverseOptions& opts) {
  if (!jacobian.allFinite()) throw Error(ErrorKind::kNumeric, "jacobian has non-finite entries");
  return from_covariance(jacobian * jacobian.transpose(), CovarianceSource::kAnalyticJacobian, opts);
}

CovarianceEstimate identity_covariance(int dim) {
  CovarianceEstimate est;
  est.covariance = Eigen::MatrixXd::Identity(dim, dim);
  est.pseudoinverse = Eigen::MatrixXd::Identity(dim, dim);
  est.rank = dim;
  est.source = CovarianceSource::kIdentity;
  return est;
}

double mahalanobis_sq(const Eigen::VectorXd& yi, const Eigen::VectorXd& yj, const Eigen::MatrixXd& pi,
                      const Eigen::MatrixXd& pj) {
  const auto m = yi.size();
  if (yj.size() != m || pi.rows() != m || pi.cols() != m || pj.rows() != m || pj.cols() != m)
    throw Error(ErrorKind::kShape, "mahalanobis_sq: inconsistent dimensions");
  const Eigen::VectorXd d = yi - yj;
  const Eigen::MatrixXd sum = pi + pj;
  const double value = d.dot(sum * d);
  if (value < -1e-12) throw Error(ErrorKind::kNumericPsd, "negative squared distance " + io::format_double(value));
  return std::max(value, 0.0);
}

Eigen::MatrixXd squared_distance_matrix(const Eigen::MatrixXd& points, std::span<const Eigen::MatrixXd> pinvs) {
  const auto n = points.rows();
  const auto m = points.cols();
  if (static_cast<Eigen::Index>(pinvs.size()) != n)
    throw Error(ErrorKind::kShape, std::to_string(pinvs.size()) + " pseudoinverses for " + std::to_string(n) + " points");
  for (const auto& p : pinvs)
    if (p.rows() != m || p.cols() != m) throw Error(ErrorKind::kShape, "pseudoinverse shape does not match points");

  // one_sided(j, i) = (y_j - y_i)^T P_i (y_j - y_i): column i holds point i's form.
  Eigen::MatrixXd d2(n, n);
  Eigen::MatrixXd diff(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    diff = points.rowwise() - points.row(i);
    d2.col(i) = ((diff * pinvs[static_cast<std::size_t>(i)]).cwiseProduct(diff)).rowwise().sum();
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    d2(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double v = d2(j, i) + d2(i, j);
      if (v < 0.0) {
        if (v < -1e-12) {
          throw Error(ErrorKind::kNumericPsd, "negative squared distance between " + std::to_string(i) + " and " +
                                                  std::to_string(j));
        }
        v = 0.0;
      }
      d2(i, j) = v;
      d2(j, i) = v;
    }
  }
  return d2;
}

double select_bandwidth(const Eigen::MatrixXd& d2, int k) {
  const auto n = d2.rows();
  if (k < 1) throw Error(ErrorKind::kInsufficientPoints, "k must be >= 1");
  if (n <= k) {
    throw Error(ErrorKind::kInsufficientPoints, "bandwidth selection needs more than k=" + std::to_string(k) +
                                                    " points, got " + std::to_string(n));
  }
  std::vector<double> kth(static_cast<std::size_t>(n));
  std::vector<double> row(static_cast<std::size_t>(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) row[c++] = d2(i, j);
    std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
    kth[static_cast<std::size_t>(i)] = row[static_cast<std::size_t>(k - 1)];
  }
  std::sort(kth.begin(), kth.end());
  const std::size_t mid = kth.size() / 2;
  const double median = kth.size() % 2 ? kth[mid] : 0.5 * (kth[mid - 1] + kth[mid]);
  if (!std::isfinite(median)) throw Error(ErrorKind::kPropagation, "non-finite neighbor distances");
  if (!(median > 0.0)) {
    throw Error(ErrorKind::kDegenerateBandwidth, "median k-th neighbor distance is zero (coincident points)");
  }
  return median;
}

KernelMatrix kernel_from_squared_distances(Eigen::MatrixXd d2, double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw Error(ErrorKind::kDomain, "kernel bandwidth must be positive");
  const auto n = d2.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = d2(i, j);
      if (!std::isfinite(v)) {
        throw Error(ErrorKind::kPropagation, "non-finite distance for pair (" + std::to_string(i) + "," +
                                                 std::to_string(j) + ")");
      }
      d2(i, j) = std::exp(-v / (2.0 * epsilon));
    }
  }
  return KernelMatrix{std::move(d2), epsilon};
}

KernelMatrix kernel_matrix(const Eigen::MatrixXd& points, std::span<const Eigen::MatrixXd> pinvs, double epsilon) {
  return kernel_from_squared_distances(squared_distance_matrix(points, pinvs), epsilon);
}

std::vector<Eigen::MatrixXd> pseudoinverses_of(std::span<const CovarianceEstimate> estimates) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(estimates.size());
  for (const auto& e : estimates) out.push_back(e.pseudoinverse);
  return out;
}

void write_kernel_csv(const std::filesystem::path& path, const KernelMatrix& kernel) {
  io::write_csv(path, kernel.values, "k");
}

void write_kernel_binary(const std::filesystem::path& path, const KernelMatrix& kernel) {
  static_assert(std::endian::native == std::endian::little, "binary kernel dump assumes a little-endian host");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  nlohmann::json header{{"format", "netequiv.kernel/1"}, {"n", kernel.n()}, {"epsilon", kernel.epsilon},
                        {"dtype", "float64-le"}, {"order", "row-major"}};
  out << header.dump() << '\n';
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = kernel.values;
  out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path.string());
}

KernelMatrix read_kernel_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kIo, path.string() + ": bad header: " + e.what());
  }
  const auto n = header.at("n").get<Eigen::Index>();
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(n, n);
  in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (!in) throw Error(ErrorKind::kIo, path.string() + ": truncated kernel payload");
  return KernelMatrix{Eigen::MatrixXd(rm), header.at("epsilon").get<double>()};
}

}  // namespace netequiv::mahalanobis
