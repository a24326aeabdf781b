#include "netequiv/align.hpp"

#include <cmath>

#include "netequiv/error.hpp"
#include "netequiv/io.hpp"

namespace netequiv::align {

OrthogonalMap OrthogonalMap::identity(int dim) {
  OrthogonalMap map;
  map.matrix = Eigen::MatrixXd::Identity(dim, dim);
  map.cross_rank = dim;
  return map;
}

double alignment_rms(const Eigen::MatrixXd& matrix, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() == 0) return 0.0;
  const Eigen::MatrixXd diff = a * matrix.transpose() - b;
  return std::sqrt(diff.squaredNorm() / static_cast<double>(a.rows()));
}

OrthogonalMap kabsch_align(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorKind::kShape, "correspondence sets must have the same shape");
  if (a.rows() < 1) throw Error(ErrorKind::kAlignment, "need at least one correspondence");
  const auto dim = a.cols();
  const Eigen::MatrixXd cross = b.transpose() * a;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  OrthogonalMap map;
  map.matrix = svd.matrixU() * svd.matrixV().transpose();
  const Eigen::VectorXd& s = svd.singularValues();
  const double tol = std::max(1e-12, s.size() ? s(0) * 1e-10 : 0.0);
  map.cross_rank = static_cast<int>((s.array() > tol).count());
  map.ambiguous = map.cross_rank < dim;
  map.correspondences_used = static_cast<int>(a.rows());
  map.residual = alignment_rms(map.matrix, a, b);
  return map;
}

Eigen::VectorXd apply(const OrthogonalMap& map, const Eigen::VectorXd& z) {
  if (z.size() != map.dim()) throw Error(ErrorKind::kShape, "vector dimension does not match orthogonal map");
  return map.matrix * z;
}

Eigen::VectorXd apply_inverse(const OrthogonalMap& map, const Eigen::VectorXd& z) {
  if (z.size() != map.dim()) throw Error(ErrorKind::kShape, "vector dimension does not match orthogonal map");
  return map.matrix.transpose() * z;
}

nlohmann::json to_json(const OrthogonalMap& map) {
  return {{"format", "netequiv.orthogonal_map/1"},
          {"matrix", io::matrix_to_json(map.matrix)},
          {"residual", map.residual},
          {"p", map.correspondences_used},
          {"cross_rank", map.cross_rank},
          {"ambiguous", map.ambiguous},
          {"determinant", map.matrix.size() ? map.matrix.determinant() : 1.0}};
}

OrthogonalMap orthogonal_map_from_json(const nlohmann::json& j) {
  try {
    OrthogonalMap map;
    map.matrix = io::matrix_from_json(j.at("matrix"));
    if (map.matrix.rows() != map.matrix.cols()) throw Error(ErrorKind::kShape, "orthogonal map must be square");
    map.residual = j.at("residual").get<double>();
    map.correspondences_used = j.at("p").get<int>();
    map.cross_rank = j.value("cross_rank", map.dim());
    map.ambiguous = j.value("ambiguous", false);
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kIo, std::string("malformed orthogonal map: ") + e.what());
  }
}

void save(const std::filesystem::path& path, const OrthogonalMap& map) { io::write_json(path, to_json(map)); }

OrthogonalMap load(const std::filesystem::path& path) { return orthogonal_map_from_json(io::read_json(path)); }

}  // namespace netequiv::align
