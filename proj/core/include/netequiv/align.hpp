#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <nlohmann/json.hpp>

namespace netequiv::align {

// O maps embedding 1 coordinates onto embedding 2 coordinates. Reflections
// are allowed (O(l), not SO(l)).
struct OrthogonalMap {
  Eigen::MatrixXd matrix;
  double residual = 0.0;  // RMS of ||O a_i - b_i|| over the correspondences
  int correspondences_used = 0;
  int cross_rank = 0;      // rank of B^T A
  bool ambiguous = false;  // cross_rank < l: the optimum is not unique

  int dim() const { return static_cast<int>(matrix.rows()); }
  static OrthogonalMap identity(int dim);
};

// Unscaled orthogonal Procrustes: O = U V^T with B^T A = U S V^T, minimizing
// sum ||O a_i - b_i||^2. Rows of a and b are corresponding points.
OrthogonalMap kabsch_align(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

Eigen::VectorXd apply(const OrthogonalMap& map, const Eigen::VectorXd& z);
Eigen::VectorXd apply_inverse(const OrthogonalMap& map, const Eigen::VectorXd& z);

// RMS of ||O a_i - b_i||.
double alignment_rms(const Eigen::MatrixXd& matrix, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

nlohmann::json to_json(const OrthogonalMap& map);
OrthogonalMap orthogonal_map_from_json(const nlohmann::json& j);
void save(const std::filesystem::path& path, const OrthogonalMap& map);
OrthogonalMap load(const std::filesystem::path& path);

}  // namespace netequiv::align
