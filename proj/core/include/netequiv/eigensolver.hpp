#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace netequiv::eigen {

struct EigenPairs {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // unit-norm columns
  int iterations = 0;       // Lanczos steps taken; 0 for the dense path
};

struct LanczosOptions {
  // Ritz pairs are accepted once |beta_j * s_j| < tolerance.
  double tolerance = 1e-11;
  int max_basis = 1500;
  int check_every = 10;
  std::uint64_t seed = 0x5eed;
};

// Largest `count` eigenpairs of a symmetric matrix via full decomposition.
EigenPairs top_eigenpairs_dense(const Eigen::MatrixXd& a, int count);

// Largest `count` eigenpairs by Lanczos with full reorthogonalization. Throws
// kNumeric when the basis limit is reached without convergence.
EigenPairs top_eigenpairs_lanczos(const Eigen::MatrixXd& a, int count, const LanczosOptions& opts = {});

struct SolverOptions {
  // Matrices with at most this many rows use the dense solver.
  int dense_limit = 2500;
  LanczosOptions lanczos;
};

EigenPairs top_eigenpairs(const Eigen::MatrixXd& a, int count, const SolverOptions& opts = {});

// Flips each column so that its largest-magnitude entry (first one on ties) is positive.
void canonicalize_signs(Eigen::MatrixXd& vectors);

}  // namespace netequiv::eigen
