#include "netequiv/eigensolver.hpp"

#include <algorithm>
#include <cmath>

#include "netequiv/error.hpp"
#include "netequiv/rng.hpp"

namespace netequiv::eigen {

void canonicalize_signs(Eigen::MatrixXd& vectors) {
  for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
      const double a = std::abs(vectors(r, c));
      if (a > best_abs) {
        best_abs = a;
        best = r;
      }
    }
    if (vectors.rows() > 0 && vectors(best, c) < 0.0) vectors.col(c) *= -1.0;
  }
}

namespace {
void check_args(const Eigen::MatrixXd& a, int count) {
  if (a.rows() != a.cols()) throw Error(ErrorKind::kShape, "eigensolver needs a square matrix");
  if (count < 1 || count > a.rows()) {
    throw Error(ErrorKind::kShape, "requested " + std::to_string(count) + " eigenpairs of a " +
                                       std::to_string(a.rows()) + "x" + std::to_string(a.rows()) + " matrix");
  }
}
}  // namespace

EigenPairs top_eigenpairs_dense(const Eigen::MatrixXd& a, int count) {
  check_args(a, count);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  if (eig.info() != Eigen::Success) throw Error(ErrorKind::kNumeric, "dense eigensolver did not converge");
  const auto n = a.rows();
  EigenPairs out;
  out.values.resize(count);
  out.vectors.resize(n, count);
  for (int i = 0; i < count; ++i) {
    out.values(i) = eig.eigenvalues()(n - 1 - i);
    out.vectors.col(i) = eig.eigenvectors().col(n - 1 - i);
  }
  canonicalize_signs(out.vectors);
  return out;
}

EigenPairs top_eigenpairs_lanczos(const Eigen::MatrixXd& a, int count, const LanczosOptions& opts) {
  check_args(a, count);
  const auto n = a.rows();
  const int max_basis = static_cast<int>(std::min<Eigen::Index>(n, opts.max_basis));
  Eigen::MatrixXd basis(n, max_basis);
  std::vector<double> alpha, beta;
  Rng rng(opts.seed);

  auto random_unit = [&](int existing) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.uniform(-1.0, 1.0);
    for (int pass = 0; pass < 2 && existing > 0; ++pass)
      v -= basis.leftCols(existing) * (basis.leftCols(existing).transpose() * v);
    return Eigen::VectorXd(v / v.norm());
  };

  basis.col(0) = random_unit(0);
  Eigen::VectorXd w(n);
  for (int j = 0; j < max_basis; ++j) {
    w.noalias() = a.selfadjointView<Eigen::Lower>() * basis.col(j);
    alpha.push_back(basis.col(j).dot(w));
    // Full reorthogonalization, two passes.
    for (int pass = 0; pass < 2; ++pass)
      w -= basis.leftCols(j + 1) * (basis.leftCols(j + 1).transpose() * w);
    const double b = w.norm();
    beta.push_back(b);

    const int m = j + 1;
    const bool last = m == max_basis;
    const bool invariant = b < 1e-14 * std::max(1.0, std::abs(alpha.back()));
    if (m >= count && (m % opts.check_every == 0 || last || invariant)) {
      Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
      for (int i = 0; i < m; ++i) {
        t(i, i) = alpha[static_cast<std::size_t>(i)];
        if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[static_cast<std::size_t>(i)];
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> small(t);
      bool converged = true;
      for (int i = 0; i < count; ++i) {
        const double residual = std::abs(b * small.eigenvectors()(m - 1, m - 1 - i));
        if (residual > opts.tolerance) converged = false;
      }
      // An invariant subspace only certifies the eigenpairs it contains; if it
      // is too small we continue with a fresh orthogonal direction.
      if (converged || (invariant && m == n)) {
        EigenPairs out;
        out.iterations = m;
        out.values.resize(count);
        out.vectors = basis.leftCols(m) * small.eigenvectors().rightCols(count).rowwise().reverse();
        for (int i = 0; i < count; ++i) out.values(i) = small.eigenvalues()(m - 1 - i);
        for (int i = 0; i < count; ++i) out.vectors.col(i).normalize();
        canonicalize_signs(out.vectors);
        return out;
      }
    }
    if (j + 1 < max_basis) {
      if (invariant) {
        basis.col(j + 1) = random_unit(j + 1);
        beta.back() = 0.0;
      } else {
        basis.col(j + 1) = w / b;
      }
    }
  }
  throw Error(ErrorKind::kNumeric, "Lanczos did not converge within " + std::to_string(max_basis) + " steps");
}

EigenPairs top_eigenpairs(const Eigen::MatrixXd& a, int count, const SolverOptions& opts) {
  if (a.rows() <= opts.dense_limit) return top_eigenpairs_dense(a, count);
  return top_eigenpairs_lanczos(a, count, opts.lanczos);
}

}  // namespace netequiv::eigen
