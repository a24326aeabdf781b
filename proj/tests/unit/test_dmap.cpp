#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>

#include "netequiv/dmap.hpp"
#include "netequiv/error.hpp"
#include "netequiv/rng.hpp"
#include "oracles.hpp"

using namespace netequiv;
using namespace netequiv::dmap;
using mahalanobis::CovarianceEstimate;
using mahalanobis::KernelMatrix;

namespace {

std::vector<CovarianceEstimate> identities(int n, int m) {
  return std::vector<CovarianceEstimate>(static_cast<std::size_t>(n), mahalanobis::identity_covariance(m));
}

Eigen::MatrixXd circle(int n, Eigen::VectorXd* theta = nullptr) {
  Eigen::MatrixXd pts(n, 2);
  Eigen::VectorXd t(n);
  for (int i = 0; i < n; ++i) {
    t(i) = 2.0 * std::numbers::pi * i / n;
    pts.row(i) << std::cos(t(i)), std::sin(t(i));
  }
  if (theta) *theta = t;
  return pts;
}

// Flips columns of `b` to best match `a`.
Eigen::MatrixXd sign_aligned(const Eigen::MatrixXd& a, Eigen::MatrixXd b) {
  for (Eigen::Index c = 0; c < b.cols(); ++c)
    if (a.col(c).dot(b.col(c)) < 0) b.col(c) *= -1.0;
  return b;
}

}  // namespace

TEST(Normalize, DiagonalKernelIsFixedPoint) {
  const auto chain = normalize(KernelMatrix{Eigen::MatrixXd::Identity(4, 4), 1.0});
  EXPECT_EQ(chain.p_diag, Eigen::VectorXd::Ones(4));
  EXPECT_EQ(chain.t_hat, Eigen::MatrixXd::Identity(4, 4));
}

TEST(Normalize, TwoByTwoClosedForm) {
  // P = (1+a) I, W = K / (1+a)^2, Q = I / (1+a), That = K / (1+a).
  const double a = 0.3;
  Eigen::Matrix2d k;
  k << 1, a, a, 1;
  const auto chain = normalize(KernelMatrix{k, 1.0});
  EXPECT_LT((chain.p_diag.array() - (1 + a)).abs().maxCoeff(), 1e-15);
  EXPECT_LT((chain.w() - k / ((1 + a) * (1 + a))).norm(), 1e-15);
  EXPECT_LT((chain.q_diag.array() - 1 / (1 + a)).abs().maxCoeff(), 1e-15);
  EXPECT_LT((chain.t_hat - k / (1 + a)).norm(), 1e-15);

  // Eigenpairs of That: 1 on (1,1)/sqrt2, (1-a)/(1+a) on (1,-1)/sqrt2.
  const auto pairs = spectral_decompose(chain, 2);
  EXPECT_NEAR(pairs.values(0), 1.0, 1e-15);
  EXPECT_NEAR(pairs.values(1), (1 - a) / (1 + a), 1e-15);
  EXPECT_NEAR(pairs.vectors(0, 0), std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(pairs.vectors(1, 0), std::sqrt(0.5), 1e-15);
  // The second vector is an exact tie in magnitude, so its sign is set by rounding.
  EXPECT_NEAR(std::abs(pairs.vectors(0, 1)), std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(pairs.vectors(1, 1), -pairs.vectors(0, 1), 1e-15);
}

TEST(Normalize, ConstantKernel) {
  const auto chain = normalize(KernelMatrix{Eigen::MatrixXd::Ones(5, 5), 1.0});
  EXPECT_LT((chain.t_hat.array() - 0.2).abs().maxCoeff(), 1e-15);
  const auto pairs = spectral_decompose(chain, 3);
  EXPECT_NEAR(pairs.values(0), 1.0, 1e-14);
  EXPECT_NEAR(pairs.values(1), 0.0, 1e-14);
  EXPECT_NEAR(pairs.values(2), 0.0, 1e-14);
}

TEST(Normalize, ZeroRowIsDegenerate) {
  Eigen::MatrixXd k = Eigen::MatrixXd::Identity(3, 3);
  k(1, 1) = 0.0;
  try {
    normalize(KernelMatrix{k, 1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerateKernel);
  }
}

TEST(Normalize, MarkovIsRowStochasticAndStationaryVector) {
  Rng rng(11);
  Eigen::MatrixXd pts(60, 3);
  for (int i = 0; i < 60; ++i) pts.row(i) << rng.uniform(), rng.uniform(), rng.uniform();
  std::vector<Eigen::MatrixXd> pinvs(60, Eigen::MatrixXd::Identity(3, 3));
  const auto chain = normalize(mahalanobis::kernel_matrix(pts, pinvs, 0.05));
  const Eigen::MatrixXd t = chain.markov();
  EXPECT_LT((t.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_GE(t.minCoeff(), 0.0);
  EXPECT_LT((chain.t_hat - chain.t_hat.transpose()).norm(), 1e-14);

  const auto pairs = spectral_decompose(chain, 2);
  EXPECT_NEAR(pairs.values(0), 1.0, 1e-10);
  const Eigen::VectorXd stationary = chain.q_diag.cwiseSqrt().normalized();
  EXPECT_NEAR(std::abs(pairs.vectors.col(0).dot(stationary)), 1.0, 1e-10);
}

TEST(Harmonics, StripKeepsIndependentDirections) {
  Rng rng(21);
  const int n = 800;
  Eigen::MatrixXd cols(n, 4);
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(0, 4), y = rng.uniform(0, 1);
    cols.row(i) << 1.0, x, x * x, y;
  }
  const auto r = remove_harmonics(cols, 2);
  EXPECT_EQ(r.kept, (std::vector<int>{1, 3}));
  EXPECT_TRUE(std::isnan(r.residuals[0]));
  EXPECT_LT(r.residuals[2], 0.1);
  EXPECT_GT(r.residuals[3], 0.5);
}

TEST(Harmonics, OneDimensionalKeepsFirst) {
  const int n = 300;
  Eigen::MatrixXd cols(n, 4);
  for (int i = 0; i < n; ++i) {
    const double t = std::numbers::pi * i / (n - 1);
    cols.row(i) << 1.0, std::cos(t), std::cos(2 * t), std::cos(3 * t);
  }
  EXPECT_EQ(remove_harmonics(cols, 1).kept, std::vector<int>{1});
  try {
    remove_harmonics(cols, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInsufficientDirections);
    EXPECT_NE(std::string(e.what()).find("residuals"), std::string::npos);
  }
}

TEST(Harmonics, IndependentCoordinatesAllKept) {
  Rng rng(3);
  Eigen::MatrixXd cols(500, 4);
  for (int i = 0; i < 500; ++i) cols.row(i) << 1.0, rng.uniform(), rng.uniform(), rng.uniform();
  EXPECT_EQ(remove_harmonics(cols, 3).kept, (std::vector<int>{1, 2, 3}));
}

TEST(Fit, CircleRecoversCosSin) {
  Eigen::VectorXd theta;
  const auto pts = circle(500, &theta);
  FitOptions opts;
  opts.ell = 2;
  const auto res = fit(pts, identities(500, 2), opts);
  EXPECT_NEAR(res.diagnostics.leading_eigenvalue, 1.0, 1e-10);
  EXPECT_LT(res.diagnostics.markov_row_sum_deviation, 1e-10);

  Eigen::MatrixXd e = res.model.embedding();
  for (int c = 0; c < 2; ++c) e.col(c) /= std::sqrt(e.col(c).squaredNorm() / 500.0);
  const Eigen::MatrixXd truth = std::sqrt(2.0) * pts;
  const Eigen::Matrix2d o = oracle::grid_search_orthogonal(e, truth, 1e-3);
  const Eigen::MatrixXd rotated = e * o.transpose();
  EXPECT_GT(oracle::correlation(rotated.col(0), truth.col(0)), 0.99);
  EXPECT_GT(oracle::correlation(rotated.col(1), truth.col(1)), 0.99);
}

TEST(Fit, UnitEigenvalueIsFixedByRescaling) {
  FitOptions opts;
  opts.harmonics.drop_first = false;
  opts.epsilon = 0.01;
  const auto res = fit(circle(100), identities(100, 2), opts);
  EXPECT_EQ(res.model.kept_indices(), std::vector<int>{0});
  EXPECT_NEAR(res.model.eigenvalues()(0), 1.0, 1e-9);
}

TEST(Fit, PermutationEquivariant) {
  Rng rng(4);
  const int n = 200;
  Eigen::MatrixXd pts(n, 2);
  for (int i = 0; i < n; ++i) {
    const double t = rng.uniform(0, 3);
    pts.row(i) << t, std::sin(t);
  }
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = (i * 37) % n;
  Eigen::MatrixXd permuted(n, 2);
  for (int i = 0; i < n; ++i) permuted.row(i) = pts.row(perm[static_cast<std::size_t>(i)]);
  FitOptions opts;
  const auto a = fit(pts, identities(n, 2), opts).model;
  const auto b = fit(permuted, identities(n, 2), opts).model;
  Eigen::MatrixXd expected(n, 1);
  for (int i = 0; i < n; ++i) expected.row(i) = a.embedding().row(perm[static_cast<std::size_t>(i)]);
  EXPECT_LT((sign_aligned(expected, b.embedding()) - expected).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(a.epsilon(), b.epsilon(), 1e-12 * a.epsilon());
}

TEST(Fit, InvariantUnderLinearReparametrization) {
  // A noisy curve in R^3 with full-rank covariances; y -> A y, C -> A C A^T.
  Rng rng(5);
  const int n = 300;
  Eigen::Matrix3d a;
  a << 2, 0.5, 0, -0.3, 1, 0.2, 0.1, 0.4, 1.5;
  Eigen::MatrixXd pts(n, 3);
  std::vector<CovarianceEstimate> c1, c2;
  for (int i = 0; i < n; ++i) {
    const double t = rng.uniform(0, 2);
    pts.row(i) << t, t * t, std::sin(2 * t);
    const Eigen::Vector3d tangent(1, 2 * t, 2 * std::cos(2 * t));
    const Eigen::Matrix3d c = 1e-4 * tangent * tangent.transpose() + 1e-6 * Eigen::Matrix3d::Identity();
    c1.push_back(mahalanobis::from_covariance(c, mahalanobis::CovarianceSource::kEmpirical));
    c2.push_back(mahalanobis::from_covariance(a * c * a.transpose(), mahalanobis::CovarianceSource::kEmpirical));
  }
  FitOptions opts;
  const auto m1 = fit(pts, c1, opts).model;
  const auto m2 = fit(pts * a.transpose(), c2, opts).model;
  EXPECT_NEAR(m1.epsilon(), m2.epsilon(), 1e-6 * m1.epsilon());
  const Eigen::MatrixXd e2 = sign_aligned(m1.embedding(), m2.embedding());
  EXPECT_LT((e2 - m1.embedding()).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Fit, ErrorsCarryStage) {
  FitOptions opts;
  opts.ell = 20;
  try {
    fit(circle(15), identities(15, 2), opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInsufficientPoints);
    EXPECT_EQ(e.stage(), "validate");
  }
  opts.ell = 1;
  try {
    fit(Eigen::MatrixXd::Zero(30, 2), identities(30, 2), opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerateBandwidth);
    EXPECT_EQ(e.stage(), "bandwidth");
  }
}

TEST(Fit, FromNeighborhoods) {
  const auto base = sampling::sample_uniform(sampling::Box::interval(-1, 1), 150, 1);
  const auto nbhds = sampling::delta_ball_neighborhoods(base, 0.05, 20, 2);
  FitOptions opts;
  const auto res = fit(nbhds, opts);
  EXPECT_EQ(res.model.reference_points(), nbhds.base_points);
  EXPECT_EQ(res.diagnostics.covariance_ranks, std::vector<int>(150, 1));
  // The single diffusion coordinate of an interval tracks x; noisy cloud
  // covariances only perturb it locally.
  EXPECT_GT(std::abs(oracle::correlation(base.points.col(0), res.model.embedding().col(0))), 0.95);
}

TEST(Model, EmbedAndInverseOnReferences) {
  Rng rng(6);
  Eigen::MatrixXd refs(40, 3), emb(40, 2);
  for (int i = 0; i < 40; ++i) {
    refs.row(i) << rng.uniform(), rng.uniform(), rng.uniform();
    emb.row(i) << rng.uniform(), rng.uniform();
  }
  DiffusionMapModel model(refs, emb, Eigen::Vector2d(0.9, 0.8), Eigen::Vector2d(0.9, 0.8), 1.0, {1, 2});
  for (int i = 0; i < 40; ++i) {
    EXPECT_EQ(model.embed(refs.row(i).transpose()), emb.row(i).transpose());
    EXPECT_EQ(model.inverse_embed(model.embed(refs.row(i).transpose())), refs.row(i).transpose());
  }
  for (int trial = 0; trial < 100; ++trial) {
    const int i = static_cast<int>(rng.below(40)), j = static_cast<int>(rng.below(40));
    const Eigen::VectorXd mid = 0.5 * (refs.row(i) + refs.row(j)).transpose();
    EXPECT_EQ(model.nearest_reference(mid), oracle::nearest_row(refs, mid));
    const Eigen::VectorXd zmid = 0.5 * (emb.row(i) + emb.row(j)).transpose();
    EXPECT_EQ(model.nearest_embedding(zmid), oracle::nearest_row(emb, zmid));
  }
}

TEST(Model, TiesPickLowestIndex) {
  Eigen::MatrixXd refs(3, 1), emb(3, 1);
  refs << 0, 2, 2;
  emb << 5, 6, 7;
  DiffusionMapModel model(refs, emb, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1), 1.0, {1});
  EXPECT_EQ(model.embed(Eigen::VectorXd::Ones(1))(0), 5.0);
  EXPECT_EQ(model.embed(Eigen::VectorXd::Constant(1, 2.0))(0), 6.0);
}

TEST(Model, EmptyModelIsStateError) {
  DiffusionMapModel model;
  try {
    model.embed(Eigen::VectorXd::Zero(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kState);
  }
}

TEST(Model, SaveLoadRoundTrip) {
  FitOptions opts;
  opts.ell = 2;
  const auto model = fit(circle(80), identities(80, 2), opts).model;
  const auto dir = std::filesystem::path(testing::TempDir()) / "dmap_model";
  std::filesystem::remove_all(dir);
  model.save(dir);
  const auto back = DiffusionMapModel::load(dir);
  EXPECT_EQ(back.reference_points(), model.reference_points());
  EXPECT_EQ(back.embedding(), model.embedding());
  EXPECT_EQ(back.eigenvalues(), model.eigenvalues());
  EXPECT_EQ(back.raw_eigenvalues(), model.raw_eigenvalues());
  EXPECT_EQ(back.epsilon(), model.epsilon());
  EXPECT_EQ(back.kept_indices(), model.kept_indices());
}
