#include <benchmark/benchmark.h>

#include "netequiv/dmap.hpp"
#include "netequiv/eigensolver.hpp"
#include "netequiv/mahalanobis.hpp"
#include "netequiv/nn.hpp"
#include "netequiv/rng.hpp"

using namespace netequiv;

namespace {

Eigen::MatrixXd random_points(int n, int m, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd p(n, m);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < m; ++c) p(i, c) = rng.uniform(-1, 1);
  return p;
}

std::vector<Eigen::MatrixXd> random_pinvs(int n, int m, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Eigen::MatrixXd> out;
  for (int i = 0; i < n; ++i) {
    Eigen::MatrixXd f(m, m);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c) f(r, c) = rng.uniform(-1, 1);
    out.push_back(f * f.transpose());
  }
  return out;
}

void BM_SquaredDistances(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto pts = random_points(n, 5, 1);
  const auto pinvs = random_pinvs(n, 5, 2);
  for (auto _ : state) benchmark::DoNotOptimize(mahalanobis::squared_distance_matrix(pts, pinvs));
  state.SetComplexityN(n);
}
BENCHMARK(BM_SquaredDistances)->Arg(250)->Arg(1000)->Arg(2000)->Complexity(benchmark::oNSquared);

dmap::NormalizationChain circle_chain(int n) {
  Eigen::MatrixXd pts(n, 2);
  for (int i = 0; i < n; ++i) {
    const double t = 6.283185307179586 * i / n;
    pts.row(i) << std::cos(t), std::sin(t);
  }
  const std::vector<Eigen::MatrixXd> pinvs(static_cast<std::size_t>(n), Eigen::MatrixXd::Identity(2, 2));
  Eigen::MatrixXd d2 = mahalanobis::squared_distance_matrix(pts, pinvs);
  const double eps = mahalanobis::select_bandwidth(d2);
  return dmap::normalize(mahalanobis::kernel_from_squared_distances(std::move(d2), eps));
}

void BM_EigenDense(benchmark::State& state) {
  const auto chain = circle_chain(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(eigen::top_eigenpairs_dense(chain.t_hat, 10));
}
BENCHMARK(BM_EigenDense)->Arg(500)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_EigenLanczos(benchmark::State& state) {
  const auto chain = circle_chain(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(eigen::top_eigenpairs_lanczos(chain.t_hat, 10));
}
BENCHMARK(BM_EigenLanczos)->Arg(500)->Arg(1000)->Arg(3000)->Unit(benchmark::kMillisecond);

void BM_Forward(benchmark::State& state) {
  const auto net = nn::Mlp::initialize(nn::ArchitectureSpec::parse("2-5-5-5-5-2"), 3);
  const Eigen::Vector2d x(0.3, -0.2);
  for (auto _ : state) benchmark::DoNotOptimize(nn::forward(net, x));
}
BENCHMARK(BM_Forward);

void BM_TapJacobian(benchmark::State& state) {
  const auto net = nn::Mlp::initialize(nn::ArchitectureSpec::parse("2-5-5-5-5-2"), 3);
  const auto taps = nn::TapSelection::whole_layer(net.spec(), 4);
  const Eigen::VectorXd x = Eigen::Vector2d(0.3, -0.2);
  for (auto _ : state) benchmark::DoNotOptimize(nn::jacobian_to_taps(net, taps, x));
}
BENCHMARK(BM_TapJacobian);

}  // namespace

BENCHMARK_MAIN();
