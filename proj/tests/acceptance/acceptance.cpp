// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Usage: netequiv_acceptance [output_dir]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/oracles.hpp"
#include "netequiv/align.hpp"
#include "netequiv/dmap.hpp"
#include "netequiv/error.hpp"
#include "netequiv/experiments.hpp"
#include "netequiv/io.hpp"
#include "netequiv/mahalanobis.hpp"
#include "netequiv/nn.hpp"
#include "netequiv/rng.hpp"
#include "netequiv/sampling.hpp"
#include "netequiv/transform.hpp"

using namespace netequiv;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int number, const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << number << ". " << name << ": " << o.detail << std::endl;
  if (!o.pass) ++failures;
}

// Runs `fn`, turning exceptions into a failed outcome.
Outcome guarded(const std::function<Outcome()>& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

Eigen::MatrixXd random_matrix(int rows, int cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-1, 1);
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct ScenarioRun {
  json report;
  fs::path dir;
  double seconds = 0.0;
};

ScenarioRun run_default(experiments::ScenarioId id, const fs::path& dir) {
  auto cfg = experiments::ExperimentConfig::defaults(id);
  cfg.output_dir = dir;
  fs::remove_all(dir);
  const auto start = Clock::now();
  auto r = experiments::run_scenario(cfg);
  return {r.report, dir, seconds_since(start)};
}

// 1. Orthogonal Procrustes recovers a known orthogonal map from noiseless data.
Outcome kabsch_exactness() {
  const auto start = Clock::now();
  Rng rng(101);
  const int ells[] = {1, 2, 3, 6};
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int ell = ells[trial % 4];
    const Eigen::MatrixXd q = oracle::random_orthogonal(ell, rng);
    const Eigen::MatrixXd a = random_matrix(ell + 3, ell, rng);
    // Rows: b_i = Q a_i, i.e. B = A Q^T. The library returns O with b_i = O a_i.
    const auto o = align::kabsch_align(a, a * q.transpose());
    worst = std::max(worst, (o.matrix - q).norm());
  }
  const double t = seconds_since(start);
  return {worst < 1e-10 && t < 1.0, "max ||O - Q||_F = " + fmt(worst) + " (< 1e-10), " + fmt(t) + " s (< 1 s)"};
}

// 2. Kernel entries are unchanged by an invertible linear map applied to the
//    points and their neighborhood clouds.
Outcome gauge_invariance() {
  Rng rng(202);
  double worst = 0.0;
  int datasets = 0;
  while (datasets < 20) {
    const int m = datasets % 2 ? 5 : 3;
    const Eigen::MatrixXd a = random_matrix(m, m, rng);
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
    if (svd.singularValues()(0) / svd.singularValues()(m - 1) > 100.0) continue;
    ++datasets;
    const int n = 200, q = 20;
    const Eigen::MatrixXd pts = random_matrix(n, m, rng);
    std::vector<Eigen::MatrixXd> p1, p2;
    for (int i = 0; i < n; ++i) {
      const Eigen::MatrixXd cloud = (0.1 * random_matrix(q, m, rng)).rowwise() + pts.row(i);
      p1.push_back(mahalanobis::empirical_covariance(cloud).pseudoinverse);
      p2.push_back(mahalanobis::empirical_covariance(cloud * a.transpose()).pseudoinverse);
    }
    const Eigen::MatrixXd d1 = mahalanobis::squared_distance_matrix(pts, p1);
    const Eigen::MatrixXd d2 = mahalanobis::squared_distance_matrix(pts * a.transpose(), p2);
    const auto k1 = mahalanobis::kernel_from_squared_distances(d1, mahalanobis::select_bandwidth(d1));
    const auto k2 = mahalanobis::kernel_from_squared_distances(d2, mahalanobis::select_bandwidth(d2));
    // Relative error; entries below the smallest normal double are compared at that floor.
    const Eigen::ArrayXXd denom = k1.values.array().abs().max(std::numeric_limits<double>::min());
    worst = std::max(worst, ((k1.values - k2.values).array().abs() / denom).maxCoeff());
  }
  return {worst < 1e-6, "20 datasets, max relative kernel error " + fmt(worst) + " (< 1e-6)"};
}

// 3. Circle: the two kept coordinates are cos/sin up to an orthogonal map.
Outcome circle_oracle() {
  const auto start = Clock::now();
  Rng rng(303);
  const int n = 500;
  Eigen::MatrixXd pts(n, 2);
  for (int i = 0; i < n; ++i) {
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    pts.row(i) << std::cos(theta), std::sin(theta);
  }
  dmap::FitOptions opts;
  opts.ell = 2;
  const std::vector<mahalanobis::CovarianceEstimate> covs(n, mahalanobis::identity_covariance(2));
  const auto res = dmap::fit(pts, covs, opts);
  const double t = seconds_since(start);

  Eigen::MatrixXd e = res.model.embedding();
  for (int c = 0; c < 2; ++c) e.col(c) /= std::sqrt(e.col(c).squaredNorm() / n);
  const Eigen::MatrixXd truth = std::sqrt(2.0) * pts;
  const Eigen::Matrix2d o = oracle::grid_search_orthogonal(e, truth, 1e-4);
  const Eigen::MatrixXd rotated = e * o.transpose();
  const double corr = std::min(oracle::correlation(rotated.col(0), truth.col(0)),
                               oracle::correlation(rotated.col(1), truth.col(1)));
  const double row_dev = res.diagnostics.markov_row_sum_deviation;
  const double lead_dev = std::abs(res.diagnostics.leading_eigenvalue - 1.0);
  return {corr > 0.99 && row_dev < 1e-10 && lead_dev < 1e-10 && t < 10.0,
          "correlation " + fmt(corr) + " (> 0.99), row-sum deviation " + fmt(row_dev) +
              " (< 1e-10), |a_0 - 1| = " + fmt(lead_dev) + " (< 1e-10), " + fmt(t) + " s (< 10 s)"};
}

// 4. Different inputs: Mahalanobis embeddings agree, Euclidean ones do not.
Outcome different_inputs(const ScenarioRun& run) {
  const auto& r = run.report;
  const double mse1 = r.at("training")[0].at("training_mse"), mse2 = r.at("training")[1].at("training_mse");
  const double maha = r.at("alignment").at("normalized_aligned_rmse");
  const double eucl = r.at("euclidean_control").at("alignment").at("normalized_aligned_rmse");
  const bool pass = mse1 <= 1e-3 && mse2 <= 1e-3 && maha < 0.05 && eucl > 10.0 * maha && run.seconds < 300.0;
  return {pass, "training mse " + fmt(mse1) + " / " + fmt(mse2) + " (<= 1e-3), normalized rmse " + fmt(maha) +
                    " (< 0.05), euclidean " + fmt(eucl) + " (> 10x), " + fmt(run.seconds) + " s (< 300 s)"};
}

// 5. Parabola: the output-only pair folds outside the training half, the
//    hidden-tap transform does not fold anywhere.
Outcome parabola(const ScenarioRun& run) {
  const auto sweep = io::read_csv(run.dir / "fold_sweep_output.csv");
  int outside = 0;
  for (Eigen::Index i = 0; i < sweep.values.rows(); ++i)
    if (sweep.values(i, 4) != 0.0 && sweep.values(i, 0) > 0.0) ++outside;
  const int hidden = run.report.at("fold_hidden").at("violations");
  const bool pass = outside >= 1 && hidden == 0 && run.seconds < 300.0;
  return {pass, "output-pair violations in (0,1]: " + std::to_string(outside) + " (>= 1), hidden-tap violations " +
                    std::to_string(hidden) + " (== 0), " + fmt(run.seconds) + " s (< 300 s)"};
}

// 6. Vector field: embeddings agree away from the edge of the square.
Outcome vectorfield(const ScenarioRun& run) {
  const auto& r = run.report;
  const bool ranks = r.at("covariance_ranks").at("all_rank_two");
  const int corr = r.at("alignment").at("correspondences");
  const double disp = r.at("interior_displacement").at("median_over_diameter");
  const int n = r.at("config").at("n");
  const bool pass = n == 10000 && ranks && corr == 20 && disp < 0.1 && run.seconds < 600.0;
  return {pass, "n " + std::to_string(n) + ", all covariances rank 2: " + (ranks ? "yes" : "no") +
                    ", correspondences " + std::to_string(corr) + ", interior median displacement / diameter " +
                    fmt(disp) + " (< 0.1), " + fmt(run.seconds) + " s (< 600 s)"};
}

// 7. Tap Jacobians against central differences.
Outcome jacobians() {
  Rng rng(707);
  const char* archs[] = {"1-1-1", "1-8-8-8-1", "1-3-1", "2-5-5-5-5-2"};
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto spec = nn::ArchitectureSpec::parse(archs[i % 4]);
    const auto net = nn::Mlp::initialize(spec, 7000 + static_cast<std::uint64_t>(i));
    const int layer = 1 + (i / 4) % (spec.num_layers() - 1);
    const auto taps = nn::TapSelection::whole_layer(spec, layer);
    const Eigen::VectorXd x = random_matrix(spec.input_dim(), 1, rng);
    const Eigen::MatrixXd fd = oracle::fd_jacobian(net, taps, x);
    const Eigen::MatrixXd j = nn::jacobian_to_taps(net, taps, x);
    worst = std::max(worst, (j - fd).norm() / std::max(fd.norm(), 1e-12));
  }
  return {worst < 1e-5, "50 networks, max relative Frobenius error " + fmt(worst) + " (< 1e-5)"};
}

struct RoundTrip {
  int exact = 0;
  int total = 0;
  double median_error = 0.0;
};

// invert(apply(y)) on phi's references, and apply(y) against net2's taps at the same input.
RoundTrip round_trip(const transform::NetworkTransform& t, const Eigen::MatrixXd& y2_matched) {
  RoundTrip rt;
  rt.total = t.phi.n();
  std::vector<double> errors;
  for (int i = 0; i < rt.total; ++i) {
    const Eigen::VectorXd y1 = t.phi.reference_points().row(i).transpose();
    const Eigen::VectorXd y2 = transform::apply_transform(t, y1);
    if (transform::invert_transform(t, y2) == y1) ++rt.exact;
    errors.push_back((y2 - y2_matched.row(i).transpose()).norm());
  }
  std::nth_element(errors.begin(), errors.begin() + static_cast<std::ptrdiff_t>(errors.size() / 2), errors.end());
  rt.median_error = errors[errors.size() / 2];
  return rt;
}

// 8. Round trip on references, for the self-transform and for a network
//    whose hidden neurons are a permutation of the first one's.
Outcome round_trips(const ScenarioRun& di, const std::vector<const ScenarioRun*>& all) {
  const auto net = nn::load_network(di.dir / "network_1.json");
  const auto taps = nn::taps_from_json(di.report.at("training")[0].at("taps"));
  const auto base = sampling::sample_uniform(sampling::Box::interval(-1, 1), 990, 808);
  const auto nbhds = sampling::delta_ball_neighborhoods(base, 0.01, 11, 809);
  transform::BuildOptions bo;
  bo.fit1.pinv.max_rank = 1;
  bo.fit2.pinv.max_rank = 1;

  const auto self = transform::build_transform(net, taps, net, taps, nbhds, nbhds, bo);
  const Eigen::MatrixXd self_taps = nn::forward_with_taps_batch(net, taps, base.points);
  const auto rs = round_trip(self, self_taps);

  // Reverse the hidden neurons: an exactly equivalent network.
  auto w = net.weights();
  auto b = net.biases();
  w[0] = w[0].colwise().reverse().eval();
  b[0] = b[0].reverse().eval();
  w[1] = w[1].rowwise().reverse().eval();
  const nn::Mlp permuted(net.spec(), w, b, net.seed());
  const auto perm = transform::build_transform(net, taps, permuted, taps, nbhds, nbhds, bo);
  const auto rp = round_trip(perm, nn::forward_with_taps_batch(permuted, taps, base.points));

  std::string info;
  for (const auto* run : all)
    info += ", " + run->report.at("scenario").get<std::string>() + " cross-network exact fraction " +
            fmt(run->report.at("transform").at("round_trip_exact_fraction")) + " (info)";
  const bool pass = rs.exact == rs.total && rs.median_error < 1e-8 && rp.exact == rp.total && rp.median_error < 1e-8;
  return {pass, "self-transform exact " + std::to_string(rs.exact) + "/" + std::to_string(rs.total) +
                    ", median error " + fmt(rs.median_error) + " (< 1e-8); permuted-neuron network exact " +
                    std::to_string(rp.exact) + "/" + std::to_string(rp.total) + ", median error " +
                    fmt(rp.median_error) + info};
}

// 9. Every artifact except timings.json is byte-identical across reruns.
Outcome determinism(const std::vector<const ScenarioRun*>& first, const fs::path& root) {
  int files = 0;
  std::vector<std::string> differing;
  for (const auto* run : first) {
    const std::string scenario = run->report.at("scenario");
    const auto second = run_default(experiments::scenario_from_string(scenario), root / (scenario + "_rerun"));
    for (const auto& entry : fs::recursive_directory_iterator(run->dir)) {
      if (!entry.is_regular_file() || entry.path().filename() == "timings.json") continue;
      const auto rel = fs::relative(entry.path(), run->dir);
      ++files;
      if (!fs::exists(second.dir / rel) || slurp(entry.path()) != slurp(second.dir / rel))
        differing.push_back(scenario + "/" + rel.string());
    }
  }
  std::string detail = std::to_string(files) + " artifacts compared across 3 scenarios, " +
                       std::to_string(differing.size()) + " differ";
  for (const auto& d : differing) detail += " " + d;
  return {differing.empty() && files > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::create_directories(root);

  report(1, "Kabsch exactness", guarded(kabsch_exactness));
  report(2, "Mahalanobis gauge invariance", guarded(gauge_invariance));
  report(3, "Diffusion map circle oracle", guarded(circle_oracle));

  ScenarioRun di, pa, vf;
  bool have_di = false, have_pa = false, have_vf = false;
  report(4, "Different-inputs reproduction", guarded([&] {
           di = run_default(experiments::ScenarioId::kDifferentInputs42, root / "different_inputs_42");
           have_di = true;
           return different_inputs(di);
         }));
  report(5, "Parabola fold reproduction", guarded([&] {
           pa = run_default(experiments::ScenarioId::kParabola41, root / "parabola_41");
           have_pa = true;
           return parabola(pa);
         }));
  report(6, "Vector field reproduction", guarded([&] {
           vf = run_default(experiments::ScenarioId::kVectorField43, root / "vectorfield_43");
           have_vf = true;
           return vectorfield(vf);
         }));
  report(7, "Jacobian correctness", guarded(jacobians));

  std::vector<const ScenarioRun*> runs;
  if (have_di) runs.push_back(&di);
  if (have_pa) runs.push_back(&pa);
  if (have_vf) runs.push_back(&vf);
  report(8, "Transform round trip", guarded([&] {
           if (!have_di) return Outcome{false, "different-inputs run unavailable"};
           return round_trips(di, runs);
         }));
  report(9, "Determinism", guarded([&] {
           if (runs.size() != 3) return Outcome{false, "not every scenario completed"};
           return determinism(runs, root);
         }));

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
