#include "netequiv/transform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "netequiv/error.hpp"
#include "netequiv/io.hpp"

namespace netequiv::transform {

NetworkTransform assemble(dmap::DiffusionMapModel phi, dmap::DiffusionMapModel psi, nn::TapSelection taps1,
                          nn::TapSelection taps2, const BuildOptions& opts) {
  if (phi.empty() || psi.empty()) throw Error(ErrorKind::kState, "cannot align empty diffusion maps", "align");
  if (phi.ell() != psi.ell()) {
    throw Error(ErrorKind::kAlignment,
                "embedding dimensions differ (" + std::to_string(phi.ell()) + " vs " + std::to_string(psi.ell()) + ")",
                "align");
  }
  const int ell = phi.ell();
  std::vector<std::pair<int, int>> pairs = opts.correspondences;
  if (pairs.empty()) {
    const int count = opts.correspondence_count > 0 ? opts.correspondence_count : std::max(ell, 10);
    if (count > std::min(phi.n(), psi.n())) {
      throw Error(ErrorKind::kAlignment, "requested " + std::to_string(count) + " implicit correspondences but models have " +
                                             std::to_string(phi.n()) + " and " + std::to_string(psi.n()) + " points",
                  "align");
    }
    for (int i = 0; i < count; ++i) pairs.emplace_back(i, i);
  }
  if (static_cast<int>(pairs.size()) < ell) {
    throw Error(ErrorKind::kAlignment, "need at least " + std::to_string(ell) + " correspondences, got " +
                                           std::to_string(pairs.size()),
                "align");
  }
  Eigen::MatrixXd a(static_cast<Eigen::Index>(pairs.size()), ell), b(static_cast<Eigen::Index>(pairs.size()), ell);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    const auto [i, j] = pairs[r];
    if (i < 0 || i >= phi.n() || j < 0 || j >= psi.n())
      throw Error(ErrorKind::kAlignment, "correspondence " + std::to_string(r) + " is out of range", "align");
    a.row(static_cast<Eigen::Index>(r)) = phi.embedding().row(i);
    b.row(static_cast<Eigen::Index>(r)) = psi.embedding().row(j);
  }

  NetworkTransform t;
  t.map = align::kabsch_align(a, b);
  const double scale = std::sqrt(b.squaredNorm() / static_cast<double>(b.rows()));
  t.normalized_residual = scale > 0.0 ? t.map.residual / scale : 0.0;
  t.poor_alignment = t.normalized_residual > opts.poor_alignment_threshold;
  if (t.map.ambiguous) {
    t.warnings.push_back("alignment is ambiguous: cross-covariance rank " + std::to_string(t.map.cross_rank) + " < " +
                         std::to_string(ell));
  }
  if (t.poor_alignment) {
    t.warnings.push_back("poor alignment: normalized residual " + io::format_double(t.normalized_residual));
  }
  if (opts.inverse_interpolation == InverseInterpolation::kLinear1D && ell != 1) {
    throw Error(ErrorKind::kSpec, "linear inverse interpolation requires a one-dimensional embedding", "align");
  }
  t.phi = std::move(phi);
  t.psi = std::move(psi);
  t.taps1 = std::move(taps1);
  t.taps2 = std::move(taps2);
  t.provenance = opts.provenance;
  t.inverse_interpolation = opts.inverse_interpolation;
  return t;
}

NetworkTransform build_transform(const nn::Mlp& net1, const nn::TapSelection& taps1, const nn::Mlp& net2,
                                 const nn::TapSelection& taps2, const sampling::NeighborhoodSet& nbhds1,
                                 const sampling::NeighborhoodSet& nbhds2, const BuildOptions& opts) {
  std::vector<std::string> warnings;
  for (const auto& [net, taps, label] : {std::tuple{&net1, &taps1, "network 1"}, std::tuple{&net2, &taps2, "network 2"}}) {
    const auto check = run_stage("taps", [&] { return nn::check_whitney(net->spec(), *taps, opts.intrinsic_dim); });
    if (!check.valid) warnings.push_back(std::string(label) + " taps violate the 2d+1 rule: " + check.message);
  }
  if (opts.correspondences.empty() && nbhds1.n() != nbhds2.n()) {
    throw Error(ErrorKind::kShape, "implicit correspondences need equally sized neighborhood sets", "validate");
  }
  const auto tap1 = run_stage("evaluate-1", [&] { return sampling::evaluate_neighborhoods(nbhds1, net1, taps1); });
  const auto tap2 = run_stage("evaluate-2", [&] { return sampling::evaluate_neighborhoods(nbhds2, net2, taps2); });
  auto phi = run_stage("fit-phi", [&] { return dmap::fit(tap1, opts.fit1); });
  auto psi = run_stage("fit-psi", [&] { return dmap::fit(tap2, opts.fit2); });
  NetworkTransform t = assemble(std::move(phi.model), std::move(psi.model), taps1, taps2, opts);
  t.warnings.insert(t.warnings.begin(), warnings.begin(), warnings.end());
  return t;
}

namespace {

// Piecewise-linear inverse of a 1D embedding: reference points ordered by
// embedding value, clamped at the ends.
Eigen::VectorXd linear_inverse_1d(const dmap::DiffusionMapModel& model, double z) {
  const auto& emb = model.embedding();
  std::vector<int> order(static_cast<std::size_t>(model.n()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return emb(a, 0) < emb(b, 0); });
  if (z <= emb(order.front(), 0)) return model.reference_points().row(order.front()).transpose();
  if (z >= emb(order.back(), 0)) return model.reference_points().row(order.back()).transpose();
  const auto it = std::lower_bound(order.begin(), order.end(), z, [&](int idx, double v) { return emb(idx, 0) < v; });
  const int hi = *it, lo = *(it - 1);
  const double span = emb(hi, 0) - emb(lo, 0);
  const double w = span > 0.0 ? (z - emb(lo, 0)) / span : 0.0;
  return ((1.0 - w) * model.reference_points().row(lo) + w * model.reference_points().row(hi)).transpose();
}

}  // namespace

Eigen::VectorXd apply_transform(const NetworkTransform& t, const Eigen::VectorXd& y1) {
  const Eigen::VectorXd z = align::apply(t.map, t.phi.embed(y1));
  if (t.inverse_interpolation == InverseInterpolation::kLinear1D) return linear_inverse_1d(t.psi, z(0));
  return t.psi.inverse_embed(z);
}

Eigen::VectorXd invert_transform(const NetworkTransform& t, const Eigen::VectorXd& y2) {
  const Eigen::VectorXd z = align::apply_inverse(t.map, t.psi.embed(y2));
  if (t.inverse_interpolation == InverseInterpolation::kLinear1D) return linear_inverse_1d(t.phi, z(0));
  return t.phi.inverse_embed(z);
}

FoldReport detect_fold(std::span<const double> probes, std::span<const double> g1, std::span<const double> g2,
                       const FoldOptions& opts) {
  const std::size_t n = probes.size();
  if (g1.size() != n || g2.size() != n) throw Error(ErrorKind::kShape, "fold sweep arrays differ in length");
  if (n < 3) throw Error(ErrorKind::kInsufficientProbe, "fold detection needs at least 3 probe points");
  for (std::size_t i = 1; i < n; ++i)
    if (probes[i] < probes[i - 1]) throw Error(ErrorKind::kDomain, "probe sweep must be sorted");

  auto normalized = [](std::span<const double> g) {
    const auto [lo, hi] = std::minmax_element(g.begin(), g.end());
    const double range = *hi - *lo;
    std::vector<double> out(g.size(), 0.0);
    if (range > 0.0)
      for (std::size_t i = 0; i < g.size(); ++i) out[i] = (g[i] - *lo) / range;
    return out;
  };
  const auto u = normalized(g1);
  const auto v = normalized(g2);

  FoldReport report;
  report.probe_points.assign(probes.begin(), probes.end());
  report.injectivity_flags.assign(n, false);
  std::size_t anchor = 0;
  int orientation = 0;
  for (std::size_t k = 1; k < n; ++k) {
    const double du = u[k] - u[anchor];
    const double dv = v[k] - v[anchor];
    if (std::max(std::abs(du), std::abs(dv)) < opts.tolerance) continue;
    bool violation = false;
    if (std::abs(du) < opts.flat_ratio * std::abs(dv)) {
      violation = true;  // g2 changes where g1 does not
    } else if (std::abs(dv) >= opts.flat_ratio * std::abs(du)) {
      const int sign = du * dv > 0.0 ? 1 : -1;
      if (orientation == 0) orientation = sign;
      else if (sign != orientation) violation = true;
    }
    if (violation) {
      report.injectivity_flags[k] = true;
      ++report.monotonicity_pairs_violated;
      if (!report.first_failure) report.first_failure = probes[k];
    }
    anchor = k;
  }
  return report;
}

ConditionSummary local_condition_estimates(const NetworkTransform& t, int intrinsic_dim, int neighbors, int max_probes) {
  const auto& refs = t.phi.reference_points();
  const int n = t.phi.n();
  if (intrinsic_dim < 1) throw Error(ErrorKind::kShape, "intrinsic dimension must be >= 1");
  if (neighbors < intrinsic_dim || neighbors >= n) throw Error(ErrorKind::kShape, "invalid neighbor count");
  // T on every reference point of phi.
  Eigen::MatrixXd images(n, t.psi.dim());
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd z = align::apply(t.map, t.phi.embedding().row(i).transpose());
    images.row(i) = t.psi.reference_points().row(t.psi.nearest_embedding(z));
  }
  ConditionSummary out;
  const int probes = std::min(n, max_probes);
  std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(n));
  for (int pi = 0; pi < probes; ++pi) {
    const int i = static_cast<int>(static_cast<long long>(pi) * n / probes);
    for (int j = 0; j < n; ++j) dist[static_cast<std::size_t>(j)] = {(refs.row(j) - refs.row(i)).squaredNorm(), j};
    std::partial_sort(dist.begin(), dist.begin() + neighbors + 1, dist.end());
    Eigen::MatrixXd dx(neighbors, refs.cols()), dy(neighbors, images.cols());
    for (int r = 0; r < neighbors; ++r) {
      const int j = dist[static_cast<std::size_t>(r + 1)].second;
      dx.row(r) = refs.row(j) - refs.row(i);
      dy.row(r) = images.row(j) - images.row(i);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> sx(dx, Eigen::ComputeThinV), sy(dy, Eigen::ComputeThinV);
    const Eigen::MatrixXd cx = dx * sx.matrixV().leftCols(std::min<Eigen::Index>(intrinsic_dim, sx.matrixV().cols()));
    const Eigen::MatrixXd cy = dy * sy.matrixV().leftCols(std::min<Eigen::Index>(intrinsic_dim, sy.matrixV().cols()));
    double cond = std::numeric_limits<double>::infinity();
    if (cx.cols() == intrinsic_dim && cy.cols() == intrinsic_dim) {
      const Eigen::MatrixXd local = cx.completeOrthogonalDecomposition().solve(cy);
      Eigen::JacobiSVD<Eigen::MatrixXd> sl(local);
      const double smin = sl.singularValues().minCoeff();
      if (smin > 0.0) cond = sl.singularValues().maxCoeff() / smin;
    }
    out.condition_numbers.push_back(cond);
  }
  std::vector<double> sorted = out.condition_numbers;
  std::sort(sorted.begin(), sorted.end());
  out.median = sorted[sorted.size() / 2];
  out.p95 = sorted[std::min(sorted.size() - 1, sorted.size() * 95 / 100)];
  out.max = sorted.back();
  return out;
}

void save_bundle(const std::filesystem::path& dir, const NetworkTransform& t) {
  std::filesystem::create_directories(dir);
  t.phi.save(dir / "phi");
  t.psi.save(dir / "psi");
  align::save(dir / "orthogonal_map.json", t.map);
  io::write_json(dir / "taps.json", {{"taps1", nn::to_json(t.taps1)}, {"taps2", nn::to_json(t.taps2)}});
  nlohmann::json manifest;
  manifest["format"] = "netequiv.transform/1";
  manifest["provenance"] = t.provenance;
  manifest["ell"] = t.ell();
  manifest["inverse_interpolation"] =
      t.inverse_interpolation == InverseInterpolation::kLinear1D ? "linear_1d" : "nearest";
  manifest["normalized_residual"] = t.normalized_residual;
  manifest["poor_alignment"] = t.poor_alignment;
  manifest["warnings"] = t.warnings;
  io::write_json(dir / "manifest.json", manifest);
}

NetworkTransform load_bundle(const std::filesystem::path& dir) {
  const auto manifest = io::read_json(dir / "manifest.json");
  const auto taps = io::read_json(dir / "taps.json");
  NetworkTransform t;
  try {
    t.phi = dmap::DiffusionMapModel::load(dir / "phi");
    t.psi = dmap::DiffusionMapModel::load(dir / "psi");
    t.map = align::load(dir / "orthogonal_map.json");
    t.taps1 = nn::taps_from_json(taps.at("taps1"));
    t.taps2 = nn::taps_from_json(taps.at("taps2"));
    t.provenance = manifest.value("provenance", std::string{});
    t.inverse_interpolation = manifest.value("inverse_interpolation", std::string{"nearest"}) == "linear_1d"
                                  ? InverseInterpolation::kLinear1D
                                  : InverseInterpolation::kNearest;
    t.normalized_residual = manifest.value("normalized_residual", 0.0);
    t.poor_alignment = manifest.value("poor_alignment", false);
    t.warnings = manifest.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kIo, dir.string() + ": malformed transform bundle: " + e.what());
  }
  if (t.phi.ell() != t.psi.ell() || t.map.dim() != t.phi.ell())
    throw Error(ErrorKind::kShape, dir.string() + ": bundle dimensions disagree");
  return t;
}

}  // namespace netequiv::transform
