#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "netequiv/align.hpp"
#include "netequiv/dmap.hpp"
#include "netequiv/nn.hpp"
#include "netequiv/sampling.hpp"

namespace netequiv::transform {

enum class InverseInterpolation { kNearest, kLinear1D };

// T = psi^-1 o O o phi, from network 1 tap activations to network 2 tap activations.
struct NetworkTransform {
  dmap::DiffusionMapModel phi;
  dmap::DiffusionMapModel psi;
  align::OrthogonalMap map;
  nn::TapSelection taps1;
  nn::TapSelection taps2;
  std::string provenance;
  InverseInterpolation inverse_interpolation = InverseInterpolation::kNearest;
  // residual / RMS norm of the target correspondences
  double normalized_residual = 0.0;
  bool poor_alignment = false;
  std::vector<std::string> warnings;

  int ell() const { return phi.ell(); }
};

struct BuildOptions {
  dmap::FitOptions fit1;
  dmap::FitOptions fit2;
  // Explicit (phi index, psi index) pairs. Empty: the first
  // correspondence_count matched indices.
  std::vector<std::pair<int, int>> correspondences;
  // 0 picks max(ell, 10).
  int correspondence_count = 0;
  int intrinsic_dim = 1;
  double poor_alignment_threshold = 0.1;
  InverseInterpolation inverse_interpolation = InverseInterpolation::kNearest;
  std::string provenance;
};

// Estimates O from the correspondences and packages the transform.
NetworkTransform assemble(dmap::DiffusionMapModel phi, dmap::DiffusionMapModel psi, nn::TapSelection taps1,
                          nn::TapSelection taps2, const BuildOptions& opts);

// Full pipeline from input-space neighborhoods: evaluate taps, fit both
// diffusion maps, align, assemble.
NetworkTransform build_transform(const nn::Mlp& net1, const nn::TapSelection& taps1, const nn::Mlp& net2,
                                 const nn::TapSelection& taps2, const sampling::NeighborhoodSet& nbhds1,
                                 const sampling::NeighborhoodSet& nbhds2, const BuildOptions& opts);

Eigen::VectorXd apply_transform(const NetworkTransform& t, const Eigen::VectorXd& y1);
Eigen::VectorXd invert_transform(const NetworkTransform& t, const Eigen::VectorXd& y2);

struct FoldOptions {
  // Moves smaller than this fraction of the observable's range are noise.
  double tolerance = 1e-3;
  // A move where |dg1| < flat_ratio * |dg2| (range-normalized) means g1 is
  // flat while g2 changes.
  double flat_ratio = 1e-3;
};

struct FoldReport {
  std::vector<double> probe_points;
  std::vector<bool> injectivity_flags;  // true where a violation ends
  std::optional<double> first_failure;
  int monotonicity_pairs_violated = 0;

  bool invertible() const { return monotonicity_pairs_violated == 0; }
};

// Is g2 an invertible function of g1 along a sorted 1D sweep?
FoldReport detect_fold(std::span<const double> probes, std::span<const double> g1, std::span<const double> g2,
                       const FoldOptions& opts = {});

struct ConditionSummary {
  std::vector<double> condition_numbers;  // per probed reference point
  double median = 0.0;
  double p95 = 0.0;
  double max = 0.0;
};

// Local linear condition estimates of the discrete map over phi's reference
// points (diagnostic only).
ConditionSummary local_condition_estimates(const NetworkTransform& t, int intrinsic_dim, int neighbors = 8,
                                           int max_probes = 1000);

// Directory: phi/, psi/, orthogonal_map.json, taps.json, manifest.json.
void save_bundle(const std::filesystem::path& dir, const NetworkTransform& t);
NetworkTransform load_bundle(const std::filesystem::path& dir);

}  // namespace netequiv::transform
