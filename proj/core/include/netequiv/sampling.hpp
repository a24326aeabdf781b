#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "netequiv/nn.hpp"

namespace netequiv::sampling {

// Axis-aligned box; an interval in one dimension.
struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  static Box interval(double lo, double hi);
  static Box square(double lo, double hi);

  int dim() const { return static_cast<int>(lower.size()); }
  double volume() const;
  bool contains(const Eigen::VectorXd& x, double tol = 0.0) const;
  std::string describe() const;
};

struct Dataset {
  Eigen::MatrixXd points;  // n x k
  Box domain;
  std::uint64_t seed = 0;
};

// n i.i.d. uniform points. Throws kDomain for a zero-volume box.
Dataset sample_uniform(const Box& domain, int n, std::uint64_t seed);

// Evenly spaced points from lo to hi inclusive.
Eigen::VectorXd linspace(double lo, double hi, int count);

struct NeighborhoodSet {
  std::vector<Eigen::MatrixXd> clouds;  // n clouds, each q x m
  Eigen::MatrixXd base_points;          // n x m, generating centers
  std::uint64_t seed = 0;
  std::string generator;

  int n() const { return static_cast<int>(clouds.size()); }
  int q() const { return clouds.empty() ? 0 : static_cast<int>(clouds.front().rows()); }
  int m() const { return static_cast<int>(base_points.cols()); }

  Eigen::MatrixXd cloud_means() const;
  // Throws kShape when clouds are ragged or disagree with base_points.
  void validate() const;
};

// For every point, q uniform samples of the delta-ball around it. The ball is
// not clipped to the dataset domain.
NeighborhoodSet delta_ball_neighborhoods(const Dataset& data, double delta, int q, std::uint64_t seed);

enum class MapId { kIdentity, kSineWarp, kQuadraticShear };

// Closed-form diffeomorphisms between input domains.
//  kSineWarp:       S(x) = 2 + 2x + sin(4 pi x) / (3 pi)                 (1D)
//  kQuadraticShear: s(x1,x2) = (x1/a + x1^2/a^2 + x2/b, x1^2/a^2 + x2/b) (2D)
struct DiffeomorphismSpec {
  MapId id = MapId::kIdentity;
  double alpha = 20.0;
  double beta = 10.0;

  static DiffeomorphismSpec from_name(const std::string& name);
  std::string name() const;
  // -1 when the map accepts any dimension.
  int dim() const;

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const;
  // Newton iteration for the sine warp, closed form for the shear.
  Eigen::VectorXd inverse(const Eigen::VectorXd& y) const;
};

double sine_warp(double x);
double sine_warp_derivative(double x);

// Grid check that the map is injective on `domain`: the Jacobian determinant
// keeps one sign and grid images are pairwise distinct.
bool check_injective(const DiffeomorphismSpec& map, const Box& domain, int points_per_dim = 201);

NeighborhoodSet pushforward_neighborhoods(const NeighborhoodSet& nbhds, const DiffeomorphismSpec& map);

// Every cloud point and base point through forward_with_taps; m becomes the tap count.
NeighborhoodSet evaluate_neighborhoods(const NeighborhoodSet& nbhds, const nn::Mlp& net, const nn::TapSelection& taps);

// Directory layout: manifest.json, base_points.csv, clouds/cloud_NNNNNN.csv.
void save_neighborhoods(const std::filesystem::path& dir, const NeighborhoodSet& nbhds);
NeighborhoodSet load_neighborhoods(const std::filesystem::path& dir);

}  // namespace netequiv::sampling
