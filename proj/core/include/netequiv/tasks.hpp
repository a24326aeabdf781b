#pragma once

#include <Eigen/Dense>
#include <string>

#include "netequiv/sampling.hpp"

namespace netequiv::tasks {

// f(x) = -x^2
double parabola(double x);
// f(x) = -(x - 0.25)^2 - 1
double shifted_parabola(double x);

// S(x) = 2 + 2x + sin(4 pi x) / (3 pi) and S'(x) = 2 + (4/3) cos(4 pi x)
double map_s(double x);
double map_s_derivative(double x);

// Limit-cycle field: (-x2 + x1 r, x1 + x2 r) with r = 1 - x1^2 - x2^2.
Eigen::Vector2d vectorfield_1(const Eigen::Vector2d& x);

// Field 1 pushed forward through the shear s: J_s(x) f1(x) at x = s^-1(xhat).
// Throws kDomain when xhat is outside s(domain).
Eigen::Vector2d vectorfield_2(const Eigen::Vector2d& xhat, const sampling::DiffeomorphismSpec& shear,
                              const sampling::Box& domain);

enum class TaskId { kParabola, kShiftedParabola, kVectorField1, kVectorField2 };

struct TaskSpec {
  TaskId id = TaskId::kParabola;
  sampling::DiffeomorphismSpec shear{sampling::MapId::kQuadraticShear};
  sampling::Box domain;  // pre-image domain for kVectorField2

  std::string name() const;
  int input_dim() const;
  int output_dim() const;
  Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const;
  // One row of targets per row of inputs.
  Eigen::MatrixXd evaluate_batch(const Eigen::MatrixXd& inputs) const;
};

}  // namespace netequiv::tasks
