#include "netequiv/tasks.hpp"

#include <cmath>
#include <numbers>

#include "netequiv/error.hpp"

namespace netequiv::tasks {

double parabola(double x) { return -x * x; }

double shifted_parabola(double x) { return -(x - 0.25) * (x - 0.25) - 1.0; }

double map_s(double x) { return sampling::sine_warp(x); }

double map_s_derivative(double x) { return sampling::sine_warp_derivative(x); }

Eigen::Vector2d vectorfield_1(const Eigen::Vector2d& x) {
  const double r = 1.0 - x.squaredNorm();
  return {-x(1) + x(0) * r, x(0) + x(1) * r};
}

Eigen::Vector2d vectorfield_2(const Eigen::Vector2d& xhat, const sampling::DiffeomorphismSpec& shear,
                              const sampling::Box& domain) {
  const Eigen::VectorXd x = shear.inverse(xhat);
  if (!domain.contains(x, 1e-9)) {
    throw Error(ErrorKind::kDomain, "point is outside the image of " + domain.describe() + " under " + shear.name());
  }
  return shear.jacobian(x) * vectorfield_1(x);
}

std::string TaskSpec::name() const {
  switch (id) {
    case TaskId::kParabola: return "parabola";
    case TaskId::kShiftedParabola: return "shifted_parabola";
    case TaskId::kVectorField1: return "vectorfield_1";
    case TaskId::kVectorField2: return "vectorfield_2";
  }
  return "unknown";
}

int TaskSpec::input_dim() const { return id == TaskId::kParabola || id == TaskId::kShiftedParabola ? 1 : 2; }

int TaskSpec::output_dim() const { return input_dim(); }

Eigen::VectorXd TaskSpec::evaluate(const Eigen::VectorXd& x) const {
  if (x.size() != input_dim()) throw Error(ErrorKind::kShape, name() + " expects " + std::to_string(input_dim()) + " inputs");
  switch (id) {
    case TaskId::kParabola: return Eigen::VectorXd::Constant(1, parabola(x(0)));
    case TaskId::kShiftedParabola: return Eigen::VectorXd::Constant(1, shifted_parabola(x(0)));
    case TaskId::kVectorField1: return vectorfield_1(x);
    case TaskId::kVectorField2: return vectorfield_2(x, shear, domain);
  }
  return {};
}

Eigen::MatrixXd TaskSpec::evaluate_batch(const Eigen::MatrixXd& inputs) const {
  Eigen::MatrixXd out(inputs.rows(), output_dim());
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) out.row(i) = evaluate(inputs.row(i).transpose()).transpose();
  return out;
}

}  // namespace netequiv::tasks
