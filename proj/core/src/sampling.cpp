#include "netequiv/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "netequiv/error.hpp"
#include "netequiv/io.hpp"
#include "netequiv/rng.hpp"

namespace netequiv::sampling {

Box Box::interval(double lo, double hi) {
  Box b;
  b.lower = Eigen::VectorXd::Constant(1, lo);
  b.upper = Eigen::VectorXd::Constant(1, hi);
  return b;
}

Box Box::square(double lo, double hi) {
  Box b;
  b.lower = Eigen::VectorXd::Constant(2, lo);
  b.upper = Eigen::VectorXd::Constant(2, hi);
  return b;
}

double Box::volume() const {
  if (lower.size() == 0 || lower.size() != upper.size()) return 0.0;
  return (upper - lower).cwiseMax(0.0).prod();
}

bool Box::contains(const Eigen::VectorXd& x, double tol) const {
  if (x.size() != lower.size()) return false;
  return ((x.array() >= lower.array() - tol) && (x.array() <= upper.array() + tol)).all();
}

std::string Box::describe() const {
  std::string out;
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (i) out += " x ";
    out += "[" + io::format_double(lower(i)) + "," + io::format_double(upper(i)) + "]";
  }
  return out;
}

Dataset sample_uniform(const Box& domain, int n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorKind::kDomain, "sample count must be >= 1");
  if (!(domain.volume() > 0.0)) throw Error(ErrorKind::kDomain, "degenerate domain " + domain.describe());
  Rng rng(seed);
  Dataset data;
  data.domain = domain;
  data.seed = seed;
  data.points.resize(n, domain.dim());
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < domain.dim(); ++d) data.points(i, d) = rng.uniform(domain.lower(d), domain.upper(d));
  return data;
}

Eigen::VectorXd linspace(double lo, double hi, int count) {
  if (count < 2) return Eigen::VectorXd::Constant(std::max(count, 0), lo);
  return Eigen::VectorXd::LinSpaced(count, lo, hi);
}

Eigen::MatrixXd NeighborhoodSet::cloud_means() const {
  Eigen::MatrixXd means(n(), m());
  for (int i = 0; i < n(); ++i) means.row(i) = clouds[static_cast<std::size_t>(i)].colwise().mean();
  return means;
}

void NeighborhoodSet::validate() const {
  if (base_points.rows() != n()) {
    throw Error(ErrorKind::kShape, "neighborhood set has " + std::to_string(n()) + " clouds but " +
                                       std::to_string(base_points.rows()) + " base points");
  }
  for (int i = 0; i < n(); ++i) {
    const auto& c = clouds[static_cast<std::size_t>(i)];
    if (c.rows() != q() || c.cols() != m())
      throw Error(ErrorKind::kShape, "cloud " + std::to_string(i) + " has inconsistent shape");
  }
}

NeighborhoodSet delta_ball_neighborhoods(const Dataset& data, double delta, int q, std::uint64_t seed) {
  if (q < 2) throw Error(ErrorKind::kShape, "neighborhoods need q >= 2 points");
  if (!(delta >= 0.0)) throw Error(ErrorKind::kDomain, "delta must be non-negative");
  const auto dim = data.points.cols();
  Rng rng(seed);
  NeighborhoodSet out;
  out.seed = seed;
  out.base_points = data.points;
  out.generator = "delta_ball(delta=" + io::format_double(delta) + ",q=" + std::to_string(q) +
                  ",domain=" + data.domain.describe() + ")";
  out.clouds.reserve(static_cast<std::size_t>(data.points.rows()));
  Eigen::VectorXd u(dim);
  for (Eigen::Index i = 0; i < data.points.rows(); ++i) {
    Eigen::MatrixXd cloud(q, dim);
    for (int j = 0; j < q; ++j) {
      // Rejection from the enclosing cube.
      do {
        for (Eigen::Index d = 0; d < dim; ++d) u(d) = rng.uniform(-1.0, 1.0);
      } while (u.squaredNorm() > 1.0);
      cloud.row(j) = data.points.row(i) + delta * u.transpose();
    }
    out.clouds.push_back(std::move(cloud));
  }
  return out;
}

double sine_warp(double x) { return 2.0 + 2.0 * x + std::sin(4.0 * std::numbers::pi * x) / (3.0 * std::numbers::pi); }

double sine_warp_derivative(double x) { return 2.0 + (4.0 / 3.0) * std::cos(4.0 * std::numbers::pi * x); }

DiffeomorphismSpec DiffeomorphismSpec::from_name(const std::string& name) {
  DiffeomorphismSpec spec;
  if (name == "identity") spec.id = MapId::kIdentity;
  else if (name == "sine_warp") spec.id = MapId::kSineWarp;
  else if (name == "quadratic_shear") spec.id = MapId::kQuadraticShear;
  else throw Error(ErrorKind::kSpec, "unknown map id '" + name + "'");
  return spec;
}

std::string DiffeomorphismSpec::name() const {
  switch (id) {
    case MapId::kIdentity: return "identity";
    case MapId::kSineWarp: return "sine_warp";
    case MapId::kQuadraticShear: return "quadratic_shear";
  }
  return "unknown";
}

int DiffeomorphismSpec::dim() const {
  switch (id) {
    case MapId::kIdentity: return -1;
    case MapId::kSineWarp: return 1;
    case MapId::kQuadraticShear: return 2;
  }
  return -1;
}

namespace {
void check_dim(const DiffeomorphismSpec& map, Eigen::Index got) {
  if (map.dim() >= 0 && got != map.dim()) {
    throw Error(ErrorKind::kShape, map.name() + " expects dimension " + std::to_string(map.dim()) + ", got " +
                                       std::to_string(got));
  }
}
}  // namespace

Eigen::VectorXd DiffeomorphismSpec::apply(const Eigen::VectorXd& x) const {
  check_dim(*this, x.size());
  switch (id) {
    case MapId::kIdentity: return x;
    case MapId::kSineWarp: return Eigen::VectorXd::Constant(1, sine_warp(x(0)));
    case MapId::kQuadraticShear: {
      const double common = x(0) * x(0) / (alpha * alpha) + x(1) / beta;
      return Eigen::Vector2d(x(0) / alpha + common, common);
    }
  }
  throw Error(ErrorKind::kSpec, "unknown map");
}

Eigen::MatrixXd DiffeomorphismSpec::jacobian(const Eigen::VectorXd& x) const {
  check_dim(*this, x.size());
  switch (id) {
    case MapId::kIdentity: return Eigen::MatrixXd::Identity(x.size(), x.size());
    case MapId::kSineWarp: return Eigen::MatrixXd::Constant(1, 1, sine_warp_derivative(x(0)));
    case MapId::kQuadraticShear: {
      Eigen::Matrix2d j;
      const double dq = 2.0 * x(0) / (alpha * alpha);
      j << 1.0 / alpha + dq, 1.0 / beta, dq, 1.0 / beta;
      return j;
    }
  }
  throw Error(ErrorKind::kSpec, "unknown map");
}

Eigen::VectorXd DiffeomorphismSpec::inverse(const Eigen::VectorXd& y) const {
  check_dim(*this, y.size());
  switch (id) {
    case MapId::kIdentity: return y;
    case MapId::kSineWarp: {
      // S' >= 2/3, so S is strictly increasing and Newton from the linear
      // part converges; bisection guards the bracket.
      double lo = (y(0) - 2.0) / 2.0 - 1.0, hi = (y(0) - 2.0) / 2.0 + 1.0;
      double x = (y(0) - 2.0) / 2.0;
      for (int it = 0; it < 100; ++it) {
        const double f = sine_warp(x) - y(0);
        if (std::abs(f) < 1e-15 * std::max(1.0, std::abs(y(0)))) break;
        if (f > 0) hi = x; else lo = x;
        double next = x - f / sine_warp_derivative(x);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        x = next;
      }
      return Eigen::VectorXd::Constant(1, x);
    }
    case MapId::kQuadraticShear: {
      const double x1 = alpha * (y(0) - y(1));
      const double x2 = beta * (y(1) - x1 * x1 / (alpha * alpha));
      return Eigen::Vector2d(x1, x2);
    }
  }
  throw Error(ErrorKind::kSpec, "unknown map");
}

bool check_injective(const DiffeomorphismSpec& map, const Box& domain, int points_per_dim) {
  const int dim = domain.dim();
  if (dim < 1 || dim > 3) throw Error(ErrorKind::kDomain, "injectivity check supports 1 to 3 dimensions");
  std::vector<Eigen::VectorXd> grid;
  std::vector<int> idx(static_cast<std::size_t>(dim), 0);
  for (;;) {
    Eigen::VectorXd x(dim);
    for (int d = 0; d < dim; ++d) {
      const double t = static_cast<double>(idx[static_cast<std::size_t>(d)]) / (points_per_dim - 1);
      x(d) = domain.lower(d) + t * (domain.upper(d) - domain.lower(d));
    }
    grid.push_back(std::move(x));
    int d = 0;
    while (d < dim && ++idx[static_cast<std::size_t>(d)] == points_per_dim) idx[static_cast<std::size_t>(d++)] = 0;
    if (d == dim) break;
  }
  int sign = 0;
  std::vector<Eigen::VectorXd> images;
  images.reserve(grid.size());
  for (const auto& x : grid) {
    const double det = map.jacobian(x).determinant();
    const int s = det > 0 ? 1 : (det < 0 ? -1 : 0);
    if (s == 0 || (sign != 0 && s != sign)) return false;
    sign = s;
    images.push_back(map.apply(x));
  }
  std::sort(images.begin(), images.end(), [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  });
  for (std::size_t i = 1; i < images.size(); ++i) {
    if (images[i] == images[i - 1]) return false;
  }
  return true;
}

NeighborhoodSet pushforward_neighborhoods(const NeighborhoodSet& nbhds, const DiffeomorphismSpec& map) {
  nbhds.validate();
  if (map.id == MapId::kIdentity) return nbhds;
  NeighborhoodSet out;
  out.seed = nbhds.seed;
  out.generator = "pushforward(" + map.name() + ", " + nbhds.generator + ")";
  out.base_points.resize(nbhds.n(), nbhds.m());
  out.clouds.reserve(nbhds.clouds.size());
  for (int i = 0; i < nbhds.n(); ++i) {
    out.base_points.row(i) = map.apply(nbhds.base_points.row(i).transpose()).transpose();
    const auto& cloud = nbhds.clouds[static_cast<std::size_t>(i)];
    Eigen::MatrixXd mapped(cloud.rows(), cloud.cols());
    for (Eigen::Index j = 0; j < cloud.rows(); ++j) mapped.row(j) = map.apply(cloud.row(j).transpose()).transpose();
    out.clouds.push_back(std::move(mapped));
  }
  return out;
}

NeighborhoodSet evaluate_neighborhoods(const NeighborhoodSet& nbhds, const nn::Mlp& net, const nn::TapSelection& taps) {
  nbhds.validate();
  if (nbhds.m() != net.spec().input_dim()) {
    throw Error(ErrorKind::kShape, "cloud dimension " + std::to_string(nbhds.m()) + " != network input dimension " +
                                       std::to_string(net.spec().input_dim()));
  }
  NeighborhoodSet out;
  out.seed = nbhds.seed;
  out.generator = "taps(" + net.spec().to_string() + ", " + nbhds.generator + ")";
  out.base_points = nn::forward_with_taps_batch(net, taps, nbhds.base_points);
  out.clouds.reserve(nbhds.clouds.size());
  for (const auto& cloud : nbhds.clouds) out.clouds.push_back(nn::forward_with_taps_batch(net, taps, cloud));
  return out;
}

namespace {
std::string cloud_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "cloud_%06d.csv", i);
  return buf;
}
}  // namespace

void save_neighborhoods(const std::filesystem::path& dir, const NeighborhoodSet& nbhds) {
  nbhds.validate();
  std::filesystem::create_directories(dir / "clouds");
  nlohmann::json manifest;
  manifest["format"] = "netequiv.neighborhoods/1";
  manifest["n"] = nbhds.n();
  manifest["q"] = nbhds.q();
  manifest["m"] = nbhds.m();
  manifest["seed"] = nbhds.seed;
  manifest["generator"] = nbhds.generator;
  io::write_json(dir / "manifest.json", manifest);
  io::write_csv(dir / "base_points.csv", nbhds.base_points, "y");
  for (int i = 0; i < nbhds.n(); ++i) io::write_csv(dir / "clouds" / cloud_name(i), nbhds.clouds[static_cast<std::size_t>(i)], "y");
}

NeighborhoodSet load_neighborhoods(const std::filesystem::path& dir) {
  const auto manifest = io::read_json(dir / "manifest.json");
  NeighborhoodSet out;
  try {
    out.seed = manifest.at("seed").get<std::uint64_t>();
    out.generator = manifest.value("generator", std::string{});
    const int n = manifest.at("n").get<int>();
    out.base_points = io::read_csv(dir / "base_points.csv").values;
    for (int i = 0; i < n; ++i) out.clouds.push_back(io::read_csv(dir / "clouds" / cloud_name(i)).values);
    if (out.q() != manifest.at("q").get<int>() || out.m() != manifest.at("m").get<int>())
      throw Error(ErrorKind::kShape, dir.string() + ": manifest shape disagrees with files");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kIo, dir.string() + ": malformed manifest: " + e.what());
  }
  out.validate();
  return out;
}

}  // namespace netequiv::sampling
