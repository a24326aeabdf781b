#pragma once

// Straight-line reference implementations used only as test oracles. They
// avoid the library's code paths (no Eigen expressions beyond storage).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "netequiv/nn.hpp"

namespace oracle {

inline std::vector<double> layer(const Eigen::MatrixXd& w, const Eigen::VectorXd& b, const std::vector<double>& in,
                                 bool tanh_act) {
  std::vector<double> out(static_cast<std::size_t>(w.rows()));
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    double s = b(r);
    for (Eigen::Index c = 0; c < w.cols(); ++c) s += w(r, c) * in[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = tanh_act ? std::tanh(s) : s;
  }
  return out;
}

// All post-activation values, one vector per layer (index 0 = input).
inline std::vector<std::vector<double>> activations(const netequiv::nn::Mlp& net, const Eigen::VectorXd& x) {
  std::vector<std::vector<double>> acts{std::vector<double>(x.data(), x.data() + x.size())};
  const auto& spec = net.spec();
  for (std::size_t l = 0; l < net.weights().size(); ++l) {
    const bool t = spec.activations[l] == netequiv::nn::Activation::kTanh;
    acts.push_back(layer(net.weights()[l], net.biases()[l], acts.back(), t));
  }
  return acts;
}

inline Eigen::VectorXd taps(const netequiv::nn::Mlp& net, const netequiv::nn::TapSelection& sel,
                            const Eigen::VectorXd& x) {
  const auto acts = activations(net, x);
  Eigen::VectorXd out(sel.size());
  for (int i = 0; i < sel.size(); ++i) {
    const auto& id = sel.neurons[static_cast<std::size_t>(i)];
    out(i) = acts[static_cast<std::size_t>(id.layer)][static_cast<std::size_t>(id.index)];
  }
  return out;
}

// Central finite differences.
inline Eigen::MatrixXd fd_jacobian(const netequiv::nn::Mlp& net, const netequiv::nn::TapSelection& sel,
                                   const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::MatrixXd j(sel.size(), x.size());
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    Eigen::VectorXd xp = x, xm = x;
    xp(c) += h;
    xm(c) -= h;
    j.col(c) = (taps(net, sel, xp) - taps(net, sel, xm)) / (2.0 * h);
  }
  return j;
}

// Triple product written out element by element.
inline double mahalanobis_sq(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& pa,
                             const Eigen::MatrixXd& pb) {
  double s = 0.0;
  for (Eigen::Index r = 0; r < a.size(); ++r)
    for (Eigen::Index c = 0; c < a.size(); ++c) s += (a(r) - b(r)) * (pa(r, c) + pb(r, c)) * (a(c) - b(c));
  return s;
}

// Median over rows of the k-th smallest off-diagonal entry.
inline double kth_neighbor_median(const Eigen::MatrixXd& d2, int k) {
  std::vector<double> per;
  for (Eigen::Index i = 0; i < d2.rows(); ++i) {
    std::vector<double> row;
    for (Eigen::Index j = 0; j < d2.cols(); ++j)
      if (j != i) row.push_back(d2(i, j));
    std::sort(row.begin(), row.end());
    per.push_back(row[static_cast<std::size_t>(k - 1)]);
  }
  std::sort(per.begin(), per.end());
  const std::size_t h = per.size() / 2;
  return per.size() % 2 ? per[h] : 0.5 * (per[h - 1] + per[h]);
}

// Brute-force nearest row, lowest index on ties.
inline int nearest_row(const Eigen::MatrixXd& rows, const Eigen::VectorXd& v) {
  int best = 0;
  double best_d = INFINITY;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    double d = 0.0;
    for (Eigen::Index c = 0; c < rows.cols(); ++c) d += (rows(i, c) - v(c)) * (rows(i, c) - v(c));
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

// Pearson correlation of two columns.
inline double correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double ma = a.mean(), mb = b.mean();
  double sab = 0, saa = 0, sbb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    sab += (a(i) - ma) * (b(i) - mb);
    saa += (a(i) - ma) * (a(i) - ma);
    sbb += (b(i) - mb) * (b(i) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Best rotation/reflection angle for 2D point sets by grid search.
inline Eigen::Matrix2d grid_search_orthogonal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double step) {
  Eigen::Matrix2d best = Eigen::Matrix2d::Identity();
  double best_err = INFINITY;
  for (int reflect = 0; reflect < 2; ++reflect) {
    for (double t = -std::numbers::pi; t < std::numbers::pi; t += step) {
      Eigen::Matrix2d o;
      o << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
      if (reflect) o.col(1) *= -1.0;
      double err = 0.0;
      for (Eigen::Index i = 0; i < a.rows(); ++i) err += (o * a.row(i).transpose() - b.row(i).transpose()).squaredNorm();
      if (err < best_err) {
        best_err = err;
        best = o;
      }
    }
  }
  return best;
}

// Random orthogonal matrix from Gram-Schmidt of a seeded Gaussian-ish matrix.
template <typename Rng>
inline Eigen::MatrixXd random_orthogonal(int n, Rng& rng) {
  Eigen::MatrixXd m(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) m(r, c) = rng.uniform(-1.0, 1.0);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  return qr.householderQ();
}

}  // namespace oracle
