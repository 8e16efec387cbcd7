#pragma once

#include <Eigen/Dense>
#include <span>
#include <stdexcept>
#include <vector>

#include "mfglq/hermite.hpp"

namespace mfglq {

/// Per-node regression output: one coefficient d-vector per multi-index,
/// together with the standardizer frozen at fit time.
struct RegressionCoefficients {
  Eigen::MatrixXd c;  // L x d
  FeatureStandardizer standardizer;

  void eval(const MultiIndexSet& basis, const double* x, double* out) const {
    const int d = static_cast<int>(c.cols());
    const int L = static_cast<int>(c.rows());
    std::vector<double> row(static_cast<std::size_t>(L));
    std::vector<double> z(static_cast<std::size_t>(basis.d));
    std::vector<double> h(static_cast<std::size_t>(basis.d) * (basis.D + 1));
    feature_row(basis, standardizer, x, row.data(), z.data(), h.data());
    for (int cidx = 0; cidx < d; ++cidx) {
      double v = 0.0;
      for (int l = 0; l < L; ++l) v += c(l, cidx) * row[static_cast<std::size_t>(l)];
      out[cidx] = v;
    }
  }
};

/// Minimizes sum_j w_j |y_j - sum_l c_l X_{jl}|^2 coordinatewise through the
/// normal equations, with a Tikhonov shift lambda = ridge_rel * trace / L
/// that is inert on healthy feature sets.
inline Eigen::MatrixXd weighted_least_squares(const Eigen::MatrixXd& X,
                                              const Eigen::MatrixXd& Y,
                                              const Eigen::VectorXd& w,
                                              double ridge_rel = 1e-8) {
  const auto n = X.rows();
  const auto L = X.cols();
  if (Y.rows() != n || w.size() != n)
    throw std::invalid_argument("weighted_least_squares: row count mismatch");
  if (n < 1) throw std::invalid_argument("weighted_least_squares: no samples");
  double wsum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (w[j] < 0.0)
      throw std::invalid_argument("weighted_least_squares: negative weight");
    wsum += w[j];
  }
  if (wsum == 0.0)
    throw std::invalid_argument("weighted_least_squares: all-zero weights");

  const Eigen::MatrixXd Xw = w.asDiagonal() * X;
  Eigen::MatrixXd gram = X.transpose() * Xw;
  const Eigen::MatrixXd rhs = Xw.transpose() * Y;
  const double lambda = ridge_rel * gram.trace() / static_cast<double>(L);
  gram.diagonal().array() += lambda;
  return gram.ldlt().solve(rhs);
}

}  // namespace mfglq
