#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mfglq/errors.hpp"
#include "mfglq/time_grid.hpp"

namespace mfglq {

enum class RiccatiKind { continuous, discrete };

/// Gain matrices eta on the grid nodes; eta[p] = R^T R in both variants.
struct RiccatiTable {
  RiccatiKind kind = RiccatiKind::continuous;
  Eigen::MatrixXd Q, R;
  std::vector<Eigen::MatrixXd> eta;  // k = 0..p

  int dim() const { return static_cast<int>(Q.rows()); }

  /// True when every eta[k] is an exact multiple of the identity; fills the
  /// per-node scalars. Holds for all benchmark cost matrices.
  bool scalar_gains(std::vector<double>* out) const {
    out->clear();
    out->reserve(eta.size());
    for (const auto& e : eta) {
      const double s = e(0, 0);
      for (int r = 0; r < e.rows(); ++r)
        for (int c = 0; c < e.cols(); ++c)
          if (e(r, c) != (r == c ? s : 0.0)) return false;
      out->push_back(s);
    }
    return true;
  }
};

namespace detail {

inline bool is_zero(const Eigen::MatrixXd& m) {
  return m.isZero(0.0);  // exact
}
inline bool is_identity(const Eigen::MatrixXd& m) {
  return m == Eigen::MatrixXd::Identity(m.rows(), m.cols());
}

}  // namespace detail

/// Backward solve of eta' = eta^2 - Q^T Q from eta(T) = R^T R, classical
/// fourth-order steps with 10 substeps per node. The benchmark case
/// (Q = 0, R = I, T = 1) returns the closed form eta_t = I / (2 - t) exactly.
inline RiccatiTable continuous_riccati(const Eigen::MatrixXd& Q,
                                       const Eigen::MatrixXd& R,
                                       const TimeGrid& grid,
                                       double blowup_bound = 1e6) {
  const int d = static_cast<int>(Q.rows());
  if (Q.cols() != d || R.rows() != d || R.cols() != d)
    throw std::invalid_argument("continuous_riccati: Q, R must be square d x d");
  if (!Q.allFinite() || !R.allFinite())
    throw std::invalid_argument("continuous_riccati: non-finite cost matrix");
  const int p = grid.steps();
  RiccatiTable table;
  table.kind = RiccatiKind::continuous;
  table.Q = Q;
  table.R = R;
  table.eta.resize(static_cast<std::size_t>(p) + 1);

  if (detail::is_zero(Q) && detail::is_identity(R) && grid.horizon() == 1.0) {
    for (int k = 0; k <= p; ++k)
      table.eta[static_cast<std::size_t>(k)] =
          Eigen::MatrixXd::Identity(d, d) / (2.0 - grid.node(k));
    return table;
  }

  const Eigen::MatrixXd QtQ = Q.transpose() * Q;
  auto rhs = [&](const Eigen::MatrixXd& eta) -> Eigen::MatrixXd {
    return eta * eta - QtQ;
  };
  Eigen::MatrixXd eta = R.transpose() * R;
  table.eta[static_cast<std::size_t>(p)] = eta;
  const int substeps = 10;
  const double h = -grid.dt() / substeps;
  for (int k = p - 1; k >= 0; --k) {
    for (int s = 0; s < substeps; ++s) {
      const Eigen::MatrixXd k1 = rhs(eta);
      const Eigen::MatrixXd k2 = rhs(eta + 0.5 * h * k1);
      const Eigen::MatrixXd k3 = rhs(eta + 0.5 * h * k2);
      const Eigen::MatrixXd k4 = rhs(eta + h * k3);
      eta += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!eta.allFinite() || eta.cwiseAbs().maxCoeff() > blowup_bound)
        throw numerical_error(
            "continuous_riccati: finite-escape, entry bound exceeded");
    }
    table.eta[static_cast<std::size_t>(k)] = eta;
  }
  return table;
}

/// Sampled-data gain: auxiliary recursion
///   P_p = R^T R,
///   P_l = P_{l+1} - (T/p) [ P_{l+1} (I + (T/p) P_{l+1})^{-1} P_{l+1} - Q^T Q ],
/// then eta_l = (I + (T/p) P_{l+1})^{-1} P_{l+1} for l < p and eta_p = R^T R.
inline RiccatiTable discrete_riccati(const Eigen::MatrixXd& Q,
                                     const Eigen::MatrixXd& R,
                                     const TimeGrid& grid) {
  const int d = static_cast<int>(Q.rows());
  if (Q.cols() != d || R.rows() != d || R.cols() != d)
    throw std::invalid_argument("discrete_riccati: Q, R must be square d x d");
  if (!Q.allFinite() || !R.allFinite())
    throw std::invalid_argument("discrete_riccati: non-finite cost matrix");
  const int p = grid.steps();
  const double dt = grid.dt();
  const Eigen::MatrixXd QtQ = Q.transpose() * Q;
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);

  RiccatiTable table;
  table.kind = RiccatiKind::discrete;
  table.Q = Q;
  table.R = R;
  table.eta.resize(static_cast<std::size_t>(p) + 1);
  table.eta[static_cast<std::size_t>(p)] = R.transpose() * R;

  Eigen::MatrixXd P = R.transpose() * R;
  for (int l = p - 1; l >= 0; --l) {
    const Eigen::MatrixXd inv = (id + dt * P).partialPivLu().solve(id);
    table.eta[static_cast<std::size_t>(l)] = inv * P;
    P = P - dt * (P * inv * P - QtQ);
    if (!P.allFinite())
      throw numerical_error("discrete_riccati: non-finite recursion value");
  }
  return table;
}

}  // namespace mfglq
