#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace mfglq {

/// Normalized physicists' Hermite value: the Rodrigues polynomial divided by
/// sqrt(2^l l!), evaluated through the three-term recurrence. Orthonormal for
/// X ~ N(0, 1/2).
inline double hermite_1d(int ell, double x) {
  if (ell < 0) throw std::invalid_argument("hermite_1d: negative degree");
  double prev = 1.0;  // degree 0
  if (ell == 0) return prev;
  double cur = std::sqrt(2.0) * x;  // degree 1
  for (int n = 1; n < ell; ++n) {
    const double next =
        x * std::sqrt(2.0 / (n + 1)) * cur - std::sqrt(double(n) / (n + 1)) * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

/// All degrees 0..D at once; `out` has D+1 slots.
inline void hermite_1d_all(int D, double x, double* out) {
  out[0] = 1.0;
  if (D == 0) return;
  out[1] = std::sqrt(2.0) * x;
  for (int n = 1; n < D; ++n)
    out[n + 1] =
        x * std::sqrt(2.0 / (n + 1)) * out[n] - std::sqrt(double(n) / (n + 1)) * out[n - 1];
}

/// Ordered d-tuples l with |l| <= D, lexicographic; cardinality C(D+d, d).
struct MultiIndexSet {
  int d = 1;
  int D = 0;
  std::vector<std::vector<int>> indices;

  int size() const { return static_cast<int>(indices.size()); }

  static MultiIndexSet total_degree(int d, int D) {
    if (d < 1 || D < 0)
      throw std::invalid_argument("MultiIndexSet: need d >= 1, D >= 0");
    MultiIndexSet set;
    set.d = d;
    set.D = D;
    std::vector<int> tuple(static_cast<std::size_t>(d), 0);
    // Lexicographic enumeration of tuples with entries in [0, D] and sum <= D.
    while (true) {
      int sum = 0;
      for (int v : tuple) sum += v;
      if (sum <= D) set.indices.push_back(tuple);
      int pos = d - 1;
      while (pos >= 0 && tuple[static_cast<std::size_t>(pos)] == D) {
        tuple[static_cast<std::size_t>(pos)] = 0;
        --pos;
      }
      if (pos < 0) break;
      ++tuple[static_cast<std::size_t>(pos)];
    }
    return set;
  }
};

/// Product of 1-d normalized Hermite values, one factor per coordinate.
inline double hermite_tensor(const std::vector<int>& ell, const double* x,
                             int d) {
  if (static_cast<int>(ell.size()) != d)
    throw std::invalid_argument("hermite_tensor: tuple length != d");
  double v = 1.0;
  for (int c = 0; c < d; ++c) v *= hermite_1d(ell[static_cast<std::size_t>(c)], x[c]);
  return v;
}

/// Affine normalization applied to regression inputs before the Hermite map:
/// either per-coordinate (mean, root of the covariance diagonal) or the full
/// Cholesky factor.
struct FeatureStandardizer {
  enum class Mode { diag, cholesky };

  Mode mode = Mode::diag;
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // diag mode, strictly positive
  Eigen::MatrixXd chol;   // cholesky mode, upper triangular, Sigma = U^T U
  bool degenerate = false;

  int dim() const { return static_cast<int>(mean.size()); }

  void apply(const double* x, double* z) const {
    const int d = dim();
    if (mode == Mode::diag) {
      for (int c = 0; c < d; ++c) z[c] = (x[c] - mean[c]) / scale[c];
      return;
    }
    // Solve U^T z = x - mean (forward substitution, U upper triangular).
    for (int r = 0; r < d; ++r) {
      double v = x[r] - mean[r];
      for (int c = 0; c < r; ++c) v -= chol(c, r) * z[c];
      z[r] = v / chol(r, r);
    }
  }
};

/// Population-covariance fit with a floor on each scale so nearly
/// deterministic inputs cannot blow up the features. Cholesky mode falls back
/// to diag (flagged) when the covariance is numerically rank deficient.
inline FeatureStandardizer fit_standardizer(
    std::span<const double> samples, int d,
    FeatureStandardizer::Mode mode = FeatureStandardizer::Mode::diag,
    double floor = 1e-8) {
  if (d < 1) throw std::invalid_argument("fit_standardizer: d must be >= 1");
  const std::size_t n = samples.size() / static_cast<std::size_t>(d);
  if (n < 2 || samples.size() != n * static_cast<std::size_t>(d))
    throw std::invalid_argument("fit_standardizer: need >= 2 d-vectors");

  FeatureStandardizer st;
  st.mean = Eigen::VectorXd::Zero(d);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) st.mean[c] += samples[i * d + c];
  st.mean /= static_cast<double>(n);

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (int r = 0; r < d; ++r) {
      const double vr = samples[i * d + r] - st.mean[r];
      for (int c = r; c < d; ++c)
        cov(r, c) += vr * (samples[i * d + c] - st.mean[c]);
    }
  }
  cov /= static_cast<double>(n);
  cov = cov.selfadjointView<Eigen::Upper>();

  auto diag_fallback = [&] {
    st.mode = FeatureStandardizer::Mode::diag;
    st.scale = Eigen::VectorXd(d);
    for (int c = 0; c < d; ++c)
      st.scale[c] = std::max(std::sqrt(std::max(cov(c, c), 0.0)), floor);
  };

  if (mode == FeatureStandardizer::Mode::diag) {
    diag_fallback();
    for (int c = 0; c < d; ++c)
      if (st.scale[c] <= floor) st.degenerate = true;
    return st;
  }

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  bool ok = llt.info() == Eigen::Success;
  Eigen::MatrixXd U;
  if (ok) {
    U = llt.matrixU();
    for (int c = 0; c < d; ++c) ok = ok && U(c, c) > floor;
  }
  if (!ok) {
    diag_fallback();
    st.degenerate = true;
    return st;
  }
  st.mode = FeatureStandardizer::Mode::cholesky;
  st.chol = U;
  return st;
}

/// One feature row: H_l(standardized x) for every multi-index in the set.
inline void feature_row(const MultiIndexSet& basis,
                        const FeatureStandardizer& st, const double* x,
                        double* row, double* z_buf, double* h_buf) {
  const int d = basis.d;
  const int D = basis.D;
  st.apply(x, z_buf);
  for (int c = 0; c < d; ++c)
    hermite_1d_all(D, z_buf[c], h_buf + static_cast<std::size_t>(c) * (D + 1));
  for (int l = 0; l < basis.size(); ++l) {
    double v = 1.0;
    const auto& tuple = basis.indices[static_cast<std::size_t>(l)];
    for (int c = 0; c < d; ++c)
      v *= h_buf[static_cast<std::size_t>(c) * (D + 1) + tuple[static_cast<std::size_t>(c)]];
    row[l] = v;
  }
}

}  // namespace mfglq
