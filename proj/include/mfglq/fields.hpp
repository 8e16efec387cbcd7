#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace mfglq {

/// Population-mean proxy per (realization j, node k = 0..p), d-vector valued.
struct EnvironmentField {
  int N = 0;
  int p = 0;
  int d = 0;
  std::vector<double> m;  // (j, k, dim)

  EnvironmentField() = default;
  EnvironmentField(int N_, int p_, int d_, double fill = 0.0)
      : N(N_), p(p_), d(d_),
        m(static_cast<std::size_t>(N_) * (p_ + 1) * d_, fill) {}

  double* at(int j, int k) {
    return m.data() + (static_cast<std::size_t>(j) * (p + 1) + k) * d;
  }
  const double* at(int j, int k) const {
    return m.data() + (static_cast<std::size_t>(j) * (p + 1) + k) * d;
  }
};

/// Intercept proxy per (realization j, node k = 0..p-1), held piecewise
/// constant on [t_k, t_{k+1}).
struct InterceptField {
  int N = 0;
  int p = 0;
  int d = 0;
  double clamp = 1.0;
  std::vector<double> h;  // (j, k, dim)

  InterceptField() = default;
  InterceptField(int N_, int p_, int d_, double clamp_ = 1.0)
      : N(N_), p(p_), d(d_), clamp(clamp_),
        h(static_cast<std::size_t>(N_) * p_ * d_, 0.0) {}

  double* at(int j, int k) {
    return h.data() + (static_cast<std::size_t>(j) * p + k) * d;
  }
  const double* at(int j, int k) const {
    return h.data() + (static_cast<std::size_t>(j) * p + k) * d;
  }
};

inline void require_same_shape(const EnvironmentField& env,
                               const InterceptField& h) {
  if (env.N != h.N || env.p != h.p || env.d != h.d)
    throw std::invalid_argument("field shape mismatch");
}

}  // namespace mfglq
