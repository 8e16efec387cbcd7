#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "mfglq/fields.hpp"
#include "mfglq/noise.hpp"
#include "mfglq/parallel.hpp"
#include "mfglq/time_grid.hpp"

namespace mfglq {

/// Exponential-martingale weights of the measure tilted by h: `full` over
/// [0, T] per realization, `tail` over [t_k, T] per (realization, node).
/// With h == 0 every weight is 1.
struct GirsanovWeights {
  int N = 0;
  int p = 0;
  std::vector<double> full;  // per j
  std::vector<double> tail;  // (j, k = 0..p-1)

  double tail_at(int j, int k) const {
    return tail[static_cast<std::size_t>(j) * p + k];
  }
};

/// Tail exponents for one realization:
///   log tail[k] = -(1/eps) sqrt(T/p) sum_{s>=k} h_s . D_{s+1}
///                 - (T / (2 eps^2 p)) sum_{s>=k} |h_s|^2,
/// where D are the bank's unit-normal increments. This is the convention
/// forced by the continuous density; it makes each weight an exact Gaussian
/// density ratio, hence mean one.
inline std::vector<double> girsanov_weight_row(std::span<const double> h_row,
                                               std::span<const double> dw_row,
                                               int d, double eps,
                                               const TimeGrid& grid) {
  if (!(eps > 0.0))
    throw std::invalid_argument("girsanov_weight_row: eps must be > 0");
  const int p = grid.steps();
  if (h_row.size() != static_cast<std::size_t>(p) * d ||
      dw_row.size() != static_cast<std::size_t>(p) * d)
    throw std::invalid_argument("girsanov_weight_row: row size mismatch");
  const double lin = std::sqrt(grid.dt()) / eps;
  const double quad = grid.dt() / (2.0 * eps * eps);
  std::vector<double> out(static_cast<std::size_t>(p));
  double expo = 0.0;
  for (int s = p - 1; s >= 0; --s) {
    double dot = 0.0, sq = 0.0;
    for (int c = 0; c < d; ++c) {
      const double hv = h_row[static_cast<std::size_t>(s) * d + c];
      if (!std::isfinite(hv))
        throw std::invalid_argument("girsanov_weight_row: non-finite h");
      dot += hv * dw_row[static_cast<std::size_t>(s) * d + c];
      sq += hv * hv;
    }
    expo += -lin * dot - quad * sq;
    out[static_cast<std::size_t>(s)] = std::exp(expo);
  }
  return out;
}

inline GirsanovWeights girsanov_weights(const InterceptField& h,
                                        const NoiseBank& bank, double eps,
                                        const TimeGrid& grid) {
  const int N = h.N;
  const int p = h.p;
  if (bank.realizations() != N || bank.steps() != p || bank.dim() != h.d)
    throw std::invalid_argument("girsanov_weights: bank/intercept mismatch");
  GirsanovWeights w;
  w.N = N;
  w.p = p;
  w.full.resize(static_cast<std::size_t>(N));
  w.tail.resize(static_cast<std::size_t>(N) * p);
  parallel_for(static_cast<std::size_t>(N), [&](std::size_t j) {
    const auto row = girsanov_weight_row(
        {h.at(static_cast<int>(j), 0), static_cast<std::size_t>(p) * h.d},
        bank.common_path(static_cast<int>(j)), h.d, eps, grid);
    for (int k = 0; k < p; ++k) w.tail[j * p + k] = row[static_cast<std::size_t>(k)];
    w.full[j] = row[0];
  });
  return w;
}

inline GirsanovWeights unit_weights(int N, int p) {
  GirsanovWeights w;
  w.N = N;
  w.p = p;
  w.full.assign(static_cast<std::size_t>(N), 1.0);
  w.tail.assign(static_cast<std::size_t>(N) * p, 1.0);
  return w;
}

}  // namespace mfglq
