#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mfglq {

/// Uniform mesh t_k = k T / p, k = 0..p.
class TimeGrid {
 public:
  TimeGrid(double horizon, int steps) : T_(horizon), p_(steps) {
    if (!(horizon > 0.0))
      throw std::invalid_argument("TimeGrid: horizon must be positive");
    if (steps < 1)
      throw std::invalid_argument("TimeGrid: step count must be >= 1");
    nodes_.resize(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k)
      nodes_[static_cast<std::size_t>(k)] = horizon * k / steps;
  }

  double horizon() const { return T_; }
  int steps() const { return p_; }
  double dt() const { return T_ / p_; }
  double node(int k) const { return nodes_[static_cast<std::size_t>(k)]; }
  const std::vector<double>& nodes() const { return nodes_; }

  // Index k with node(k) <= t < node(k+1); t = T maps to the last cell.
  int cell_index(double t) const {
    if (t < 0.0 || t > T_)
      throw std::invalid_argument("TimeGrid: time outside [0, T]");
    const int k = static_cast<int>(std::floor(t * p_ / T_));
    return std::min(k, p_ - 1);
  }

 private:
  double T_;
  int p_;
  std::vector<double> nodes_;
};

}  // namespace mfglq
