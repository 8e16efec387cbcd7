#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mfglq {

/// Mean-field coupling: a bounded R^d -> R^d map of the population mean.
/// Benchmark families carry a closed-form primitive (d = 1) for the
/// potential analysis.
class Coupling {
 public:
  using Fn = std::function<void(const double*, double*)>;

  Coupling() : Coupling(zero(1)) {}

  static Coupling zero(int d) {
    Coupling g(d, "zero");
    g.fn_ = [d](const double*, double* out) {
      for (int c = 0; c < d; ++c) out[c] = 0.0;
    };
    g.primitive_ = [](double) { return 0.0; };
    g.sup_norm_ = 0.0;
    return g;
  }

  static Coupling constant(std::vector<double> v) {
    const int d = static_cast<int>(v.size());
    std::ostringstream tag;
    tag << "constant";
    for (double x : v) tag << ',' << x;
    Coupling g(d, tag.str());
    double nrm = 0.0;
    for (double x : v) nrm = std::max(nrm, std::abs(x));
    g.sup_norm_ = nrm;
    if (d == 1) {
      const double v0 = v[0];
      g.primitive_ = [v0](double x) { return v0 * x; };
    }
    g.fn_ = [v = std::move(v), d](const double*, double* out) {
      for (int c = 0; c < d; ++c) out[c] = v[static_cast<std::size_t>(c)];
    };
    return g;
  }

  /// d = 1: cos(kappa x).
  /// d = 2: (cos(kappa x1) cos(kappa x2), sin(kappa x1) sin(kappa x2)).
  static Coupling cosine(int d, double kappa) {
    if (d != 1 && d != 2)
      throw std::invalid_argument("Coupling::cosine: d must be 1 or 2");
    std::ostringstream tag;
    tag << "cos,d=" << d << ",kappa=" << kappa;
    Coupling g(d, tag.str());
    g.sup_norm_ = 1.0;
    if (d == 1) {
      g.fn_ = [kappa](const double* x, double* out) {
        out[0] = std::cos(kappa * x[0]);
      };
      g.primitive_ = [kappa](double x) { return std::sin(kappa * x) / kappa; };
    } else {
      g.fn_ = [kappa](const double* x, double* out) {
        out[0] = std::cos(kappa * x[0]) * std::cos(kappa * x[1]);
        out[1] = std::sin(kappa * x[0]) * std::sin(kappa * x[1]);
      };
    }
    return g;
  }

  /// cos(kappa (x - x0)) - 2 x0 with x0 a root of cos(kappa x0) = 2 x0, so
  /// that 0 solves 2x + g(x) = 0.
  static Coupling cosine_shifted(double kappa, double x0) {
    std::ostringstream tag;
    tag << "cos_shifted,kappa=" << kappa << ",x0=" << x0;
    Coupling g(1, tag.str());
    g.sup_norm_ = 1.0 + 2.0 * std::abs(x0);
    g.fn_ = [kappa, x0](const double* x, double* out) {
      out[0] = std::cos(kappa * (x[0] - x0)) - 2.0 * x0;
    };
    g.primitive_ = [kappa, x0](double x) {
      return std::sin(kappa * (x - x0)) / kappa - 2.0 * x0 * x;
    };
    return g;
  }

  /// d = 1 piecewise-linear table, clamped outside the abscissa range.
  static Coupling table(std::vector<double> xs, std::vector<double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
      throw std::invalid_argument("Coupling::table: need >= 2 matching points");
    for (std::size_t i = 1; i < xs.size(); ++i)
      if (!(xs[i] > xs[i - 1]))
        throw std::invalid_argument("Coupling::table: abscissae must increase");
    std::ostringstream tag;
    tag << "table";
    for (std::size_t i = 0; i < xs.size(); ++i) tag << ',' << xs[i] << ':' << ys[i];
    Coupling g(1, tag.str());
    double nrm = 0.0;
    for (double y : ys) nrm = std::max(nrm, std::abs(y));
    g.sup_norm_ = nrm;
    g.fn_ = [xs = std::move(xs), ys = std::move(ys)](const double* x, double* out) {
      const double t = x[0];
      if (t <= xs.front()) { out[0] = ys.front(); return; }
      if (t >= xs.back()) { out[0] = ys.back(); return; }
      std::size_t hi = 1;
      while (xs[hi] < t) ++hi;
      const double frac = (t - xs[hi - 1]) / (xs[hi] - xs[hi - 1]);
      out[0] = ys[hi - 1] + frac * (ys[hi] - ys[hi - 1]);
    };
    return g;
  }

  static Coupling custom(int d, Fn fn, double sup_norm, std::string tag) {
    Coupling g(d, "custom:" + std::move(tag));
    g.fn_ = std::move(fn);
    g.sup_norm_ = sup_norm;
    return g;
  }

  int dim() const { return d_; }
  double sup_norm() const { return sup_norm_; }
  const std::string& describe() const { return tag_; }
  bool is_zero() const { return tag_ == "zero"; }

  void eval(const double* x, double* out) const { fn_(x, out); }
  std::vector<double> eval(const std::vector<double>& x) const {
    std::vector<double> out(static_cast<std::size_t>(d_));
    fn_(x.data(), out.data());
    return out;
  }
  double eval1(double x) const {
    double out;
    fn_(&x, &out);
    return out;
  }

  bool has_primitive() const { return static_cast<bool>(primitive_); }
  double primitive(double x) const {
    if (!primitive_)
      throw std::invalid_argument("Coupling: no closed-form primitive");
    return primitive_(x);
  }

 private:
  Coupling(int d, std::string tag) : d_(d), tag_(std::move(tag)) {}

  int d_;
  std::string tag_;
  Fn fn_;
  std::function<double(double)> primitive_;
  double sup_norm_ = 0.0;
};

/// Root of cos(kappa x) = 2x nearest the paper's benchmark branch, found by
/// scanning [-1, 1] and bisecting; used to build the shifted coupling.
inline double cosine_shift_root(double kappa, double target = -0.384) {
  auto f = [kappa](double x) { return std::cos(kappa * x) - 2.0 * x; };
  const int n = 20000;
  double best = 0.0;
  double best_dist = 1e300;
  for (int i = 0; i < n; ++i) {
    double a = -1.0 + 2.0 * i / n;
    double b = -1.0 + 2.0 * (i + 1) / n;
    if (f(a) == 0.0 && std::abs(a - target) < best_dist) {
      best = a;
      best_dist = std::abs(a - target);
      continue;
    }
    if (f(a) * f(b) < 0.0) {
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a + b);
        if (f(a) * f(mid) <= 0.0)
          b = mid;
        else
          a = mid;
      }
      const double root = 0.5 * (a + b);
      if (std::abs(root - target) < best_dist) {
        best = root;
        best_dist = std::abs(root - target);
      }
    }
  }
  if (best_dist == 1e300)
    throw std::invalid_argument("cosine_shift_root: no root in [-1, 1]");
  return best;
}

/// Static description of one game: dynamics intensities, cost matrices, the
/// couplings, and the deterministic initial state.
struct ModelSpec {
  int d = 1;
  Eigen::MatrixXd Q, R;
  Coupling g = Coupling::zero(1);
  Coupling f = Coupling::zero(1);
  double sigma = 0.0;
  double eps = 1.0;
  double T = 1.0;
  Eigen::VectorXd x0;

  static ModelSpec benchmark(int d, Coupling g, double sigma, double eps) {
    ModelSpec m;
    m.d = d;
    m.Q = Eigen::MatrixXd::Zero(d, d);
    m.R = Eigen::MatrixXd::Identity(d, d);
    m.g = std::move(g);
    m.f = Coupling::zero(d);
    m.sigma = sigma;
    m.eps = eps;
    m.T = 1.0;
    m.x0 = Eigen::VectorXd::Zero(d);
    return m;
  }

  bool has_running_cost() const { return !Q.isZero(0.0) || !f.is_zero(); }
};

}  // namespace mfglq
