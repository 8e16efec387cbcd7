#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mfglq/hermite.hpp"
#include "mfglq/noise.hpp"
#include "mfglq/regression.hpp"

using namespace mfglq;

namespace {

// Rodrigues oracle: d^l/dx^l e^{-x^2} = P_l(x) e^{-x^2} with the polynomial
// built by symbolic coefficient differentiation, independent of the
// recurrence under test.
double rodrigues_normalized(int l, double x) {
  std::vector<double> poly{1.0};  // P_0
  for (int n = 0; n < l; ++n) {
    std::vector<double> next(poly.size() + 1, 0.0);
    for (std::size_t k = 0; k < poly.size(); ++k) {
      if (k >= 1) next[k - 1] += poly[k] * static_cast<double>(k);  // P'
      next[k + 1] += -2.0 * poly[k];                                // -2x P
    }
    poly = std::move(next);
  }
  double value = 0.0;
  double xp = 1.0;
  for (std::size_t k = 0; k < poly.size(); ++k) {
    value += poly[k] * xp;
    xp *= x;
  }
  double fact = 1.0;
  for (int n = 1; n <= l; ++n) fact *= n;
  const double sign = l % 2 ? -1.0 : 1.0;
  return sign * value / std::sqrt(std::pow(2.0, l) * fact);
}

}  // namespace

TEST_CASE("normalized hermite values") {
  CHECK(hermite_1d(0, -3.7) == 1.0);
  CHECK(hermite_1d(0, 12.0) == 1.0);
  CHECK(hermite_1d(1, 1.0) == Catch::Approx(std::sqrt(2.0)).epsilon(1e-14));
  CHECK(hermite_1d(2, 0.0) == Catch::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("recurrence agrees with the Rodrigues oracle") {
  for (int l = 0; l <= 8; ++l)
    for (double x : {-2.0, -1.0, 0.0, 1.0, 2.0})
      CHECK(hermite_1d(l, x) ==
            Catch::Approx(rodrigues_normalized(l, x)).margin(1e-10));
}

TEST_CASE("orthonormality under N(0, 1/2)") {
  const int n = 100000;
  const NoiseBank bank = sample_noise_bank(71, 1, n, 1, 1);
  const double scale = std::sqrt(0.5);
  for (int m = 0; m <= 4; ++m) {
    for (int k = m; k <= 4; ++k) {
      double sum = 0.0, sumsq = 0.0;
      for (int j = 0; j < n; ++j) {
        const double x = scale * bank.common_path(j)[0];
        const double v = hermite_1d(m, x) * hermite_1d(k, x);
        sum += v;
        sumsq += v * v;
      }
      const double mean = sum / n;
      const double sd = std::sqrt(std::max(sumsq / n - mean * mean, 0.0));
      const double se = sd / std::sqrt(static_cast<double>(n));
      const double expect = m == k ? 1.0 : 0.0;
      INFO("pair (" << m << ", " << k << ")");
      CHECK(std::abs(mean - expect) < 3.0 * se + 1e-12);
    }
  }
}

TEST_CASE("multi-index set enumeration") {
  const auto set = MultiIndexSet::total_degree(2, 4);
  CHECK(set.size() == 15);  // C(6, 2)
  CHECK(set.indices.front() == std::vector<int>{0, 0});
  for (std::size_t i = 1; i < set.indices.size(); ++i)
    CHECK(set.indices[i - 1] < set.indices[i]);  // lexicographic
  for (const auto& t : set.indices) CHECK(t[0] + t[1] <= 4);

  const auto line = MultiIndexSet::total_degree(1, 6);
  CHECK(line.size() == 7);
}

TEST_CASE("tensor products") {
  const double x2[2] = {1.0, 1.0};
  CHECK(hermite_tensor({0, 0}, x2, 2) == 1.0);
  CHECK(hermite_tensor({1, 1}, x2, 2) == Catch::Approx(2.0).epsilon(1e-14));
  const double x2b[2] = {0.0, 5.0};
  CHECK(hermite_tensor({2, 0}, x2b, 2) ==
        Catch::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(hermite_tensor({1}, x2, 2), std::invalid_argument);
}

TEST_CASE("standardizer fits") {
  SECTION("degenerate samples hit the floor") {
    const std::vector<double> samples{3.0, 3.0, 3.0, 3.0};
    const auto st = fit_standardizer(samples, 1);
    CHECK(st.mean[0] == 3.0);
    CHECK(st.scale[0] == 1e-8);
    CHECK(st.degenerate);
  }
  SECTION("population covariance convention") {
    const std::vector<double> samples{-1.0, 1.0};
    const auto st = fit_standardizer(samples, 1);
    CHECK(st.mean[0] == 0.0);
    CHECK(st.scale[0] == Catch::Approx(1.0).epsilon(1e-14));
  }
  SECTION("standard normal recovers unit scales") {
    const int n = 100000;
    const NoiseBank bank = sample_noise_bank(77, 1, n, 1, 2);
    std::vector<double> samples(static_cast<std::size_t>(n) * 2);
    for (int j = 0; j < n; ++j) {
      samples[2 * j] = bank.common_path(j)[0];
      samples[2 * j + 1] = bank.common_path(j)[1];
    }
    const auto st = fit_standardizer(samples, 2);
    CHECK(st.scale[0] == Catch::Approx(1.0).epsilon(0.02));
    CHECK(st.scale[1] == Catch::Approx(1.0).epsilon(0.02));
  }
  SECTION("cholesky factorizes the covariance") {
    const int n = 4000;
    const NoiseBank bank = sample_noise_bank(79, 1, n, 1, 2);
    std::vector<double> samples(static_cast<std::size_t>(n) * 2);
    for (int j = 0; j < n; ++j) {
      const double z0 = bank.common_path(j)[0];
      const double z1 = bank.common_path(j)[1];
      samples[2 * j] = z0;
      samples[2 * j + 1] = 0.8 * z0 + 0.6 * z1;  // correlated pair
    }
    const auto st =
        fit_standardizer(samples, 2, FeatureStandardizer::Mode::cholesky);
    REQUIRE(st.mode == FeatureStandardizer::Mode::cholesky);
    CHECK_FALSE(st.degenerate);
    // Standardized samples should have near-identity covariance.
    double c00 = 0, c01 = 0, c11 = 0;
    std::vector<double> z(2);
    for (int j = 0; j < n; ++j) {
      st.apply(samples.data() + 2 * j, z.data());
      c00 += z[0] * z[0];
      c01 += z[0] * z[1];
      c11 += z[1] * z[1];
    }
    CHECK(c00 / n == Catch::Approx(1.0).margin(1e-6));
    CHECK(c01 / n == Catch::Approx(0.0).margin(1e-6));
    CHECK(c11 / n == Catch::Approx(1.0).margin(1e-6));
  }
  SECTION("cholesky falls back to diag on rank-deficient data") {
    std::vector<double> samples;
    for (int j = 0; j < 16; ++j) {
      samples.push_back(static_cast<double>(j));
      samples.push_back(2.0 * j);  // perfectly collinear
    }
    const auto st =
        fit_standardizer(samples, 2, FeatureStandardizer::Mode::cholesky);
    CHECK(st.mode == FeatureStandardizer::Mode::diag);
    CHECK(st.degenerate);
  }
  SECTION("too few samples rejected") {
    const std::vector<double> one{1.0};
    CHECK_THROWS_AS(fit_standardizer(one, 1), std::invalid_argument);
  }
}

TEST_CASE("weighted least squares") {
  SECTION("constant feature gives the weighted mean") {
    // The mandated Tikhonov shift biases the solve at the 1e-8 relative
    // level, so the check allows exactly that.
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(5, 1);
    Eigen::MatrixXd Y(5, 1);
    Y << 1, 2, 3, 4, 5;
    Eigen::VectorXd w = Eigen::VectorXd::Ones(5);
    const auto c = weighted_least_squares(X, Y, w);
    CHECK(c(0, 0) == Catch::Approx(3.0).epsilon(1e-7));
  }
  SECTION("square system interpolates") {
    Eigen::MatrixXd X(3, 3);
    const double pts[3] = {-1.5, 0.1, 1.4};
    for (int j = 0; j < 3; ++j)
      for (int l = 0; l < 3; ++l) X(j, l) = hermite_1d(l, pts[j]);
    Eigen::MatrixXd Y(3, 1);
    Y << 0.2, -0.1, 0.15;
    Eigen::VectorXd w = Eigen::VectorXd::Ones(3);
    const auto c = weighted_least_squares(X, Y, w);
    const Eigen::MatrixXd resid = X * c - Y;
    CHECK(resid.cwiseAbs().maxCoeff() < 1e-8);
  }
  SECTION("recovers noiseless coefficients") {
    const int n = 64;
    const NoiseBank bank = sample_noise_bank(83, 1, n, 1, 1);
    Eigen::MatrixXd X(n, 3);
    for (int j = 0; j < n; ++j) {
      const double x = bank.common_path(j)[0];
      X(j, 0) = hermite_1d(0, x);
      X(j, 1) = hermite_1d(1, x);
      X(j, 2) = hermite_1d(2, x);
    }
    Eigen::VectorXd truth(3);
    truth << 0.7, -1.3, 0.4;
    const Eigen::MatrixXd Y = X * truth;
    Eigen::VectorXd w(n);
    for (int j = 0; j < n; ++j) w[j] = 0.5 + 0.01 * (j % 7);
    const auto c = weighted_least_squares(X, Y, w);
    for (int i = 0; i < 3; ++i)
      CHECK(c(i, 0) == Catch::Approx(truth[i]).margin(1e-6));
  }
  SECTION("residual never increases with the degree") {
    const int n = 200;
    const NoiseBank bank = sample_noise_bank(89, 1, n, 1, 1);
    Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
    std::vector<double> xs(n), ys(n);
    for (int j = 0; j < n; ++j) {
      xs[static_cast<std::size_t>(j)] = bank.common_path(j)[0];
      ys[static_cast<std::size_t>(j)] =
          std::cos(2.0 * xs[static_cast<std::size_t>(j)]);
    }
    double prev = 1e300;
    for (int D = 0; D <= 4; ++D) {
      Eigen::MatrixXd X(n, D + 1);
      for (int j = 0; j < n; ++j)
        for (int l = 0; l <= D; ++l)
          X(j, l) = hermite_1d(l, xs[static_cast<std::size_t>(j)]);
      Eigen::MatrixXd Y(n, 1);
      for (int j = 0; j < n; ++j) Y(j, 0) = ys[static_cast<std::size_t>(j)];
      const auto c = weighted_least_squares(X, Y, w);
      const double resid = (X * c - Y).squaredNorm();
      CHECK(resid <= prev * (1.0 + 1e-12) + 1e-12);
      prev = resid;
    }
  }
  SECTION("all-zero weights rejected") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 1);
    Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(3, 1);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(3);
    CHECK_THROWS_AS(weighted_least_squares(X, Y, w), std::invalid_argument);
  }
}

TEST_CASE("feature rows combine standardizer and tensor basis") {
  const auto basis = MultiIndexSet::total_degree(2, 2);
  FeatureStandardizer st;
  st.mode = FeatureStandardizer::Mode::diag;
  st.mean = Eigen::VectorXd::Zero(2);
  st.scale = Eigen::VectorXd::Ones(2);
  std::vector<double> row(static_cast<std::size_t>(basis.size()));
  std::vector<double> z(2), hb(6);
  const double x[2] = {0.3, -0.8};
  feature_row(basis, st, x, row.data(), z.data(), hb.data());
  for (int l = 0; l < basis.size(); ++l)
    CHECK(row[static_cast<std::size_t>(l)] ==
          Catch::Approx(hermite_tensor(basis.indices[static_cast<std::size_t>(l)], x, 2))
              .epsilon(1e-14));
}
