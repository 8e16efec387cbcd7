#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "mfglq/riccati.hpp"

using namespace mfglq;
using Eigen::MatrixXd;

namespace {

MatrixXd scalar1(double v) {
  MatrixXd m(1, 1);
  m(0, 0) = v;
  return m;
}

double benchmark_eta(double t) { return 1.0 / (2.0 - t); }

}  // namespace

TEST_CASE("continuous riccati benchmark closed form") {
  TimeGrid grid(1.0, 8);
  const auto table = continuous_riccati(MatrixXd::Zero(1, 1),
                                        MatrixXd::Identity(1, 1), grid);
  CHECK(table.eta[0](0, 0) == 0.5);  // exact via the closed form
  for (int k = 0; k <= 8; ++k)
    CHECK(table.eta[static_cast<std::size_t>(k)](0, 0) ==
          Catch::Approx(benchmark_eta(grid.node(k))).epsilon(1e-15));
}

TEST_CASE("continuous riccati boundary condition") {
  TimeGrid grid(1.0, 5);
  MatrixXd Q(2, 2), R(2, 2);
  Q << 0.3, 0.1, 0.1, 0.7;
  R << 1.1, 0.2, 0.0, 0.9;
  const auto table = continuous_riccati(Q, R, grid);
  const MatrixXd want = R.transpose() * R;
  CHECK((table.eta[5] - want).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("continuous riccati matches the tanh solution") {
  // Q = 1, R = 0: eta' = eta^2 - 1 backward from 0, solution tanh(1 - t).
  TimeGrid grid(1.0, 16);
  const auto table =
      continuous_riccati(MatrixXd::Identity(1, 1), MatrixXd::Zero(1, 1), grid);
  CHECK(table.eta[0](0, 0) == Catch::Approx(std::tanh(1.0)).epsilon(1e-9));
  for (int k = 0; k <= 16; ++k)
    CHECK(table.eta[static_cast<std::size_t>(k)](0, 0) ==
          Catch::Approx(std::tanh(1.0 - grid.node(k))).margin(1e-9));
}

TEST_CASE("continuous riccati entry-bound guard") {
  // PSD data never escapes, so exercise the guard through the bound itself.
  TimeGrid grid(1.0, 4);
  CHECK_THROWS_AS(continuous_riccati(MatrixXd::Zero(1, 1), scalar1(2.0), grid,
                                     /*blowup_bound=*/0.9),
                  numerical_error);
}

TEST_CASE("discrete riccati one step by hand") {
  TimeGrid grid(1.0, 1);
  const auto table =
      discrete_riccati(MatrixXd::Zero(1, 1), MatrixXd::Identity(1, 1), grid);
  CHECK(table.eta[0](0, 0) == Catch::Approx(0.5).epsilon(1e-15));
  CHECK(table.eta[1](0, 0) == 1.0);
}

TEST_CASE("discrete riccati boundary") {
  TimeGrid grid(1.0, 6);
  MatrixXd Q(2, 2), R(2, 2);
  Q << 0.5, 0.0, 0.2, 0.4;
  R << 1.0, 0.3, 0.0, 1.2;
  const auto table = discrete_riccati(Q, R, grid);
  CHECK((table.eta[6] - R.transpose() * R).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("discrete riccati symmetry and positivity") {
  TimeGrid grid(1.0, 12);
  MatrixXd Q(2, 2), R(2, 2);
  Q << 0.5, 0.1, 0.1, 0.4;
  R << 1.0, 0.3, 0.3, 1.2;
  const auto table = discrete_riccati(Q, R, grid);
  for (const auto& eta : table.eta) {
    CHECK((eta - eta.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(eta);
    CHECK(es.eigenvalues().minCoeff() >= -1e-12);
  }
}

TEST_CASE("resolvent factors commute") {
  TimeGrid grid(1.0, 10);
  MatrixXd Q(2, 2), R(2, 2);
  Q << 0.6, 0.2, 0.2, 0.9;
  R << 1.0, 0.1, 0.1, 0.8;
  const double dt = grid.dt();
  const MatrixXd id = MatrixXd::Identity(2, 2);
  MatrixXd P = R.transpose() * R;
  const MatrixXd QtQ = Q.transpose() * Q;
  for (int l = 9; l >= 0; --l) {
    const MatrixXd inv = (id + dt * P).partialPivLu().solve(id);
    CHECK((inv * P - P * inv).cwiseAbs().maxCoeff() < 1e-12);
    P = P - dt * (P * inv * P - QtQ);
  }
}

TEST_CASE("benchmark discrete table is exact") {
  // With Q = 0 the auxiliary recursion telescopes (1/P_l - 1/P_{l+1} = T/p),
  // so the sampled-data gain reproduces 1/(2 - t_k) to rounding at every p.
  for (int p : {8, 16, 32, 64}) {
    TimeGrid grid(1.0, p);
    const auto table =
        discrete_riccati(MatrixXd::Zero(1, 1), MatrixXd::Identity(1, 1), grid);
    double sup = 0.0;
    for (int k = 0; k <= p; ++k)
      sup = std::max(sup, std::abs(table.eta[static_cast<std::size_t>(k)](0, 0) -
                                   benchmark_eta(grid.node(k))));
    CHECK(sup < 1e-13);
  }
}

TEST_CASE("discrete converges to continuous at first order") {
  // Q = 1, R = 0 has genuine O(1/p) error; sup_k |eta^(p) - eta(t_k)| should
  // halve when p doubles.
  std::vector<double> errs;
  for (int p : {8, 16, 32, 64}) {
    TimeGrid grid(1.0, p);
    const auto disc =
        discrete_riccati(MatrixXd::Identity(1, 1), MatrixXd::Zero(1, 1), grid);
    double sup = 0.0;
    for (int k = 0; k <= p; ++k)
      sup = std::max(sup, std::abs(disc.eta[static_cast<std::size_t>(k)](0, 0) -
                                   std::tanh(1.0 - grid.node(k))));
    errs.push_back(sup);
  }
  for (std::size_t i = 1; i < errs.size(); ++i) {
    const double ratio = errs[i - 1] / errs[i];
    CHECK(ratio > 1.5);
    CHECK(ratio < 2.5);
  }
}

TEST_CASE("scalar gain extraction") {
  TimeGrid grid(1.0, 4);
  const auto bench =
      discrete_riccati(MatrixXd::Zero(2, 2), MatrixXd::Identity(2, 2), grid);
  std::vector<double> gains;
  REQUIRE(bench.scalar_gains(&gains));
  CHECK(gains.size() == 5);
  CHECK(gains[4] == 1.0);

  MatrixXd R(2, 2);
  R << 1.0, 0.5, 0.0, 1.0;
  const auto skew = discrete_riccati(MatrixXd::Zero(2, 2), R, grid);
  CHECK_FALSE(skew.scalar_gains(&gains));
}

TEST_CASE("riccati rejects bad input") {
  TimeGrid grid(1.0, 2);
  MatrixXd bad(1, 2);
  bad << 1.0, 2.0;
  CHECK_THROWS_AS(continuous_riccati(bad, MatrixXd::Identity(1, 1), grid),
                  std::invalid_argument);
  CHECK_THROWS_AS(discrete_riccati(bad, MatrixXd::Identity(1, 1), grid),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      continuous_riccati(scalar1(std::nan("")), MatrixXd::Identity(1, 1), grid),
      std::invalid_argument);
}
