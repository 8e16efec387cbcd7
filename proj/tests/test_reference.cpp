#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "mfglq/analysis.hpp"
#include "mfglq/reference.hpp"

using namespace mfglq;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ReferenceConfig benchmark_config(int N, int p, int D, double eps,
                                 Coupling g) {
  ReferenceConfig cfg;
  cfg.model = ModelSpec::benchmark(g.dim(), std::move(g), 0.0, eps);
  cfg.N = N;
  cfg.p = p;
  cfg.D = D;
  return cfg;
}

RiccatiTable benchmark_eta(int d, int p) {
  TimeGrid grid(1.0, p);
  return continuous_riccati(MatrixXd::Zero(d, d), MatrixXd::Identity(d, d),
                            grid);
}

}  // namespace

TEST_CASE("ou forward simulation basics") {
  const int p = 6;
  TimeGrid grid(1.0, p);
  const auto eta = benchmark_eta(1, p);

  SECTION("zero intensity keeps the mean at the start") {
    const NoiseBank bank = sample_noise_bank(3, 1, 5, p, 1);
    const auto env =
        simulate_ou_forward(eta, bank, grid, 0.0, VectorXd::Zero(1));
    for (double v : env.m) CHECK(v == 0.0);
  }
  SECTION("zero increments give the zero path") {
    NoiseBank zero_bank(0, 1, 4, p, 1,
                        std::vector<double>(static_cast<std::size_t>(4 * p), 0.0),
                        std::vector<double>(static_cast<std::size_t>(4 * p), 0.0));
    const auto env =
        simulate_ou_forward(eta, zero_bank, grid, 1.0, VectorXd::Zero(1));
    for (double v : env.m) CHECK(v == 0.0);
  }
}

TEST_CASE("ou terminal variance matches the quadrature oracle") {
  // Var(m_1) = int_0^1 exp(-2 int_s^1 eta) ds, evaluated by nested Simpson.
  const int p = 64, N = 100000;
  TimeGrid grid(1.0, p);
  const auto eta = benchmark_eta(1, p);
  const NoiseBank bank = sample_noise_bank(101, 1, N, p, 1);
  const auto env = simulate_ou_forward(eta, bank, grid, 1.0, VectorXd::Zero(1));
  double sum = 0.0, sumsq = 0.0;
  for (int j = 0; j < N; ++j) {
    const double v = env.at(j, p)[0];
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / N;
  const double var = sumsq / N - mean * mean;

  auto inner = [](double s) {  // int_s^1 1/(2-u) du by Simpson
    const int n = 200;
    const double h = (1.0 - s) / n;
    if (h == 0.0) return 0.0;
    double acc = 1.0 / (2.0 - s) + 1.0;
    for (int i = 1; i < n; ++i)
      acc += (i % 2 ? 4.0 : 2.0) / (2.0 - (s + i * h));
    return acc * h / 3.0;
  };
  const int n = 200;
  double oracle = std::exp(-2.0 * inner(0.0)) + std::exp(-2.0 * inner(1.0));
  for (int i = 1; i < n; ++i)
    oracle += (i % 2 ? 4.0 : 2.0) * std::exp(-2.0 * inner(i / double(n)));
  oracle /= 3.0 * n;
  CHECK(oracle == Catch::Approx(0.5).epsilon(1e-4));  // closed form of the integral
  CHECK(var == Catch::Approx(oracle).epsilon(0.03));
}

TEST_CASE("picard step on trivial couplings") {
  const int N = 64, p = 4;
  TimeGrid grid(1.0, p);
  const auto eta = benchmark_eta(1, p);
  const NoiseBank bank = sample_noise_bank(7, 1, N, p, 1);
  const auto model0 =
      ModelSpec::benchmark(1, Coupling::zero(1), 0.0, 1.0);
  const auto env = simulate_ou_forward(eta, bank, grid, 1.0, VectorXd::Zero(1));
  InterceptField h0(N, p, 1);

  SECTION("zero coupling gives zero intercept") {
    const auto h1 =
        picard_step(h0, env, eta, bank, grid, model0, 2, 1.0,
                    FeatureStandardizer::Mode::diag);
    for (double v : h1.h) CHECK(std::abs(v) < 1e-12);
  }
  SECTION("constant coupling matches the discounted closed form") {
    const double gamma = 0.8;
    const auto model_const =
        ModelSpec::benchmark(1, Coupling::constant({gamma}), 0.0, 1.0);
    const auto h1 =
        picard_step(h0, env, eta, bank, grid, model_const, 3, 1.0,
                    FeatureStandardizer::Mode::diag);
    for (int k = 0; k < p; ++k) {
      double expo = 0.0;
      for (int s = k; s < p; ++s)
        expo += grid.dt() * eta.eta[static_cast<std::size_t>(s)](0, 0);
      const double want = std::exp(-expo) * gamma;
      for (int j = 0; j < N; ++j)
        CHECK(h1.at(j, k)[0] == Catch::Approx(want).margin(1e-8));
    }
  }
}

TEST_CASE("picard iterates contract on the benchmark") {
  const int N = 10000, p = 10;
  TimeGrid grid(1.0, p);
  const auto eta = benchmark_eta(1, p);
  const NoiseBank bank = sample_noise_bank(11, 1, N, p, 1);
  const auto model = ModelSpec::benchmark(1, Coupling::cosine(1, 1.0), 0.0, 1.0);
  const auto env = simulate_ou_forward(eta, bank, grid, 1.0, VectorXd::Zero(1));
  InterceptField h(N, p, 1);
  InterceptField prev = h;
  for (int it = 0; it < 10; ++it) {
    prev = h;
    h = picard_step(h, env, eta, bank, grid, model, 4, 1.0,
                    FeatureStandardizer::Mode::diag);
  }
  CHECK(field_l2_diff(h, prev) < 1e-2);
}

TEST_CASE("solve_reference properties") {
  ReferenceConfig cfg = benchmark_config(2000, 10, 4, 1.0, Coupling::cosine(1, 1.0));
  const auto eta = benchmark_eta(1, cfg.p);
  const NoiseBank bank = sample_noise_bank(41, 1, cfg.N, cfg.p, 1);
  const ReferenceSolution sol = solve_reference(cfg, bank, eta);
  const TimeGrid grid(1.0, cfg.p);

  SECTION("clamp invariant") {
    for (double v : sol.h_field.h) CHECK(std::abs(v) <= cfg.clamp);
  }
  SECTION("declared convergence") {
    CHECK(sol.converged);
    CHECK(sol.last_picard_delta < cfg.convergence_tol);
  }
  SECTION("self-consistency: stored h equals the stored regressions") {
    for (int j = 0; j < cfg.N; j += 97) {
      for (int k = 0; k < cfg.p; ++k) {
        double out;
        sol.coeffs[static_cast<std::size_t>(k)].eval(sol.basis,
                                                     sol.m_field.at(j, k), &out);
        out = std::clamp(out, -cfg.clamp, cfg.clamp);
        CHECK(std::abs(out - sol.h_field.at(j, k)[0]) < 1e-12);
      }
    }
  }
  SECTION("fixed-point residual below the tolerance") {
    const auto next =
        picard_step(sol.h_field, sol.m_field, eta, bank, grid, cfg.model, cfg.D,
                    cfg.clamp, cfg.standardizer_mode);
    CHECK(field_l2_diff(next, sol.h_field) < cfg.convergence_tol);
  }
  SECTION("adaptedness: shuffled tails leave earlier evaluations unchanged") {
    const int cut = 5;  // shuffle increments for steps above the cut
    std::vector<double> common = bank.common();
    const std::size_t stride = static_cast<std::size_t>(cfg.p);
    for (int s = cut; s < cfg.p; ++s) {
      const double first = common[static_cast<std::size_t>(s)];
      for (int j = 0; j + 1 < cfg.N; ++j)
        common[static_cast<std::size_t>(j) * stride + s] =
            common[static_cast<std::size_t>(j + 1) * stride + s];
      common[static_cast<std::size_t>(cfg.N - 1) * stride + s] = first;
    }
    NoiseBank shuffled(bank.seed(), 1, cfg.N, cfg.p, 1,
                       std::vector<double>(bank.idio()), std::move(common));
    const auto env2 =
        simulate_ou_forward(eta, shuffled, grid, 1.0, VectorXd::Zero(1));
    for (int j = 0; j < cfg.N; j += 131) {
      for (int k = 0; k <= cut; ++k)
        CHECK(env2.at(j, k)[0] == sol.m_field.at(j, k)[0]);
      for (int k = 0; k < cut; ++k) {
        double a, b;
        sol.coeffs[static_cast<std::size_t>(k)].eval(sol.basis,
                                                     sol.m_field.at(j, k), &a);
        sol.coeffs[static_cast<std::size_t>(k)].eval(sol.basis, env2.at(j, k), &b);
        CHECK(a == b);
      }
    }
  }
}

TEST_CASE("constant coupling reference matches the closed form") {
  ReferenceConfig cfg =
      benchmark_config(512, 8, 3, 1.0, Coupling::constant({1.0}));
  const auto eta = benchmark_eta(1, cfg.p);
  const NoiseBank bank = sample_noise_bank(77, 1, cfg.N, cfg.p, 1);
  const ReferenceSolution sol = solve_reference(cfg, bank, eta);
  const TimeGrid grid(1.0, cfg.p);
  for (int k = 0; k < cfg.p; ++k) {
    double expo = 0.0;
    for (int s = k; s < cfg.p; ++s)
      expo += grid.dt() * eta.eta[static_cast<std::size_t>(s)](0, 0);
    const double want = std::exp(-expo);
    for (int j = 0; j < cfg.N; j += 61)
      CHECK(sol.h_field.at(j, k)[0] == Catch::Approx(want).margin(1e-8));
  }
}

TEST_CASE("reference cost") {
  SECTION("zero coupling and zero noise cost nothing") {
    ReferenceConfig cfg = benchmark_config(16, 4, 2, 0.0, Coupling::zero(1));
    cfg.model.sigma = 0.0;
    const auto eta = benchmark_eta(1, cfg.p);
    const NoiseBank bank = sample_noise_bank(5, 1, cfg.N, cfg.p, 1);
    const ReferenceSolution sol = solve_reference(cfg, bank, eta);
    CHECK(sol.cost_raw == 0.0);
    CHECK(sol.cost_renormalized == 0.0);
  }
  SECTION("deterministic constant-coupling value") {
    // x0 = 1, g = 1: the optimal deterministic control is constant -1 with
    // value 1.0 at any step count; the discount bias is second order.
    ReferenceConfig cfg = benchmark_config(4, 64, 2, 0.0, Coupling::constant({1.0}));
    cfg.model.sigma = 0.0;
    cfg.model.x0 = VectorXd::Ones(1);
    const auto eta = benchmark_eta(1, cfg.p);
    const NoiseBank bank = sample_noise_bank(6, 1, cfg.N, cfg.p, 1);
    const ReferenceSolution sol = solve_reference(cfg, bank, eta);
    CHECK(sol.cost_renormalized == Catch::Approx(1.0).margin(1e-3));

    // Independent deterministic rollout of the stored feedback.
    const TimeGrid grid(1.0, cfg.p);
    double x = 1.0, run = 0.0;
    for (int k = 1; k <= cfg.p; ++k) {
      const double a = -(eta.eta[static_cast<std::size_t>(k - 1)](0, 0) * x +
                         sol.h_field.at(0, k - 1)[0]);
      run += 0.5 * grid.dt() * a * a;
      x += grid.dt() * a;
    }
    const double oracle = run + 0.5 * (x + 1.0) * (x + 1.0);
    CHECK(sol.cost_renormalized == Catch::Approx(oracle).margin(1e-12));
  }
  SECTION("estimate stable under doubling N") {
    const auto eta = benchmark_eta(1, 10);
    const TimeGrid grid(1.0, 10);
    auto run_once = [&](int N, std::uint64_t seed, double* se) {
      ReferenceConfig cfg =
          benchmark_config(N, 10, 4, 1.0, Coupling::cosine(1, 1.0));
      const NoiseBank bank = sample_noise_bank(seed, 1, N, 10, 1);
      const ReferenceSolution sol = solve_reference(cfg, bank, eta);
      std::vector<double> per_j;
      double renorm;
      reference_cost_raw(sol, eta, bank, grid, cfg.model, 0.0, 1.0, &renorm,
                         &per_j);
      double mean = 0.0;
      for (double v : per_j) mean += v;
      mean /= N;
      double var = 0.0;
      for (double v : per_j) var += (v - mean) * (v - mean);
      *se = std::sqrt(var / (N - 1.0) / N);
      return renorm;
    };
    double se1, se2;
    const double c1 = run_once(4000, 21, &se1);
    const double c2 = run_once(8000, 22, &se2);
    CHECK(std::abs(c1 - c2) < 3.0 * std::sqrt(se1 * se1 + se2 * se2));
  }
}

TEST_CASE("reference cache round trip") {
  namespace fs = std::filesystem;
  ReferenceConfig cfg = benchmark_config(128, 5, 3, 1.0, Coupling::cosine(1, 1.0));
  const auto eta = benchmark_eta(1, cfg.p);
  const NoiseBank bank = sample_noise_bank(13, 1, cfg.N, cfg.p, 1);
  const ReferenceSolution sol = solve_reference(cfg, bank, eta);

  const fs::path file = fs::temp_directory_path() / "mfglq_ref_test.bin";
  save_reference(sol, file);
  ReferenceSolution loaded;
  REQUIRE(load_reference(file, sol.fingerprint, cfg.N, cfg.p, 1, cfg.D, &loaded));
  CHECK(loaded.m_field.m == sol.m_field.m);
  CHECK(loaded.h_field.h == sol.h_field.h);
  CHECK(loaded.cost_raw == sol.cost_raw);
  CHECK(loaded.cost_renormalized == sol.cost_renormalized);
  for (int k = 0; k < cfg.p; ++k)
    CHECK(loaded.coeffs[static_cast<std::size_t>(k)].c ==
          sol.coeffs[static_cast<std::size_t>(k)].c);

  ReferenceSolution wrong;
  CHECK_FALSE(load_reference(file, sol.fingerprint + 1, cfg.N, cfg.p, 1, cfg.D,
                             &wrong));
  fs::remove(file);
}

TEST_CASE("reference rejects a running coupling") {
  ReferenceConfig cfg = benchmark_config(16, 3, 2, 1.0, Coupling::zero(1));
  cfg.model.f = Coupling::constant({0.5});
  const auto eta = benchmark_eta(1, cfg.p);
  const NoiseBank bank = sample_noise_bank(5, 1, cfg.N, cfg.p, 1);
  CHECK_THROWS_AS(solve_reference(cfg, bank, eta), std::invalid_argument);
}
