#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <numeric>

#include "mfglq/girsanov.hpp"
#include "mfglq/noise.hpp"
#include "mfglq/time_grid.hpp"

using namespace mfglq;

TEST_CASE("time grid basics") {
  TimeGrid grid(1.0, 4);
  CHECK(grid.node(0) == 0.0);
  CHECK(grid.node(4) == 1.0);
  CHECK(grid.dt() == 0.25);
  CHECK(grid.cell_index(0.0) == 0);
  CHECK(grid.cell_index(0.999) == 3);
  CHECK(grid.cell_index(1.0) == 3);
  CHECK_THROWS_AS(TimeGrid(1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(grid.cell_index(1.5), std::invalid_argument);
}

TEST_CASE("noise bank is deterministic in the seed") {
  const NoiseBank a = sample_noise_bank(7, 1, 1, 2, 1);
  const NoiseBank b = sample_noise_bank(7, 1, 1, 2, 1);
  CHECK(a.idio() == b.idio());
  CHECK(a.common() == b.common());

  const NoiseBank c = sample_noise_bank(8, 1, 1, 2, 1);
  CHECK((a.idio() != c.idio() || a.common() != c.common()));

  CHECK_THROWS_AS(sample_noise_bank(7, 0, 1, 2, 1), std::invalid_argument);
}

TEST_CASE("noise bank entries pass the normal-mean bound") {
  const NoiseBank bank = sample_noise_bank(123, 1, 10000, 10, 1);
  double sum = 0.0;
  for (double v : bank.idio()) sum += v;
  for (double v : bank.common()) sum += v;
  const std::size_t count = bank.idio().size() + bank.common().size();
  const double mean = sum / static_cast<double>(count);
  CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(count)));
}

TEST_CASE("common part is identical across particle counts") {
  const NoiseBank a = sample_noise_bank(99, 1, 8, 5, 2);
  const NoiseBank b = sample_noise_bank(99, 6, 8, 5, 2);
  CHECK(a.common() == b.common());
}

TEST_CASE("worker count does not change the bank") {
  set_worker_count(1);
  const NoiseBank a = sample_noise_bank(41, 3, 17, 6, 2);
  set_worker_count(4);
  const NoiseBank b = sample_noise_bank(41, 3, 17, 6, 2);
  set_worker_count(0);
  CHECK(a.idio() == b.idio());
  CHECK(a.common() == b.common());
}

TEST_CASE("brownian nodes cumulative sum") {
  TimeGrid grid(1.0, 1);
  SECTION("zero increments give the zero path") {
    const std::vector<double> incr{0.0};
    const DrivingPath path = brownian_nodes(incr, grid, 1);
    CHECK(path.values == std::vector<double>{0.0, 0.0});
  }
  SECTION("single unit step") {
    const std::vector<double> incr{1.0};
    const DrivingPath path = brownian_nodes(incr, grid, 1);
    CHECK(path.values[0] == 0.0);
    CHECK(path.values[1] == Catch::Approx(1.0));
  }
  SECTION("length mismatch rejected") {
    const std::vector<double> incr{1.0, 2.0};
    CHECK_THROWS_AS(brownian_nodes(incr, grid, 1), std::invalid_argument);
  }
}

TEST_CASE("terminal node variance matches Brownian scaling") {
  TimeGrid grid(1.0, 4);
  const int n_paths = 100000;
  const NoiseBank bank = sample_noise_bank(5, 1, n_paths, 4, 1);
  double sum = 0.0, sumsq = 0.0;
  for (int j = 0; j < n_paths; ++j) {
    const DrivingPath path = brownian_nodes(bank.common_path(j), grid, 1);
    const double v = path.values[4];
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / n_paths;
  const double var = sumsq / n_paths - mean * mean;
  CHECK(var == Catch::Approx(1.0).margin(0.05));
}

TEST_CASE("piecewise-linear interpolation") {
  TimeGrid grid(1.0, 2);
  DrivingPath path;
  path.p = 2;
  path.d = 1;
  const double a = 0.7, b = -0.3;
  path.values = {0.0, a, b};

  SECTION("exact at nodes, bitwise") {
    for (int k = 0; k <= 2; ++k)
      CHECK(interpolate_linear(path, grid, grid.node(k))[0] == path.values[k]);
  }
  SECTION("chord formula inside a cell") {
    // t = 0.75 sits halfway through the second cell.
    CHECK(interpolate_linear(path, grid, 0.75)[0] ==
          Catch::Approx(a + 0.5 * (b - a)));
  }
  SECTION("midpoint of a single chord") {
    TimeGrid g1(1.0, 1);
    DrivingPath p1;
    p1.p = 1;
    p1.d = 1;
    p1.values = {0.0, 1.0};
    CHECK(interpolate_linear(p1, g1, 0.5)[0] == Catch::Approx(0.5));
  }
  SECTION("out-of-range time rejected") {
    CHECK_THROWS_AS(interpolate_linear(path, grid, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(interpolate_linear(path, grid, 1.1), std::invalid_argument);
  }
}

TEST_CASE("path shifting") {
  SECTION("zero intercept is the identity") {
    TimeGrid grid(1.0, 3);
    const NoiseBank bank = sample_noise_bank(3, 1, 1, 3, 1);
    const DrivingPath path = brownian_nodes(bank.common_path(0), grid, 1);
    const std::vector<double> h(3, 0.0);
    CHECK(shift_path(path, h, 1.0, grid).values == path.values);
  }
  SECTION("pure drift") {
    TimeGrid grid(1.0, 1);
    DrivingPath path;
    path.p = 1;
    path.d = 1;
    path.values = {0.0, 0.0};
    const std::vector<double> h{2.0};
    const DrivingPath shifted = shift_path(path, h, 1.0, grid);
    CHECK(shifted.values[1] == Catch::Approx(2.0));
  }
  SECTION("cumulative drift with eps scaling") {
    TimeGrid grid(1.0, 2);
    DrivingPath path;
    path.p = 2;
    path.d = 1;
    path.values = {0.0, 0.0, 0.0};
    const std::vector<double> h{1.0, 1.0};
    const DrivingPath shifted = shift_path(path, h, 0.5, grid);
    CHECK(shifted.values[1] == Catch::Approx(1.0));
    CHECK(shifted.values[2] == Catch::Approx(2.0));
  }
  SECTION("shift then unshift is the identity") {
    TimeGrid grid(1.0, 5);
    const NoiseBank bank = sample_noise_bank(11, 1, 1, 5, 2);
    const DrivingPath path = brownian_nodes(bank.common_path(0), grid, 2);
    std::vector<double> h(10);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = 0.3 * (i % 3) - 0.2;
    std::vector<double> neg = h;
    for (double& v : neg) v = -v;
    const DrivingPath round =
        shift_path(shift_path(path, h, 0.7, grid), neg, 0.7, grid);
    for (std::size_t i = 0; i < path.values.size(); ++i)
      CHECK(round.values[i] == Catch::Approx(path.values[i]).margin(1e-14));
  }
  SECTION("eps must be positive") {
    TimeGrid grid(1.0, 1);
    DrivingPath path;
    path.p = 1;
    path.d = 1;
    path.values = {0.0, 0.0};
    const std::vector<double> h{1.0};
    CHECK_THROWS_AS(shift_path(path, h, 0.0, grid), std::invalid_argument);
  }
}

TEST_CASE("girsanov weights") {
  SECTION("zero intercept gives unit weights") {
    TimeGrid grid(1.0, 4);
    const NoiseBank bank = sample_noise_bank(17, 1, 3, 4, 1);
    InterceptField h(3, 4, 1);
    const GirsanovWeights w = girsanov_weights(h, bank, 1.0, grid);
    for (double v : w.full) CHECK(v == 1.0);
    for (double v : w.tail) CHECK(v == 1.0);
  }
  SECTION("hand-evaluated one-step exponent") {
    TimeGrid grid(1.0, 1);
    const std::vector<double> h{1.0};
    const std::vector<double> dw{0.5};
    const auto tails = girsanov_weight_row(h, dw, 1, 1.0, grid);
    CHECK(tails[0] == Catch::Approx(std::exp(-1.0)).epsilon(1e-12));
  }
  SECTION("non-finite h rejected") {
    TimeGrid grid(1.0, 1);
    const std::vector<double> h{std::nan("")};
    const std::vector<double> dw{0.5};
    CHECK_THROWS_AS(girsanov_weight_row(h, dw, 1, 1.0, grid),
                    std::invalid_argument);
  }
  SECTION("eps must be positive") {
    TimeGrid grid(1.0, 1);
    const std::vector<double> h{1.0};
    const std::vector<double> dw{0.5};
    CHECK_THROWS_AS(girsanov_weight_row(h, dw, 1, -1.0, grid),
                    std::invalid_argument);
  }
}

TEST_CASE("martingale mean of the full weight") {
  const int N = 10000, p = 10;
  TimeGrid grid(1.0, p);
  const NoiseBank bank = sample_noise_bank(29, 1, N, p, 1);
  InterceptField h(N, p, 1);
  for (double& v : h.h) v = 0.5;
  const GirsanovWeights w = girsanov_weights(h, bank, 1.0, grid);
  double sum = 0.0, sumsq = 0.0;
  for (double v : w.full) {
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / N;
  const double sd = std::sqrt(sumsq / N - mean * mean);
  const double se = sd / std::sqrt(static_cast<double>(N));
  CHECK(std::abs(mean - 1.0) < 3.0 * se);
}

TEST_CASE("measure change against the shifted path") {
  // E[ weight * F(W_T) ] equals E[ F(shift-by-(-h) terminal) ], paired on the
  // same bank.
  const int N = 10000, p = 10;
  TimeGrid grid(1.0, p);
  const NoiseBank bank = sample_noise_bank(31, 1, N, p, 1);
  InterceptField h(N, p, 1);
  for (double& v : h.h) v = 0.5;
  const GirsanovWeights w = girsanov_weights(h, bank, 1.0, grid);
  auto F = [](double x) { return std::tanh(x); };
  double diff_sum = 0.0, diff_sq = 0.0;
  std::vector<double> neg(static_cast<std::size_t>(p), -0.5);
  for (int j = 0; j < N; ++j) {
    const DrivingPath path = brownian_nodes(bank.common_path(j), grid, 1);
    const DrivingPath shifted = shift_path(path, neg, 1.0, grid);
    const double lhs = w.full[static_cast<std::size_t>(j)] *
                       F(path.values[static_cast<std::size_t>(p)]);
    const double rhs = F(shifted.values[static_cast<std::size_t>(p)]);
    diff_sum += lhs - rhs;
    diff_sq += (lhs - rhs) * (lhs - rhs);
  }
  const double mean = diff_sum / N;
  const double sd = std::sqrt(diff_sq / N - mean * mean);
  const double se = sd / std::sqrt(static_cast<double>(N));
  CHECK(std::abs(mean) < 3.0 * se);
}

TEST_CASE("noise bank binary cache round trip") {
  namespace fs = std::filesystem;
  const fs::path file = fs::temp_directory_path() / "mfglq_bank_test.bin";
  const NoiseBank bank = sample_noise_bank(55, 2, 3, 4, 2);
  save_noise_bank(bank, file);

  NoiseBank loaded(0, 1, 1, 1, 1, {}, {});
  REQUIRE(load_noise_bank(file, 55, 2, 3, 4, 2, &loaded));
  CHECK(loaded.idio() == bank.idio());
  CHECK(loaded.common() == bank.common());

  SECTION("mismatched key is rejected") {
    NoiseBank other(0, 1, 1, 1, 1, {}, {});
    CHECK_FALSE(load_noise_bank(file, 56, 2, 3, 4, 2, &other));
  }
  SECTION("corrupt entry is rejected") {
    auto content = [] (const fs::path& f) {
      std::ifstream in(f, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    }(file);
    content.resize(content.size() - 8);
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out << content;
    out.close();
    NoiseBank other(0, 1, 1, 1, 1, {}, {});
    CHECK_FALSE(load_noise_bank(file, 55, 2, 3, 4, 2, &other));
  }
  fs::remove(file);
}
