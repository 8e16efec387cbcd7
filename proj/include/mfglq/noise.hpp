#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfglq/errors.hpp"
#include "mfglq/hash.hpp"
#include "mfglq/parallel.hpp"
#include "mfglq/rng.hpp"
#include "mfglq/time_grid.hpp"

namespace mfglq {

/// Fixed standard-normal increment arrays, reused across every learning
/// iteration. Entries are unit normals; the sqrt(T/p) step scaling is applied
/// at use sites so one bank serves every (sigma, eps) pair.
class NoiseBank {
 public:
  NoiseBank(std::uint64_t seed, int M, int N, int p, int d,
            std::vector<double> idio, std::vector<double> common)
      : seed_(seed), M_(M), N_(N), p_(p), d_(d), idio_(std::move(idio)),
        common_(std::move(common)) {}

  std::uint64_t seed() const { return seed_; }
  int particles() const { return M_; }
  int realizations() const { return N_; }
  int steps() const { return p_; }
  int dim() const { return d_; }

  // d-vector increments for step k = 1..p live at index k-1.
  std::span<const double> idio_path(int i, int j) const {
    const std::size_t stride = static_cast<std::size_t>(p_) * d_;
    return {idio_.data() + (static_cast<std::size_t>(i) * N_ + j) * stride,
            stride};
  }
  std::span<const double> common_path(int j) const {
    const std::size_t stride = static_cast<std::size_t>(p_) * d_;
    return {common_.data() + static_cast<std::size_t>(j) * stride, stride};
  }
  const std::vector<double>& idio() const { return idio_; }
  const std::vector<double>& common() const { return common_; }

  std::uint64_t fingerprint() const {
    return Fnv1a{}
        .str("noise-bank")
        .u64(seed_)
        .i64(M_)
        .i64(N_)
        .i64(p_)
        .i64(d_)
        .value();
  }

 private:
  std::uint64_t seed_;
  int M_, N_, p_, d_;
  std::vector<double> idio_;    // (i, j, k, dim)
  std::vector<double> common_;  // (j, k, dim)
};

namespace detail {

// One Philox stream per (i, j); the common streams are keyed separately from
// every idiosyncratic stream so banks with different M share their common
// part bit for bit.
inline void fill_normal_block(std::uint64_t seed, std::uint32_t stream_i,
                              std::uint32_t stream_j, int p, int d,
                              double* out) {
  const int pairs = (d + 1) / 2;
  for (int k = 0; k < p; ++k) {
    for (int q = 0; q < pairs; ++q) {
      double z0, z1;
      philox_normal_pair(seed, static_cast<std::uint32_t>(q),
                         static_cast<std::uint32_t>(k), stream_j, stream_i, z0,
                         z1);
      out[static_cast<std::size_t>(k) * d + 2 * q] = z0;
      if (2 * q + 1 < d) out[static_cast<std::size_t>(k) * d + 2 * q + 1] = z1;
    }
  }
}

}  // namespace detail

inline NoiseBank sample_noise_bank(std::uint64_t seed, int M, int N, int p,
                                   int d) {
  if (M < 1 || N < 1 || p < 1 || d < 1)
    throw std::invalid_argument("sample_noise_bank: counts must be >= 1");
  const std::size_t stride = static_cast<std::size_t>(p) * d;
  std::vector<double> idio(static_cast<std::size_t>(M) * N * stride);
  std::vector<double> common(static_cast<std::size_t>(N) * stride);
  // stream_i = 0 tags the common noise, i + 1 the i-th particle.
  parallel_for(static_cast<std::size_t>(M) * N, [&](std::size_t ij) {
    const int i = static_cast<int>(ij / N);
    const int j = static_cast<int>(ij % N);
    detail::fill_normal_block(seed, static_cast<std::uint32_t>(i + 1),
                              static_cast<std::uint32_t>(j), p, d,
                              idio.data() + ij * stride);
  });
  parallel_for(static_cast<std::size_t>(N), [&](std::size_t j) {
    detail::fill_normal_block(seed, 0u, static_cast<std::uint32_t>(j), p, d,
                              common.data() + j * stride);
  });
  return NoiseBank(seed, M, N, p, d, std::move(idio), std::move(common));
}

/// Brownian path sampled at grid nodes; values[0] = 0.
struct DrivingPath {
  int p = 0;
  int d = 0;
  std::vector<double> values;  // (k = 0..p, dim)

  const double* at(int k) const {
    return values.data() + static_cast<std::size_t>(k) * d;
  }
  double* at(int k) { return values.data() + static_cast<std::size_t>(k) * d; }
};

/// Nodes W_{t_k} = sqrt(T/p) * (D_1 + ... + D_k) from unit-normal increments,
/// so each node increment has variance (T/p) I_d.
inline DrivingPath brownian_nodes(std::span<const double> increments,
                                  const TimeGrid& grid, int d) {
  const int p = grid.steps();
  if (increments.size() != static_cast<std::size_t>(p) * d)
    throw std::invalid_argument("brownian_nodes: increment count mismatch");
  DrivingPath path;
  path.p = p;
  path.d = d;
  path.values.assign(static_cast<std::size_t>(p + 1) * d, 0.0);
  const double scale = std::sqrt(grid.dt());
  for (int k = 1; k <= p; ++k)
    for (int c = 0; c < d; ++c)
      path.values[static_cast<std::size_t>(k) * d + c] =
          path.values[static_cast<std::size_t>(k - 1) * d + c] +
          scale * increments[static_cast<std::size_t>(k - 1) * d + c];
  return path;
}

/// Piecewise-linear interpolation W^p_t; exact (bitwise) at the nodes.
inline std::vector<double> interpolate_linear(const DrivingPath& path,
                                              const TimeGrid& grid, double t) {
  if (t < 0.0 || t > grid.horizon())
    throw std::invalid_argument("interpolate_linear: time outside [0, T]");
  const int d = path.d;
  const int k = grid.cell_index(t);
  std::vector<double> out(static_cast<std::size_t>(d));
  if (t == grid.node(k)) {
    for (int c = 0; c < d; ++c) out[c] = path.at(k)[c];
    return out;
  }
  if (t == grid.node(k + 1)) {
    for (int c = 0; c < d; ++c) out[c] = path.at(k + 1)[c];
    return out;
  }
  const double frac = (t - grid.node(k)) / grid.dt();
  for (int c = 0; c < d; ++c)
    out[c] = path.at(k)[c] + frac * (path.at(k + 1)[c] - path.at(k)[c]);
  return out;
}

/// Shifted node values W_{t_k} + (1/eps)(T/p) sum_{s<k} h_{t_s} for h held
/// piecewise constant on the mesh.
inline DrivingPath shift_path(const DrivingPath& path,
                              std::span<const double> h_row,
                              double eps, const TimeGrid& grid) {
  if (!(eps > 0.0)) throw std::invalid_argument("shift_path: eps must be > 0");
  const int p = path.p;
  const int d = path.d;
  if (h_row.size() != static_cast<std::size_t>(p) * d)
    throw std::invalid_argument("shift_path: intercept row size mismatch");
  DrivingPath out = path;
  std::vector<double> drift(static_cast<std::size_t>(d), 0.0);
  const double scale = grid.dt() / eps;
  for (int k = 1; k <= p; ++k) {
    for (int c = 0; c < d; ++c) {
      drift[c] += scale * h_row[static_cast<std::size_t>(k - 1) * d + c];
      out.at(k)[c] += drift[c];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary cache. Little-endian 64-bit header (magic, version, seed, M, N, p,
// d) followed by raw doubles, idio in (i, j, k, dim) order then common in
// (j, k, dim) order.

inline constexpr std::uint64_t kBankMagic = 0x4d46474c514e4231ull;  // MFGLQNB1
inline constexpr std::uint64_t kBankVersion = 1;

inline void save_noise_bank(const NoiseBank& bank,
                            const std::filesystem::path& file) {
  std::FILE* f = std::fopen(file.string().c_str(), "wb");
  if (!f) throw cache_error("cannot open bank cache for writing: " + file.string());
  const std::uint64_t header[7] = {
      kBankMagic, kBankVersion, bank.seed(),
      static_cast<std::uint64_t>(bank.particles()),
      static_cast<std::uint64_t>(bank.realizations()),
      static_cast<std::uint64_t>(bank.steps()),
      static_cast<std::uint64_t>(bank.dim())};
  bool ok = std::fwrite(header, sizeof header, 1, f) == 1;
  ok = ok && std::fwrite(bank.idio().data(), sizeof(double),
                         bank.idio().size(), f) == bank.idio().size();
  ok = ok && std::fwrite(bank.common().data(), sizeof(double),
                         bank.common().size(), f) == bank.common().size();
  if (std::fclose(f) != 0 || !ok)
    throw cache_error("failed writing bank cache: " + file.string());
}

/// Loads a cached bank; returns false on any mismatch or corruption so the
/// caller can regenerate instead of trusting the entry.
inline bool load_noise_bank(const std::filesystem::path& file,
                            std::uint64_t seed, int M, int N, int p, int d,
                            NoiseBank* out) {
  std::FILE* f = std::fopen(file.string().c_str(), "rb");
  if (!f) return false;
  std::uint64_t header[7];
  if (std::fread(header, sizeof header, 1, f) != 1) {
    std::fclose(f);
    return false;
  }
  const bool match = header[0] == kBankMagic && header[1] == kBankVersion &&
                     header[2] == seed &&
                     header[3] == static_cast<std::uint64_t>(M) &&
                     header[4] == static_cast<std::uint64_t>(N) &&
                     header[5] == static_cast<std::uint64_t>(p) &&
                     header[6] == static_cast<std::uint64_t>(d);
  if (!match) {
    std::fclose(f);
    return false;
  }
  const std::size_t stride = static_cast<std::size_t>(p) * d;
  std::vector<double> idio(static_cast<std::size_t>(M) * N * stride);
  std::vector<double> common(static_cast<std::size_t>(N) * stride);
  bool ok = std::fread(idio.data(), sizeof(double), idio.size(), f) ==
            idio.size();
  ok = ok && std::fread(common.data(), sizeof(double), common.size(), f) ==
                 common.size();
  // Trailing garbage also invalidates the entry.
  ok = ok && std::fgetc(f) == EOF;
  std::fclose(f);
  if (!ok) return false;
  *out = NoiseBank(seed, M, N, p, d, std::move(idio), std::move(common));
  return true;
}

}  // namespace mfglq
