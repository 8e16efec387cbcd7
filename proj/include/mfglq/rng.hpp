#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace mfglq {

// Philox 4x32-10 counter-based generator (Salmon et al., SC 2011).
// A (counter, key) pair maps to four independent 32-bit words, so draws can
// be indexed directly by (stream, step, slot) and filled in any order or at
// any degree of parallelism with identical results.
struct Philox4x32 {
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                            std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
             static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
             static_cast<std::uint32_t>(p0)};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }
};

namespace detail {
inline constexpr double kTwoPi = 6.283185307179586476925287;
}

// Two standard-normal draws from one Philox block via Box-Muller.
inline void philox_normal_pair(std::uint64_t seed, std::uint32_t c0,
                               std::uint32_t c1, std::uint32_t c2,
                               std::uint32_t c3, double& z0, double& z1) {
  const auto r = Philox4x32::block(
      {c0, c1, c2, c3},
      {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
  const std::uint64_t a = (static_cast<std::uint64_t>(r[0]) << 32) | r[1];
  const std::uint64_t b = (static_cast<std::uint64_t>(r[2]) << 32) | r[3];
  const double u = (static_cast<double>(a >> 11) + 1.0) * 0x1p-53;  // (0, 1]
  const double v = static_cast<double>(b >> 11) * 0x1p-53;          // [0, 1)
  const double rad = std::sqrt(-2.0 * std::log(u));
  z0 = rad * std::cos(detail::kTwoPi * v);
  z1 = rad * std::sin(detail::kTwoPi * v);
}

}  // namespace mfglq
