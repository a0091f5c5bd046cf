// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace fibersde {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static constexpr Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }

  static constexpr Key key_from(std::uint64_t seed) {
    return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  }
};

// Uniform in (0, 1] from the top 53 bits of a 64-bit word.
inline double unit_open_closed(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t x = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return (static_cast<double>(x >> 11) + 1.0) * 0x1.0p-53;
}

// Standard normals addressed by (seed, path, step, index). Index i lives in
// counter block i / 2, slot i % 2; one Philox call feeds one Box-Muller pair.
class NormalStream {
public:
  NormalStream(std::uint64_t seed, std::uint64_t path, std::uint64_t step)
      : key_(Philox4x32::key_from(seed)), path_(path), step_(static_cast<std::uint32_t>(step)) {}

  std::array<double, 2> pair(std::uint32_t block) const {
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(path_), static_cast<std::uint32_t>(path_ >> 32), step_, block};
    const auto r = Philox4x32::generate(ctr, key_);
    const double u1 = unit_open_closed(r[0], r[1]);
    const double u2 = unit_open_closed(r[2], r[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

  template <class Out>
  void fill(Out* out, std::size_t count) const {
    for (std::size_t i = 0; i < count; i += 2) {
      const auto z = pair(static_cast<std::uint32_t>(i / 2));
      out[i] = z[0];
      if (i + 1 < count) out[i + 1] = z[1];
    }
  }

private:
  Philox4x32::Key key_;
  std::uint64_t path_;
  std::uint32_t step_;
};

}  // namespace fibersde
