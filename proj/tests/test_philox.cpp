#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include <fibersde/philox.hpp>

using fibersde::NormalStream;
using fibersde::Philox4x32;

namespace {

void expect_block(const Philox4x32::Counter& got, const Philox4x32::Counter& want) {
  for (int i = 0; i < 4; ++i) EXPECT_EQ(got[i], want[i]) << "word " << i;
}

}  // namespace

// Known-answer vectors from the Random123 distribution (philox4x32_10).
TEST(Philox, KnownAnswerZero) {
  expect_block(Philox4x32::generate({0, 0, 0, 0}, {0, 0}), {0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
}

TEST(Philox, KnownAnswerAllOnes) {
  expect_block(Philox4x32::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
               {0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
}

TEST(Philox, KnownAnswerPi) {
  expect_block(Philox4x32::generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
               {0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST(Philox, UnitIntervalEndpoints) {
  EXPECT_GT(fibersde::unit_open_closed(0, 0), 0.0);
  EXPECT_EQ(fibersde::unit_open_closed(0xffffffffu, 0xffffffffu), 1.0);
}

TEST(NormalStream, Deterministic) {
  std::vector<double> a(33), b(33);
  NormalStream(7, 3, 11).fill(a.data(), a.size());
  NormalStream(7, 3, 11).fill(b.data(), b.size());
  EXPECT_EQ(a, b);
  NormalStream(7, 4, 11).fill(b.data(), b.size());
  EXPECT_NE(a, b);
  NormalStream(8, 3, 11).fill(b.data(), b.size());
  EXPECT_NE(a, b);
}

TEST(NormalStream, PrefixStable) {
  // Asking for more variates must not change the first ones.
  std::vector<double> a(5), b(12);
  NormalStream(1, 0, 0).fill(a.data(), a.size());
  NormalStream(1, 0, 0).fill(b.data(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(NormalStream, Moments) {
  const std::size_t n = 200000;
  double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
  std::vector<double> z(16);
  for (std::size_t step = 0; step < n / z.size(); ++step) {
    NormalStream(42, 0, step).fill(z.data(), z.size());
    for (double x : z) {
      s1 += x;
      s2 += x * x;
      s3 += x * x * x;
      s4 += x * x * x * x;
    }
  }
  const double m = static_cast<double>(n);
  // Standard errors of the sample moments are sqrt(Var/n) with Var = 1, 2, 15, 96.
  EXPECT_LE(std::abs(s1 / m), 4.0 * std::sqrt(1.0 / m));
  EXPECT_LE(std::abs(s2 / m - 1.0), 4.0 * std::sqrt(2.0 / m));
  EXPECT_LE(std::abs(s3 / m), 4.0 * std::sqrt(15.0 / m));
  EXPECT_LE(std::abs(s4 / m - 3.0), 4.0 * std::sqrt(96.0 / m));
}
