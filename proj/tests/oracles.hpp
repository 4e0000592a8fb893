#pragma once

// Independent reference implementations used by the test suites. These stay
// deliberately naive (plain arithmetic, brute force, exhaustive search) and
// must not call into the code paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mpt/tensor.hpp"

namespace oracle {

// Smallest integer e in [-64, 64] with max|x| / 2^e <= 127, by linear scan.
inline int quantize_exponent(float max_abs) {
  if (max_abs == 0.0f) return 0;
  for (int e = -64; e <= 64; ++e) {
    if (static_cast<double>(max_abs) / std::exp2(static_cast<double>(e)) <= 127.0) return e;
  }
  return 65; // unrepresentable
}

// Smallest s >= 0 with (max_mag >> s) <= 127, by linear scan.
inline int scale_shift(uint64_t max_mag) {
  int s = 0;
  while ((max_mag >> s) > 127) ++s;
  return s;
}

// Plain-arithmetic downscale: divide, round half away from zero, clamp.
inline int8_t downscale_elem(int32_t v, int s) {
  const double q = std::round(static_cast<double>(v) / std::exp2(static_cast<double>(s)));
  const double c = std::clamp(q, -127.0, 127.0);
  return static_cast<int8_t>(c);
}

inline mpt::AccumTensor random_accum(std::mt19937& rng, int64_t n, int32_t max_mag, int exponent = 0) {
  std::uniform_int_distribution<int32_t> dist(-max_mag, max_mag);
  mpt::AccumTensor t({n}, exponent);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

inline mpt::QuantTensor random_quant(std::mt19937& rng, mpt::Shape shape, int exponent) {
  std::uniform_int_distribution<int> dist(-127, 127);
  mpt::QuantTensor t(std::move(shape), exponent);
  for (auto& v : t.data) v = static_cast<int8_t>(dist(rng));
  return t;
}

inline mpt::FloatTensor random_float(std::mt19937& rng, mpt::Shape shape, float lo, float hi) {
  std::uniform_real_distribution<float> dist(lo, hi);
  mpt::FloatTensor t(std::move(shape));
  for (auto& v : t.data) v = dist(rng);
  return t;
}

} // namespace oracle
