#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace mpt {

// Dimension sizes, outermost first. 4-D tensors are laid out N,C,H,W.
using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Symmetric INT8 range produced by quantization and downscaling.
inline constexpr int kInt8SatMax = 127;
// Scale exponents outside this range cannot be applied exactly in FP32.
inline constexpr int kExponentMin = -64;
inline constexpr int kExponentMax = 64;

// INT8 payload with a shared power-of-two scale: value_i = data[i] * 2^exponent.
struct QuantTensor {
  std::vector<int8_t> data;
  Shape shape;
  int exponent = 0;

  QuantTensor() = default;
  QuantTensor(Shape s, int exp);
  QuantTensor(std::vector<int8_t> d, Shape s, int exp);

  int64_t size() const { return static_cast<int64_t>(data.size()); }
};

// INT32 intermediate holding pre-rescale products; exponent is the sum of the
// operand exponents. INT32_MIN is forbidden so |value| is always representable.
struct AccumTensor {
  std::vector<int32_t> data;
  Shape shape;
  int exponent = 0;

  AccumTensor() = default;
  AccumTensor(Shape s, int exp);
  AccumTensor(std::vector<int32_t> d, Shape s, int exp);

  int64_t size() const { return static_cast<int64_t>(data.size()); }
};

// FP32 tensor for the reference path and the FLOAT weight-update branch.
struct FloatTensor {
  std::vector<float> data;
  Shape shape;

  FloatTensor() = default;
  explicit FloatTensor(Shape s, float fill = 0.0f);
  FloatTensor(std::vector<float> d, Shape s);

  int64_t size() const { return static_cast<int64_t>(data.size()); }
};

bool operator==(const QuantTensor& a, const QuantTensor& b);
bool operator==(const AccumTensor& a, const AccumTensor& b);
bool operator==(const FloatTensor& a, const FloatTensor& b);

// Throws InternalError if e is outside [kExponentMin, kExponentMax].
int checked_exponent(int64_t e);

// round-half-away-from-zero(v / 2^shift) for shift >= 0.
int64_t round_shift(int64_t v, int shift);

// Clamp to the symmetric INT8 range [-127, 127].
int8_t saturate_int8(int64_t v);

// Smallest shift s >= 0 such that (max_magnitude >> s) <= 127.
int scale_shift_for_magnitude(uint64_t max_magnitude);

// Picks the smallest exponent e with max|x| / 2^e <= 127 (e = 0 for all-zero
// input, floored at kExponentMin for denormal-range values), then rounds each
// element half away from zero and saturates to [-127, 127].
// Throws std::invalid_argument for empty or non-finite input.
QuantTensor quantize(const FloatTensor& x);

// Exact inverse map: out_i = q_i * 2^exponent.
FloatTensor dequantize(const QuantTensor& q);

// The leading-zero-count rule: max(0, 32 - clz(max|t_i|) - 7), clz(0) = 32.
int compute_scale_exponent(const AccumTensor& t);

// q_i = saturate(round-half-away-from-zero(t_i / 2^shift)); exponent grows by
// shift. Requires shift >= 0.
QuantTensor downscale(const AccumTensor& t, int shift);

// --- checkpoint serialization -------------------------------------------
// Little-endian header: rank u32, dims u32 each, exponent i32, dtype u8
// (0 = i8, 1 = i32, 2 = f32), then raw element bytes.

enum class DType : uint8_t { Int8 = 0, Int32 = 1, Float32 = 2 };

void write_tensor(std::ostream& os, const QuantTensor& t);
void write_tensor(std::ostream& os, const AccumTensor& t);
void write_tensor(std::ostream& os, const FloatTensor& t);

QuantTensor read_quant_tensor(std::istream& is);
AccumTensor read_accum_tensor(std::istream& is);
FloatTensor read_float_tensor(std::istream& is);

} // namespace mpt
