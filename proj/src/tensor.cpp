#include "mpt/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mpt/errors.hpp"

namespace mpt {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("shape dimensions must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

QuantTensor::QuantTensor(Shape s, int exp) : shape(std::move(s)), exponent(exp) {
  data.assign(static_cast<size_t>(numel(shape)), 0);
}

AccumTensor::AccumTensor(Shape s, int exp) : shape(std::move(s)), exponent(exp) {
  data.assign(static_cast<size_t>(numel(shape)), 0);
}

FloatTensor::FloatTensor(Shape s, float fill) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(numel(shape)), fill);
}

namespace {
void check_length(size_t have, const Shape& shape) {
  if (static_cast<int64_t>(have) != numel(shape)) {
    throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape));
  }
}
} // namespace

QuantTensor::QuantTensor(std::vector<int8_t> d, Shape s, int exp)
    : data(std::move(d)), shape(std::move(s)), exponent(exp) {
  check_length(data.size(), shape);
}

AccumTensor::AccumTensor(std::vector<int32_t> d, Shape s, int exp)
    : data(std::move(d)), shape(std::move(s)), exponent(exp) {
  check_length(data.size(), shape);
}

FloatTensor::FloatTensor(std::vector<float> d, Shape s) : data(std::move(d)), shape(std::move(s)) {
  check_length(data.size(), shape);
}

bool operator==(const QuantTensor& a, const QuantTensor& b) {
  return a.exponent == b.exponent && a.shape == b.shape && a.data == b.data;
}

bool operator==(const AccumTensor& a, const AccumTensor& b) {
  return a.exponent == b.exponent && a.shape == b.shape && a.data == b.data;
}

bool operator==(const FloatTensor& a, const FloatTensor& b) {
  return a.shape == b.shape && a.data == b.data;
}

int checked_exponent(int64_t e) {
  if (e < kExponentMin || e > kExponentMax) {
    throw InternalError("scale exponent " + std::to_string(e) + " outside [" +
                        std::to_string(kExponentMin) + ", " + std::to_string(kExponentMax) + "]");
  }
  return static_cast<int>(e);
}

int64_t round_shift(int64_t v, int shift) {
  if (shift < 0 || shift > 62) throw std::invalid_argument("round_shift: shift out of range");
  if (shift == 0) return v;
  const int64_t mag = v < 0 ? -v : v;
  const int64_t shifted = (mag + (int64_t{1} << (shift - 1))) >> shift;
  return v < 0 ? -shifted : shifted;
}

int8_t saturate_int8(int64_t v) {
  if (v > kInt8SatMax) return static_cast<int8_t>(kInt8SatMax);
  if (v < -kInt8SatMax) return static_cast<int8_t>(-kInt8SatMax);
  return static_cast<int8_t>(v);
}

int scale_shift_for_magnitude(uint64_t max_magnitude) {
  int s = 0;
  while ((max_magnitude >> s) > static_cast<uint64_t>(kInt8SatMax)) ++s;
  return s;
}

QuantTensor quantize(const FloatTensor& x) {
  if (x.data.empty()) throw std::invalid_argument("quantize: empty tensor");

  float max_abs = 0.0f;
  for (float v : x.data) {
    if (!std::isfinite(v)) throw std::invalid_argument("quantize: non-finite element");
    max_abs = std::max(max_abs, std::fabs(v));
  }

  int e = 0;
  if (max_abs > 0.0f) {
    // 2^(ilogb-6) puts the max quotient in [64, 128); bump once if it lands
    // above 127. Smaller exponents would double it past the INT8 range.
    e = std::ilogb(max_abs) - 6;
    if (static_cast<double>(max_abs) / std::exp2(static_cast<double>(e)) > 127.0) ++e;
    // Values below INT8 resolution at the exponent floor simply round to zero.
    e = std::max(e, kExponentMin);
    checked_exponent(e);
  }

  QuantTensor out;
  out.shape = x.shape;
  out.exponent = e;
  out.data.resize(x.data.size());
  const double scale = std::exp2(static_cast<double>(e));
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double q = std::round(static_cast<double>(x.data[i]) / scale);
    out.data[i] = saturate_int8(static_cast<int64_t>(q));
  }
  return out;
}

FloatTensor dequantize(const QuantTensor& q) {
  FloatTensor out;
  out.shape = q.shape;
  out.data.resize(q.data.size());
  for (size_t i = 0; i < q.data.size(); ++i) {
    out.data[i] = std::ldexp(static_cast<float>(q.data[i]), q.exponent);
  }
  return out;
}

int compute_scale_exponent(const AccumTensor& t) {
  uint32_t max_mag = 0;
  for (int32_t v : t.data) {
    if (v == std::numeric_limits<int32_t>::min()) {
      throw InternalError("AccumTensor holds INT32_MIN");
    }
    const uint32_t mag = static_cast<uint32_t>(v < 0 ? -v : v);
    max_mag = std::max(max_mag, mag);
  }
  if (max_mag == 0) return 0;
  const int clz = std::countl_zero(max_mag);
  return std::max(0, 32 - clz - 7);
}

QuantTensor downscale(const AccumTensor& t, int shift) {
  if (shift < 0) throw std::invalid_argument("downscale: negative shift");
  QuantTensor out;
  out.shape = t.shape;
  out.exponent = checked_exponent(static_cast<int64_t>(t.exponent) + shift);
  out.data.resize(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) {
    out.data[i] = saturate_int8(round_shift(t.data[i], shift));
  }
  return out;
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_i32(std::ostream& os, int32_t v) { put_u32(os, static_cast<uint32_t>(v)); }

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("tensor header truncated");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

int32_t get_i32(std::istream& is) { return static_cast<int32_t>(get_u32(is)); }

void write_header(std::ostream& os, const Shape& shape, int exponent, DType tag) {
  put_u32(os, static_cast<uint32_t>(shape.size()));
  for (int64_t d : shape) {
    if (d <= 0 || d > std::numeric_limits<uint32_t>::max()) {
      throw FormatError("tensor dimension does not fit header field");
    }
    put_u32(os, static_cast<uint32_t>(d));
  }
  put_i32(os, exponent);
  os.put(static_cast<char>(tag));
}

struct Header {
  Shape shape;
  int exponent;
  DType tag;
};

Header read_header(std::istream& is) {
  Header h;
  const uint32_t rank = get_u32(is);
  if (rank > 8) throw FormatError("tensor rank out of range");
  h.shape.resize(rank);
  for (uint32_t i = 0; i < rank; ++i) {
    const uint32_t d = get_u32(is);
    if (d == 0) throw FormatError("zero tensor dimension");
    h.shape[i] = d;
  }
  h.exponent = get_i32(is);
  const int tag = is.get();
  if (tag < 0 || tag > 2) throw FormatError("unknown tensor dtype tag");
  h.tag = static_cast<DType>(tag);
  return h;
}

template <typename T>
void write_elements(std::ostream& os, const std::vector<T>& data) {
  for (T v : data) {
    typename std::make_unsigned<T>::type u;
    std::memcpy(&u, &v, sizeof(T));
    for (size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((u >> (8 * i)) & 0xff));
  }
}

void write_elements(std::ostream& os, const std::vector<float>& data) {
  for (float v : data) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    for (size_t i = 0; i < 4; ++i) os.put(static_cast<char>((u >> (8 * i)) & 0xff));
  }
}

template <typename T>
void read_elements(std::istream& is, std::vector<T>& data, int64_t count) {
  data.resize(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    typename std::make_unsigned<T>::type u = 0;
    for (size_t b = 0; b < sizeof(T); ++b) {
      const int c = is.get();
      if (c < 0) throw FormatError("tensor payload truncated");
      u |= static_cast<decltype(u)>(static_cast<unsigned char>(c)) << (8 * b);
    }
    T v;
    std::memcpy(&v, &u, sizeof(T));
    data[static_cast<size_t>(i)] = v;
  }
}

void read_elements(std::istream& is, std::vector<float>& data, int64_t count) {
  data.resize(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    uint32_t u = 0;
    for (size_t b = 0; b < 4; ++b) {
      const int c = is.get();
      if (c < 0) throw FormatError("tensor payload truncated");
      u |= static_cast<uint32_t>(static_cast<unsigned char>(c)) << (8 * b);
    }
    float v;
    std::memcpy(&v, &u, 4);
    data[static_cast<size_t>(i)] = v;
  }
}

} // namespace

void write_tensor(std::ostream& os, const QuantTensor& t) {
  write_header(os, t.shape, t.exponent, DType::Int8);
  write_elements(os, t.data);
}

void write_tensor(std::ostream& os, const AccumTensor& t) {
  write_header(os, t.shape, t.exponent, DType::Int32);
  write_elements(os, t.data);
}

void write_tensor(std::ostream& os, const FloatTensor& t) {
  write_header(os, t.shape, 0, DType::Float32);
  write_elements(os, t.data);
}

QuantTensor read_quant_tensor(std::istream& is) {
  const Header h = read_header(is);
  if (h.tag != DType::Int8) throw FormatError("expected i8 tensor");
  QuantTensor t;
  t.shape = h.shape;
  t.exponent = h.exponent;
  read_elements(is, t.data, numel(h.shape));
  return t;
}

AccumTensor read_accum_tensor(std::istream& is) {
  const Header h = read_header(is);
  if (h.tag != DType::Int32) throw FormatError("expected i32 tensor");
  AccumTensor t;
  t.shape = h.shape;
  t.exponent = h.exponent;
  read_elements(is, t.data, numel(h.shape));
  return t;
}

FloatTensor read_float_tensor(std::istream& is) {
  const Header h = read_header(is);
  if (h.tag != DType::Float32) throw FormatError("expected f32 tensor");
  FloatTensor t;
  t.shape = h.shape;
  read_elements(is, t.data, numel(h.shape));
  return t;
}

} // namespace mpt
