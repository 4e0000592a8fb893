#pragma once

// Integer forward/backward operators plus the FP32 reference implementations.
// All integer kernels compute exact INT32 accumulations; the reduction-length
// preconditions guarantee no intermediate can leave the INT32 range
// (127 * 127 * 2^16 < 2^31).

#include <cstdint>
#include <span>

#include "mpt/tensor.hpp"

namespace mpt {

struct ConvParams {
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
};

struct PoolParams {
  int window_h = 2;
  int window_w = 2;
  int stride_h = 2;
  int stride_w = 2;
};

// Largest admissible reduction length for INT32 accumulation.
inline constexpr int64_t kMaxReduction = int64_t{1} << 16;

struct MaskTensor {
  std::vector<uint8_t> data;
  Shape shape;
};

// Flat indices into the pooled input, one per output element.
struct ArgmaxTensor {
  std::vector<int64_t> data;
  Shape shape;
};

// --- integer kernels -------------------------------------------------------

// a: [M x K] (higher-rank inputs are flattened to [dim0, rest]), b: [K x N].
// Output exponent is the sum of the operand exponents.
AccumTensor int8_matmul(const QuantTensor& a, const QuantTensor& b);

// x: [N,C,H,W], w: [O,C,KH,KW]: exact integer cross-correlation.
AccumTensor int8_conv2d(const QuantTensor& x, const QuantTensor& w, const ConvParams& p);

// Transposed convolution computing dL/dx from the next layer's error and the
// forward weights (full correlation with the 180-degree rotated kernel).
// input_h/input_w pin the original spatial size; 0 derives the minimal one.
AccumTensor int8_deconv(const QuantTensor& e_next, const QuantTensor& w, const ConvParams& p,
                        int input_h = 0, int input_w = 0);

// dL/dw for the conv that mapped x to an output matching e_next's shape.
// kh/kw pin the kernel size (0 derives the largest consistent one; exact only
// when the stride divides the padded extent evenly).
AccumTensor int8_conv_backprop_filter(const QuantTensor& x, const QuantTensor& e_next,
                                      const ConvParams& p, int kh = 0, int kw = 0);

struct MaxPoolResult {
  QuantTensor output;
  ArgmaxTensor argmax;
};

// Max per window, exponent passthrough. Ties pick the first element in
// row-major scan order.
MaxPoolResult int8_maxpool_fwd(const QuantTensor& x, const PoolParams& p);

// Routes each error element to its recorded argmax position, zero elsewhere.
QuantTensor int8_maxpool_bwd(const QuantTensor& e, const ArgmaxTensor& argmax,
                             const Shape& input_shape);

struct ReluResult {
  QuantTensor output;
  MaskTensor mask;
};

ReluResult relu_fwd(const QuantTensor& q);
QuantTensor relu_bwd(const QuantTensor& e, const MaskTensor& mask);

struct LossResult {
  float loss = 0.0f;                 // mean cross-entropy over the batch
  QuantTensor error;                 // quantize(softmax - onehot)
};

// logits: [N, classes]; labels must lie in [0, classes).
LossResult softmax_xent_loss(const QuantTensor& logits, std::span<const int> labels);

// w'_i = sat(w_i - round_half_away(g_i * 2^(g.exp - w.exp - lr_shift))),
// exponent of w unchanged.
QuantTensor weight_update_int8(const QuantTensor& w, const QuantTensor& g, int lr_shift);

struct Fp32UpdateResult {
  FloatTensor master;
  QuantTensor weights;
};

// master' = master - lr * dequantize(g); weights = quantize(master').
Fp32UpdateResult weight_update_fp32(const FloatTensor& master, const QuantTensor& g, float lr);

// --- layout ops (DSP-unfriendly scheduling subjects) -----------------------

// [M x N] -> [N x M], exponent passthrough.
QuantTensor transpose2d(const QuantTensor& m);

// [O,C,KH,KW] -> [C,O,KH,KW] with each KHxKW plane rotated 180 degrees;
// the layout a deconv-as-conv pipeline feeds to the convolution kernel.
QuantTensor weight_rotate(const QuantTensor& w);

// Deconv against a pre-rotated weight (the WeightRotate output). Identity:
// int8_deconv(e, w, p) == int8_deconv_rotated(e, weight_rotate(w), p).
AccumTensor int8_deconv_rotated(const QuantTensor& e_next, const QuantTensor& w_rot,
                                const ConvParams& p, int input_h = 0, int input_w = 0);

// Rows [begin, begin+count) along dim 0.
QuantTensor slice_dim0(const QuantTensor& t, int64_t begin, int64_t count);
// Columns [begin, begin+count) of a rank-2 tensor.
QuantTensor slice_dim1(const QuantTensor& t, int64_t begin, int64_t count);

// --- FP32 reference implementations ----------------------------------------

FloatTensor fp32_matmul(const FloatTensor& a, const FloatTensor& b);
FloatTensor fp32_conv2d(const FloatTensor& x, const FloatTensor& w, const ConvParams& p);
FloatTensor fp32_conv_input_grad(const FloatTensor& e_next, const FloatTensor& w,
                                 const ConvParams& p, int input_h, int input_w);
FloatTensor fp32_conv_filter_grad(const FloatTensor& x, const FloatTensor& e_next,
                                  const ConvParams& p, int kh, int kw);

struct Fp32MaxPoolResult {
  FloatTensor output;
  ArgmaxTensor argmax;
};
Fp32MaxPoolResult fp32_maxpool_fwd(const FloatTensor& x, const PoolParams& p);
FloatTensor fp32_maxpool_bwd(const FloatTensor& e, const ArgmaxTensor& argmax,
                             const Shape& input_shape);

struct Fp32ReluResult {
  FloatTensor output;
  MaskTensor mask;
};
Fp32ReluResult fp32_relu_fwd(const FloatTensor& x);
FloatTensor fp32_relu_bwd(const FloatTensor& e, const MaskTensor& mask);

struct Fp32LossResult {
  float loss = 0.0f;
  FloatTensor grad;                  // softmax - onehot
};
Fp32LossResult fp32_softmax_xent(const FloatTensor& logits, std::span<const int> labels);

// Output spatial size of a convolution: floor((in + 2*pad - k) / stride) + 1.
int64_t conv_out_dim(int64_t in, int k, int pad, int stride);

} // namespace mpt
