#include "mpt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "mpt/errors.hpp"

namespace mpt {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_reduction(int64_t k, const char* op) {
  if (k > kMaxReduction) {
    throw std::invalid_argument(std::string(op) + ": reduction length " + std::to_string(k) +
                                " exceeds the INT32 overflow-safety bound");
  }
}

int64_t idx4(int64_t n, int64_t c, int64_t h, int64_t w, int64_t C, int64_t H, int64_t W) {
  return ((n * C + c) * H + h) * W + w;
}

struct MatView {
  int64_t rows;
  int64_t cols;
};

// Rank >= 2 tensors flatten to [dim0, rest] for the matmul kernels.
MatView mat_view(const Shape& s, const char* what) {
  require(s.size() >= 2, std::string(what) + ": expected rank >= 2");
  int64_t cols = 1;
  for (size_t i = 1; i < s.size(); ++i) cols *= s[i];
  return {s[0], cols};
}

} // namespace

int64_t conv_out_dim(int64_t in, int k, int pad, int stride) {
  return (in + 2 * pad - k) / stride + 1;
}

AccumTensor int8_matmul(const QuantTensor& a, const QuantTensor& b) {
  const MatView av = mat_view(a.shape, "int8_matmul lhs");
  require(b.shape.size() == 2, "int8_matmul rhs: expected rank 2");
  const int64_t m = av.rows, k = av.cols, n = b.shape[1];
  require(k == b.shape[0], "int8_matmul: inner dimensions disagree (" + shape_str(a.shape) +
                               " vs " + shape_str(b.shape) + ")");
  check_reduction(k, "int8_matmul");

  AccumTensor out({m, n}, checked_exponent(int64_t{a.exponent} + b.exponent));
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      int32_t acc = 0;
      const int8_t* arow = a.data.data() + i * k;
      for (int64_t t = 0; t < k; ++t) {
        acc += static_cast<int32_t>(arow[t]) * static_cast<int32_t>(b.data[t * n + j]);
      }
      out.data[i * n + j] = acc;
    }
  }
  return out;
}

AccumTensor int8_conv2d(const QuantTensor& x, const QuantTensor& w, const ConvParams& p) {
  require(x.shape.size() == 4 && w.shape.size() == 4, "int8_conv2d: expected 4-D tensors");
  const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int64_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3];
  require(w.shape[1] == C, "int8_conv2d: channel mismatch");
  require(p.stride_h >= 1 && p.stride_w >= 1, "int8_conv2d: stride must be >= 1");
  require(p.pad_h >= 0 && p.pad_w >= 0, "int8_conv2d: negative padding");
  check_reduction(C * KH * KW, "int8_conv2d");

  const int64_t HO = conv_out_dim(H, static_cast<int>(KH), p.pad_h, p.stride_h);
  const int64_t WO = conv_out_dim(W, static_cast<int>(KW), p.pad_w, p.stride_w);
  require(HO >= 1 && WO >= 1, "int8_conv2d: empty output");

  AccumTensor out({N, O, HO, WO}, checked_exponent(int64_t{x.exponent} + w.exponent));
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t o = 0; o < O; ++o) {
      for (int64_t ho = 0; ho < HO; ++ho) {
        for (int64_t wo = 0; wo < WO; ++wo) {
          int32_t acc = 0;
          for (int64_t c = 0; c < C; ++c) {
            for (int64_t kh = 0; kh < KH; ++kh) {
              const int64_t h = ho * p.stride_h - p.pad_h + kh;
              if (h < 0 || h >= H) continue;
              for (int64_t kw = 0; kw < KW; ++kw) {
                const int64_t ww = wo * p.stride_w - p.pad_w + kw;
                if (ww < 0 || ww >= W) continue;
                acc += static_cast<int32_t>(x.data[idx4(n, c, h, ww, C, H, W)]) *
                       static_cast<int32_t>(w.data[idx4(o, c, kh, kw, C, KH, KW)]);
              }
            }
          }
          out.data[idx4(n, o, ho, wo, O, HO, WO)] = acc;
        }
      }
    }
  }
  return out;
}

namespace {

// Shared scatter for the transposed convolution. `rotated` selects whether the
// weight tensor is the forward layout [O,C,KH,KW] or the WeightRotate output
// [C,O,KH,KW] with flipped kernel planes.
AccumTensor deconv_impl(const QuantTensor& e, const QuantTensor& w, const ConvParams& p,
                        int input_h, int input_w, bool rotated) {
  require(e.shape.size() == 4 && w.shape.size() == 4, "int8_deconv: expected 4-D tensors");
  const int64_t N = e.shape[0], O = e.shape[1], HE = e.shape[2], WE = e.shape[3];
  const int64_t C = rotated ? w.shape[0] : w.shape[1];
  const int64_t WO = rotated ? w.shape[1] : w.shape[0];
  const int64_t KH = w.shape[2], KW = w.shape[3];
  require(WO == O, "int8_deconv: error channels do not match weight output channels");
  check_reduction(O * KH * KW, "int8_deconv");

  const int64_t H = input_h > 0 ? input_h : (HE - 1) * p.stride_h - 2 * p.pad_h + KH;
  const int64_t W = input_w > 0 ? input_w : (WE - 1) * p.stride_w - 2 * p.pad_w + KW;
  require(H >= 1 && W >= 1, "int8_deconv: derived input size is empty");

  AccumTensor out({N, C, H, W}, checked_exponent(int64_t{e.exponent} + w.exponent));
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t o = 0; o < O; ++o) {
      for (int64_t he = 0; he < HE; ++he) {
        for (int64_t we = 0; we < WE; ++we) {
          const int32_t ev = e.data[idx4(n, o, he, we, O, HE, WE)];
          if (ev == 0) continue;
          for (int64_t c = 0; c < C; ++c) {
            for (int64_t kh = 0; kh < KH; ++kh) {
              const int64_t h = he * p.stride_h - p.pad_h + kh;
              if (h < 0 || h >= H) continue;
              for (int64_t kw = 0; kw < KW; ++kw) {
                const int64_t ww = we * p.stride_w - p.pad_w + kw;
                if (ww < 0 || ww >= W) continue;
                const int64_t widx = rotated
                                         ? idx4(c, o, KH - 1 - kh, KW - 1 - kw, O, KH, KW)
                                         : idx4(o, c, kh, kw, C, KH, KW);
                out.data[idx4(n, c, h, ww, C, H, W)] += ev * static_cast<int32_t>(w.data[widx]);
              }
            }
          }
        }
      }
    }
  }
  return out;
}

} // namespace

AccumTensor int8_deconv(const QuantTensor& e_next, const QuantTensor& w, const ConvParams& p,
                        int input_h, int input_w) {
  return deconv_impl(e_next, w, p, input_h, input_w, /*rotated=*/false);
}

AccumTensor int8_deconv_rotated(const QuantTensor& e_next, const QuantTensor& w_rot,
                                const ConvParams& p, int input_h, int input_w) {
  return deconv_impl(e_next, w_rot, p, input_h, input_w, /*rotated=*/true);
}

AccumTensor int8_conv_backprop_filter(const QuantTensor& x, const QuantTensor& e_next,
                                      const ConvParams& p, int kh_arg, int kw_arg) {
  require(x.shape.size() == 4 && e_next.shape.size() == 4,
          "int8_conv_backprop_filter: expected 4-D tensors");
  const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int64_t NE = e_next.shape[0], O = e_next.shape[1], HE = e_next.shape[2],
                WE = e_next.shape[3];
  require(N == NE, "int8_conv_backprop_filter: batch mismatch");
  const int64_t KH = kh_arg > 0 ? kh_arg : H + 2 * p.pad_h - (HE - 1) * p.stride_h;
  const int64_t KW = kw_arg > 0 ? kw_arg : W + 2 * p.pad_w - (WE - 1) * p.stride_w;
  require(KH >= 1 && KW >= 1, "int8_conv_backprop_filter: shapes do not describe a conv");
  check_reduction(N * HE * WE, "int8_conv_backprop_filter");

  AccumTensor out({O, C, KH, KW}, checked_exponent(int64_t{x.exponent} + e_next.exponent));
  for (int64_t o = 0; o < O; ++o) {
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t kh = 0; kh < KH; ++kh) {
        for (int64_t kw = 0; kw < KW; ++kw) {
          int32_t acc = 0;
          for (int64_t n = 0; n < N; ++n) {
            for (int64_t he = 0; he < HE; ++he) {
              const int64_t h = he * p.stride_h - p.pad_h + kh;
              if (h < 0 || h >= H) continue;
              for (int64_t we = 0; we < WE; ++we) {
                const int64_t ww = we * p.stride_w - p.pad_w + kw;
                if (ww < 0 || ww >= W) continue;
                acc += static_cast<int32_t>(x.data[idx4(n, c, h, ww, C, H, W)]) *
                       static_cast<int32_t>(e_next.data[idx4(n, o, he, we, O, HE, WE)]);
              }
            }
          }
          out.data[idx4(o, c, kh, kw, C, KH, KW)] = acc;
        }
      }
    }
  }
  return out;
}

MaxPoolResult int8_maxpool_fwd(const QuantTensor& x, const PoolParams& p) {
  require(x.shape.size() == 4, "int8_maxpool: expected 4-D tensor");
  const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  require(p.window_h >= 1 && p.window_w >= 1 && p.stride_h >= 1 && p.stride_w >= 1,
          "int8_maxpool: bad window/stride");
  require(p.window_h <= H && p.window_w <= W, "int8_maxpool: window larger than input");

  const int64_t HO = (H - p.window_h) / p.stride_h + 1;
  const int64_t WO = (W - p.window_w) / p.stride_w + 1;

  MaxPoolResult r;
  r.output = QuantTensor({N, C, HO, WO}, x.exponent);
  r.argmax.shape = r.output.shape;
  r.argmax.data.resize(r.output.data.size());

  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t ho = 0; ho < HO; ++ho) {
        for (int64_t wo = 0; wo < WO; ++wo) {
          int best = std::numeric_limits<int>::min();
          int64_t best_idx = -1;
          for (int kh = 0; kh < p.window_h; ++kh) {
            for (int kw = 0; kw < p.window_w; ++kw) {
              const int64_t h = ho * p.stride_h + kh;
              const int64_t w = wo * p.stride_w + kw;
              const int64_t idx = idx4(n, c, h, w, C, H, W);
              const int v = x.data[idx];
              if (v > best) { // strict: ties keep the first-scanned index
                best = v;
                best_idx = idx;
              }
            }
          }
          const int64_t oidx = idx4(n, c, ho, wo, C, HO, WO);
          r.output.data[oidx] = static_cast<int8_t>(best);
          r.argmax.data[oidx] = best_idx;
        }
      }
    }
  }
  return r;
}

QuantTensor int8_maxpool_bwd(const QuantTensor& e, const ArgmaxTensor& argmax,
                             const Shape& input_shape) {
  require(e.shape == argmax.shape, "int8_maxpool_bwd: error/argmax shape mismatch");
  std::vector<int32_t> acc(static_cast<size_t>(numel(input_shape)), 0);
  for (size_t i = 0; i < e.data.size(); ++i) {
    acc[static_cast<size_t>(argmax.data[i])] += e.data[i];
  }
  QuantTensor out(input_shape, e.exponent);
  for (size_t i = 0; i < acc.size(); ++i) out.data[i] = saturate_int8(acc[i]);
  return out;
}

ReluResult relu_fwd(const QuantTensor& q) {
  ReluResult r;
  r.output.shape = q.shape;
  r.output.exponent = q.exponent;
  r.output.data.resize(q.data.size());
  r.mask.shape = q.shape;
  r.mask.data.resize(q.data.size());
  for (size_t i = 0; i < q.data.size(); ++i) {
    const bool pass = q.data[i] > 0;
    r.mask.data[i] = pass ? 1 : 0;
    r.output.data[i] = pass ? q.data[i] : 0;
  }
  return r;
}

QuantTensor relu_bwd(const QuantTensor& e, const MaskTensor& mask) {
  require(e.shape == mask.shape, "relu_bwd: shape mismatch");
  QuantTensor out = e;
  for (size_t i = 0; i < out.data.size(); ++i) {
    if (!mask.data[i]) out.data[i] = 0;
  }
  return out;
}

LossResult softmax_xent_loss(const QuantTensor& logits, std::span<const int> labels) {
  const MatView v = mat_view(logits.shape, "softmax_xent_loss");
  const int64_t n = v.rows, classes = v.cols;
  require(static_cast<int64_t>(labels.size()) == n, "softmax_xent_loss: labels/batch mismatch");
  for (int label : labels) {
    require(label >= 0 && label < classes, "softmax_xent_loss: label out of range");
  }

  const FloatTensor logf = dequantize(logits);
  FloatTensor diff({n, classes});
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const float* row = logf.data.data() + i * classes;
    float m = row[0];
    for (int64_t j = 1; j < classes; ++j) m = std::max(m, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < classes; ++j) denom += std::exp(static_cast<double>(row[j]) - m);
    for (int64_t j = 0; j < classes; ++j) {
      const double p = std::exp(static_cast<double>(row[j]) - m) / denom;
      diff.data[i * classes + j] =
          static_cast<float>(p) - (j == labels[static_cast<size_t>(i)] ? 1.0f : 0.0f);
      if (j == labels[static_cast<size_t>(i)]) loss -= std::log(std::max(p, 1e-30));
    }
  }

  LossResult r;
  r.loss = static_cast<float>(loss / static_cast<double>(n));
  r.error = quantize(diff);
  return r;
}

QuantTensor weight_update_int8(const QuantTensor& w, const QuantTensor& g, int lr_shift) {
  require(w.shape == g.shape, "weight_update_int8: shape mismatch");
  const int d = g.exponent - w.exponent - lr_shift;
  QuantTensor out = w;
  for (size_t i = 0; i < w.data.size(); ++i) {
    int64_t delta;
    if (d >= 0) {
      delta = static_cast<int64_t>(g.data[i]) << std::min(d, 40);
    } else {
      delta = round_shift(g.data[i], -d);
    }
    out.data[i] = saturate_int8(static_cast<int64_t>(w.data[i]) - delta);
  }
  return out;
}

Fp32UpdateResult weight_update_fp32(const FloatTensor& master, const QuantTensor& g, float lr) {
  require(master.shape == g.shape, "weight_update_fp32: shape mismatch");
  Fp32UpdateResult r;
  r.master = master;
  const FloatTensor gf = dequantize(g);
  for (size_t i = 0; i < r.master.data.size(); ++i) r.master.data[i] -= lr * gf.data[i];
  r.weights = quantize(r.master);
  return r;
}

QuantTensor transpose2d(const QuantTensor& m) {
  require(m.shape.size() == 2, "transpose2d: expected rank 2");
  const int64_t rows = m.shape[0], cols = m.shape[1];
  QuantTensor out({cols, rows}, m.exponent);
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < cols; ++j) out.data[j * rows + i] = m.data[i * cols + j];
  }
  return out;
}

QuantTensor weight_rotate(const QuantTensor& w) {
  require(w.shape.size() == 4, "weight_rotate: expected 4-D tensor");
  const int64_t O = w.shape[0], C = w.shape[1], KH = w.shape[2], KW = w.shape[3];
  QuantTensor out({C, O, KH, KW}, w.exponent);
  for (int64_t o = 0; o < O; ++o) {
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t kh = 0; kh < KH; ++kh) {
        for (int64_t kw = 0; kw < KW; ++kw) {
          out.data[idx4(c, o, KH - 1 - kh, KW - 1 - kw, O, KH, KW)] =
              w.data[idx4(o, c, kh, kw, C, KH, KW)];
        }
      }
    }
  }
  return out;
}

namespace {

template <typename T>
T slice0(const T& t, int64_t begin, int64_t count) {
  require(!t.shape.empty(), "slice_dim0: scalar input");
  require(begin >= 0 && count >= 1 && begin + count <= t.shape[0], "slice_dim0: range out of bounds");
  int64_t inner = 1;
  for (size_t i = 1; i < t.shape.size(); ++i) inner *= t.shape[i];
  T out = t;
  out.shape[0] = count;
  out.data.assign(t.data.begin() + begin * inner, t.data.begin() + (begin + count) * inner);
  return out;
}

} // namespace

QuantTensor slice_dim0(const QuantTensor& t, int64_t begin, int64_t count) {
  return slice0(t, begin, count);
}

QuantTensor slice_dim1(const QuantTensor& t, int64_t begin, int64_t count) {
  require(t.shape.size() == 2, "slice_dim1: expected rank 2");
  require(begin >= 0 && count >= 1 && begin + count <= t.shape[1], "slice_dim1: range out of bounds");
  QuantTensor out({t.shape[0], count}, t.exponent);
  for (int64_t i = 0; i < t.shape[0]; ++i) {
    for (int64_t j = 0; j < count; ++j) {
      out.data[i * count + j] = t.data[i * t.shape[1] + begin + j];
    }
  }
  return out;
}

// --- FP32 reference path ----------------------------------------------------

FloatTensor fp32_matmul(const FloatTensor& a, const FloatTensor& b) {
  const MatView av = mat_view(a.shape, "fp32_matmul lhs");
  require(b.shape.size() == 2 && b.shape[0] == av.cols, "fp32_matmul: inner dims disagree");
  const int64_t m = av.rows, k = av.cols, n = b.shape[1];
  FloatTensor out({m, n});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (int64_t t = 0; t < k; ++t) acc += a.data[i * k + t] * b.data[t * n + j];
      out.data[i * n + j] = acc;
    }
  }
  return out;
}

FloatTensor fp32_conv2d(const FloatTensor& x, const FloatTensor& w, const ConvParams& p) {
  require(x.shape.size() == 4 && w.shape.size() == 4, "fp32_conv2d: expected 4-D tensors");
  const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int64_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3];
  require(w.shape[1] == C, "fp32_conv2d: channel mismatch");
  const int64_t HO = conv_out_dim(H, static_cast<int>(KH), p.pad_h, p.stride_h);
  const int64_t WO = conv_out_dim(W, static_cast<int>(KW), p.pad_w, p.stride_w);
  FloatTensor out({N, O, HO, WO});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t ho = 0; ho < HO; ++ho)
        for (int64_t wo = 0; wo < WO; ++wo) {
          float acc = 0.0f;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t kh = 0; kh < KH; ++kh) {
              const int64_t h = ho * p.stride_h - p.pad_h + kh;
              if (h < 0 || h >= H) continue;
              for (int64_t kw = 0; kw < KW; ++kw) {
                const int64_t ww = wo * p.stride_w - p.pad_w + kw;
                if (ww < 0 || ww >= W) continue;
                acc += x.data[idx4(n, c, h, ww, C, H, W)] * w.data[idx4(o, c, kh, kw, C, KH, KW)];
              }
            }
          out.data[idx4(n, o, ho, wo, O, HO, WO)] = acc;
        }
  return out;
}

FloatTensor fp32_conv_input_grad(const FloatTensor& e_next, const FloatTensor& w,
                                 const ConvParams& p, int input_h, int input_w) {
  require(e_next.shape.size() == 4 && w.shape.size() == 4,
          "fp32_conv_input_grad: expected 4-D tensors");
  const int64_t N = e_next.shape[0], O = e_next.shape[1], HE = e_next.shape[2],
                WE = e_next.shape[3];
  const int64_t C = w.shape[1], KH = w.shape[2], KW = w.shape[3];
  require(w.shape[0] == O, "fp32_conv_input_grad: channel mismatch");
  const int64_t H = input_h > 0 ? input_h : (HE - 1) * p.stride_h - 2 * p.pad_h + KH;
  const int64_t W = input_w > 0 ? input_w : (WE - 1) * p.stride_w - 2 * p.pad_w + KW;
  FloatTensor out({N, C, H, W});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t he = 0; he < HE; ++he)
        for (int64_t we = 0; we < WE; ++we) {
          const float ev = e_next.data[idx4(n, o, he, we, O, HE, WE)];
          if (ev == 0.0f) continue;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t kh = 0; kh < KH; ++kh) {
              const int64_t h = he * p.stride_h - p.pad_h + kh;
              if (h < 0 || h >= H) continue;
              for (int64_t kw = 0; kw < KW; ++kw) {
                const int64_t ww = we * p.stride_w - p.pad_w + kw;
                if (ww < 0 || ww >= W) continue;
                out.data[idx4(n, c, h, ww, C, H, W)] +=
                    ev * w.data[idx4(o, c, kh, kw, C, KH, KW)];
              }
            }
        }
  return out;
}

FloatTensor fp32_conv_filter_grad(const FloatTensor& x, const FloatTensor& e_next,
                                  const ConvParams& p, int kh_arg, int kw_arg) {
  require(x.shape.size() == 4 && e_next.shape.size() == 4,
          "fp32_conv_filter_grad: expected 4-D tensors");
  const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int64_t O = e_next.shape[1], HE = e_next.shape[2], WE = e_next.shape[3];
  const int64_t KH = kh_arg > 0 ? kh_arg : H + 2 * p.pad_h - (HE - 1) * p.stride_h;
  const int64_t KW = kw_arg > 0 ? kw_arg : W + 2 * p.pad_w - (WE - 1) * p.stride_w;
  FloatTensor out({O, C, KH, KW});
  for (int64_t o = 0; o < O; ++o)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t kh = 0; kh < KH; ++kh)
        for (int64_t kw = 0; kw < KW; ++kw) {
          float acc = 0.0f;
          for (int64_t n = 0; n < N; ++n)
            for (int64_t he = 0; he < HE; ++he) {
              const int64_t h = he * p.stride_h - p.pad_h + kh;
              if (h < 0 || h >= H) continue;
              for (int64_t we = 0; we < WE; ++we) {
                const int64_t ww = we * p.stride_w - p.pad_w + kw;
                if (ww < 0 || ww >= W) continue;
                acc += x.data[idx4(n, c, h, ww, C, H, W)] *
                       e_next.data[idx4(n, o, he, we, O, HE, WE)];
              }
            }
          out.data[idx4(o, c, kh, kw, C, KH, KW)] = acc;
        }
  return out;
}

Fp32MaxPoolResult fp32_maxpool_fwd(const FloatTensor& x, const PoolParams& p) {
  require(x.shape.size() == 4, "fp32_maxpool: expected 4-D tensor");
  const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  require(p.window_h <= H && p.window_w <= W, "fp32_maxpool: window larger than input");
  const int64_t HO = (H - p.window_h) / p.stride_h + 1;
  const int64_t WO = (W - p.window_w) / p.stride_w + 1;
  Fp32MaxPoolResult r;
  r.output = FloatTensor({N, C, HO, WO});
  r.argmax.shape = r.output.shape;
  r.argmax.data.resize(r.output.data.size());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t ho = 0; ho < HO; ++ho)
        for (int64_t wo = 0; wo < WO; ++wo) {
          float best = -std::numeric_limits<float>::infinity();
          int64_t best_idx = -1;
          for (int kh = 0; kh < p.window_h; ++kh)
            for (int kw = 0; kw < p.window_w; ++kw) {
              const int64_t idx =
                  idx4(n, c, ho * p.stride_h + kh, wo * p.stride_w + kw, C, H, W);
              if (x.data[idx] > best) {
                best = x.data[idx];
                best_idx = idx;
              }
            }
          const int64_t oidx = idx4(n, c, ho, wo, C, HO, WO);
          r.output.data[oidx] = best;
          r.argmax.data[oidx] = best_idx;
        }
  return r;
}

FloatTensor fp32_maxpool_bwd(const FloatTensor& e, const ArgmaxTensor& argmax,
                             const Shape& input_shape) {
  require(e.shape == argmax.shape, "fp32_maxpool_bwd: shape mismatch");
  FloatTensor out(input_shape);
  for (size_t i = 0; i < e.data.size(); ++i) {
    out.data[static_cast<size_t>(argmax.data[i])] += e.data[i];
  }
  return out;
}

Fp32ReluResult fp32_relu_fwd(const FloatTensor& x) {
  Fp32ReluResult r;
  r.output.shape = x.shape;
  r.output.data.resize(x.data.size());
  r.mask.shape = x.shape;
  r.mask.data.resize(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i) {
    const bool pass = x.data[i] > 0.0f;
    r.mask.data[i] = pass ? 1 : 0;
    r.output.data[i] = pass ? x.data[i] : 0.0f;
  }
  return r;
}

FloatTensor fp32_relu_bwd(const FloatTensor& e, const MaskTensor& mask) {
  require(e.shape == mask.shape, "fp32_relu_bwd: shape mismatch");
  FloatTensor out = e;
  for (size_t i = 0; i < out.data.size(); ++i) {
    if (!mask.data[i]) out.data[i] = 0.0f;
  }
  return out;
}

Fp32LossResult fp32_softmax_xent(const FloatTensor& logits, std::span<const int> labels) {
  const MatView v = mat_view(logits.shape, "fp32_softmax_xent");
  const int64_t n = v.rows, classes = v.cols;
  require(static_cast<int64_t>(labels.size()) == n, "fp32_softmax_xent: labels/batch mismatch");
  Fp32LossResult r;
  r.grad = FloatTensor({n, classes});
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    require(labels[static_cast<size_t>(i)] >= 0 && labels[static_cast<size_t>(i)] < classes,
            "fp32_softmax_xent: label out of range");
    const float* row = logits.data.data() + i * classes;
    float m = row[0];
    for (int64_t j = 1; j < classes; ++j) m = std::max(m, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < classes; ++j) denom += std::exp(static_cast<double>(row[j]) - m);
    for (int64_t j = 0; j < classes; ++j) {
      const double p = std::exp(static_cast<double>(row[j]) - m) / denom;
      r.grad.data[i * classes + j] =
          static_cast<float>(p) - (j == labels[static_cast<size_t>(i)] ? 1.0f : 0.0f);
      if (j == labels[static_cast<size_t>(i)]) loss -= std::log(std::max(p, 1e-30));
    }
  }
  r.loss = static_cast<float>(loss / static_cast<double>(n));
  return r;
}

} // namespace mpt
