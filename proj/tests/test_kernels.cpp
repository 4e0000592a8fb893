#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mpt/errors.hpp"
#include "mpt/kernels.hpp"
#include "oracles.hpp"

using namespace mpt;

namespace {

// Exact check: integer kernel output equals the FP32 kernel applied to the
// dequantized operands, element by element with zero tolerance. Valid while
// reductions stay under 2^24 / 127^2 terms, where FP32 sums are exact.
void check_matches_fp32(const AccumTensor& got, const FloatTensor& want) {
  REQUIRE(got.shape == want.shape);
  for (size_t i = 0; i < got.data.size(); ++i) {
    const float v = std::ldexp(static_cast<float>(got.data[i]), got.exponent);
    CHECK(v == want.data[i]);
  }
}

int64_t dot_flat(const std::vector<int32_t>& a, const std::vector<int8_t>& b) {
  int64_t s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += static_cast<int64_t>(a[i]) * b[i];
  return s;
}

} // namespace

TEST_CASE("int8_matmul: identity lhs widens rhs and sums exponents") {
  QuantTensor eye({2, 2}, 0);
  eye.data = {1, 0, 0, 1};
  std::mt19937 rng(1);
  QuantTensor b = oracle::random_quant(rng, {2, 2}, 3);
  AccumTensor out = int8_matmul(eye, b);
  CHECK(out.exponent == 3);
  for (int i = 0; i < 4; ++i) CHECK(out.data[i] == b.data[i]);
}

TEST_CASE("int8_matmul: hand case") {
  QuantTensor a({1, 2}, 1);
  a.data = {1, 2};
  QuantTensor b({2, 1}, 2);
  b.data = {3, 4};
  AccumTensor out = int8_matmul(a, b);
  CHECK(out.data[0] == 11);
  CHECK(out.exponent == 3);
  // value 11 * 2^3 = 88, cross-checked against the FP32 oracle
  check_matches_fp32(out, fp32_matmul(dequantize(a), dequantize(b)));
}

TEST_CASE("int8_matmul: errors") {
  std::mt19937 rng(2);
  QuantTensor a = oracle::random_quant(rng, {2, 3}, 0);
  QuantTensor b = oracle::random_quant(rng, {4, 2}, 0);
  CHECK_THROWS_AS(int8_matmul(a, b), std::invalid_argument);

  QuantTensor big({1, kMaxReduction + 1}, 0);
  QuantTensor big_b({kMaxReduction + 1, 1}, 0);
  CHECK_THROWS_AS(int8_matmul(big, big_b), std::invalid_argument);
}

TEST_CASE("int8_matmul equals FP32 matmul of dequantized operands, randomized") {
  std::mt19937 rng(3);
  for (int iter = 0; iter < 50; ++iter) {
    QuantTensor a = oracle::random_quant(rng, {8, 8}, -3 + iter % 7);
    QuantTensor b = oracle::random_quant(rng, {8, 8}, -2 + iter % 5);
    check_matches_fp32(int8_matmul(a, b), fp32_matmul(dequantize(a), dequantize(b)));
  }
}

TEST_CASE("int8_conv2d: 1x1 delta filter is identity") {
  std::mt19937 rng(4);
  QuantTensor x = oracle::random_quant(rng, {1, 1, 3, 3}, 2);
  QuantTensor w({1, 1, 1, 1}, 0);
  w.data = {1};
  AccumTensor out = int8_conv2d(x, w, {});
  CHECK(out.shape == Shape{1, 1, 3, 3});
  for (size_t i = 0; i < x.data.size(); ++i) CHECK(out.data[i] == x.data[i]);
  CHECK(out.exponent == 2);
}

TEST_CASE("int8_conv2d: all-ones 3x3 over all-ones 3x3 sums to 9") {
  QuantTensor x({1, 1, 3, 3}, 0);
  QuantTensor w({1, 1, 3, 3}, 0);
  std::fill(x.data.begin(), x.data.end(), 1);
  std::fill(w.data.begin(), w.data.end(), 1);
  AccumTensor out = int8_conv2d(x, w, {});
  REQUIRE(out.data.size() == 1);
  CHECK(out.data[0] == 9);
}

TEST_CASE("int8_conv2d matches the FP32 oracle on random shapes") {
  std::mt19937 rng(5);
  for (int iter = 0; iter < 30; ++iter) {
    const int C = 1 + iter % 3, O = 1 + (iter / 3) % 3, k = 1 + iter % 3;
    ConvParams p{1 + iter % 2, 1 + iter % 2, iter % 2, iter % 2};
    QuantTensor x = oracle::random_quant(rng, {2, C, 6, 6}, -2);
    QuantTensor w = oracle::random_quant(rng, {O, C, k, k}, -4);
    check_matches_fp32(int8_conv2d(x, w, p), fp32_conv2d(dequantize(x), dequantize(w), p));
  }
}

TEST_CASE("int8_deconv: 1x1 stride-1 reduces to a channel matmul") {
  std::mt19937 rng(6);
  QuantTensor e = oracle::random_quant(rng, {1, 3, 2, 2}, 0);
  QuantTensor w = oracle::random_quant(rng, {3, 2, 1, 1}, 0); // [O=3, C=2]
  AccumTensor out = int8_deconv(e, w, {}, 2, 2);
  // Per pixel: out[c] = sum_o e[o] * w[o][c], i.e. w^T applied channel-wise.
  for (int h = 0; h < 2; ++h)
    for (int ww = 0; ww < 2; ++ww)
      for (int c = 0; c < 2; ++c) {
        int32_t expect = 0;
        for (int o = 0; o < 3; ++o) {
          expect += static_cast<int32_t>(e.data[(o * 2 + h) * 2 + ww]) *
                    static_cast<int32_t>(w.data[o * 2 + c]);
        }
        CHECK(out.data[(c * 2 + h) * 2 + ww] == expect);
      }
}

TEST_CASE("int8_deconv: 2x2 kernel over 2x2 error expands to 3x3, matches FP32 oracle") {
  std::mt19937 rng(7);
  QuantTensor e = oracle::random_quant(rng, {1, 1, 2, 2}, 0);
  QuantTensor w = oracle::random_quant(rng, {1, 1, 2, 2}, 0);
  AccumTensor out = int8_deconv(e, w, {}, 3, 3);
  CHECK(out.shape == Shape{1, 1, 3, 3});
  check_matches_fp32(out, fp32_conv_input_grad(dequantize(e), dequantize(w), {}, 3, 3));
}

TEST_CASE("int8_deconv matches the FP32 input-gradient oracle on random shapes") {
  std::mt19937 rng(8);
  for (int iter = 0; iter < 30; ++iter) {
    const int C = 1 + iter % 3, O = 1 + (iter / 2) % 3, k = 1 + iter % 3;
    ConvParams p{1 + iter % 2, 1 + iter % 2, iter % 2 ? (k > 1 ? 1 : 0) : 0, 0};
    const int H = 6, W = 6;
    const int HE = static_cast<int>(conv_out_dim(H, k, p.pad_h, p.stride_h));
    const int WE = static_cast<int>(conv_out_dim(W, k, p.pad_w, p.stride_w));
    QuantTensor e = oracle::random_quant(rng, {2, O, HE, WE}, 0);
    QuantTensor w = oracle::random_quant(rng, {O, C, k, k}, -1);
    check_matches_fp32(int8_deconv(e, w, p, H, W),
                       fp32_conv_input_grad(dequantize(e), dequantize(w), p, H, W));
  }
}

TEST_CASE("deconv is the exact adjoint of conv over the integers") {
  std::mt19937 rng(9);
  for (int iter = 0; iter < 20; ++iter) {
    const int C = 1 + iter % 2, O = 1 + iter % 3, k = 1 + iter % 3;
    ConvParams p{1 + iter % 2, 1, iter % 2 && k > 1 ? 1 : 0, 0};
    QuantTensor x = oracle::random_quant(rng, {1, C, 5, 5}, 0);
    QuantTensor w = oracle::random_quant(rng, {O, C, k, k}, 0);
    AccumTensor y = int8_conv2d(x, w, p);
    QuantTensor e = oracle::random_quant(rng, y.shape, 0);
    AccumTensor xg = int8_deconv(e, w, p, 5, 5);

    // <conv(x,w), e> == <x, deconv(e,w)>
    const int64_t lhs = dot_flat(y.data, e.data);
    const int64_t rhs = dot_flat(xg.data, x.data);
    CHECK(lhs == rhs);
  }
}

TEST_CASE("weight_rotate composes with the pre-rotated deconv") {
  std::mt19937 rng(10);
  QuantTensor e = oracle::random_quant(rng, {2, 3, 4, 4}, 1);
  QuantTensor w = oracle::random_quant(rng, {3, 2, 3, 3}, -2);
  ConvParams p{1, 1, 1, 1};
  QuantTensor rot = weight_rotate(w);
  CHECK(rot.shape == Shape{2, 3, 3, 3});
  AccumTensor direct = int8_deconv(e, w, p, 4, 4);
  AccumTensor viaRot = int8_deconv_rotated(e, rot, p, 4, 4);
  CHECK(direct == viaRot);
}

TEST_CASE("int8_conv_backprop_filter: zero error gives zero gradient") {
  std::mt19937 rng(11);
  QuantTensor x = oracle::random_quant(rng, {2, 2, 4, 4}, 0);
  QuantTensor e({2, 3, 2, 2}, 0); // zeros
  ConvParams p{2, 2, 0, 0};
  AccumTensor g = int8_conv_backprop_filter(x, e, p);
  CHECK(g.shape == Shape{3, 2, 2, 2});
  for (int32_t v : g.data) CHECK(v == 0);
}

TEST_CASE("int8_conv_backprop_filter: 1x1 conv case reduces to x^T e") {
  std::mt19937 rng(12);
  // N=4 samples, C=2, O=3, 1x1 spatial: filter grad [o][c] = sum_n x[n,c]*e[n,o]
  QuantTensor x = oracle::random_quant(rng, {4, 2, 1, 1}, 0);
  QuantTensor e = oracle::random_quant(rng, {4, 3, 1, 1}, 0);
  AccumTensor g = int8_conv_backprop_filter(x, e, {});
  QuantTensor xm({4, 2}, 0);
  xm.data = x.data;
  QuantTensor em({4, 3}, 0);
  em.data = e.data;
  AccumTensor gm = int8_matmul(transpose2d(xm), em); // [2x3] = x^T e
  for (int o = 0; o < 3; ++o)
    for (int c = 0; c < 2; ++c) CHECK(g.data[o * 2 + c] == gm.data[c * 3 + o]);
}

TEST_CASE("int8_conv_backprop_filter matches the FP32 weight-gradient oracle") {
  std::mt19937 rng(13);
  for (int iter = 0; iter < 30; ++iter) {
    const int C = 1 + iter % 3, O = 1 + (iter / 2) % 3, k = 1 + iter % 3;
    ConvParams p{1 + iter % 2, 1, (iter % 2) && k > 1 ? 1 : 0, 0};
    const int H = 6, W = 5;
    const int HE = static_cast<int>(conv_out_dim(H, k, p.pad_h, p.stride_h));
    const int WE = static_cast<int>(conv_out_dim(W, k, p.pad_w, p.stride_w));
    QuantTensor x = oracle::random_quant(rng, {2, C, H, W}, -1);
    QuantTensor e = oracle::random_quant(rng, {2, O, HE, WE}, -2);
    check_matches_fp32(int8_conv_backprop_filter(x, e, p, k, k),
                       fp32_conv_filter_grad(dequantize(x), dequantize(e), p, k, k));
  }
}

TEST_CASE("maxpool: hand case, routing and ties") {
  QuantTensor x({1, 1, 2, 2}, 3);
  x.data = {1, 2, 3, 4};
  auto r = int8_maxpool_fwd(x, {2, 2, 2, 2});
  CHECK(r.output.data.size() == 1);
  CHECK(r.output.data[0] == 4);
  CHECK(r.output.exponent == 3);
  CHECK(r.argmax.data[0] == 3); // position (1,1)

  QuantTensor e({1, 1, 1, 1}, 3);
  e.data = {5};
  QuantTensor back = int8_maxpool_bwd(e, r.argmax, x.shape);
  CHECK(back.data == std::vector<int8_t>{0, 0, 0, 5});

  // Ties resolve to the first-scanned (row-major lowest) index.
  QuantTensor t({1, 1, 2, 2}, 0);
  t.data = {7, 7, 7, 7};
  CHECK(int8_maxpool_fwd(t, {2, 2, 2, 2}).argmax.data[0] == 0);

  QuantTensor small({1, 1, 1, 1}, 0);
  CHECK_THROWS_AS(int8_maxpool_fwd(small, {2, 2, 2, 2}), std::invalid_argument);
}

TEST_CASE("maxpool backward conserves error mass with non-overlapping windows") {
  std::mt19937 rng(14);
  for (int iter = 0; iter < 20; ++iter) {
    QuantTensor x = oracle::random_quant(rng, {2, 3, 4, 4}, 0);
    auto r = int8_maxpool_fwd(x, {2, 2, 2, 2});
    QuantTensor e = oracle::random_quant(rng, r.output.shape, 0);
    QuantTensor back = int8_maxpool_bwd(e, r.argmax, x.shape);
    const int64_t in_sum = std::accumulate(e.data.begin(), e.data.end(), int64_t{0});
    const int64_t out_sum = std::accumulate(back.data.begin(), back.data.end(), int64_t{0});
    CHECK(in_sum == out_sum);
  }
}

TEST_CASE("relu: negative-only input zeroes out; mask is idempotent") {
  QuantTensor x({4}, 1);
  x.data = {-3, -1, -100, -127};
  auto r = relu_fwd(x);
  for (int8_t v : r.output.data) CHECK(v == 0);

  auto r2 = relu_fwd(r.output);
  CHECK(r2.output.data == r.output.data);

  std::mt19937 rng(15);
  QuantTensor q = oracle::random_quant(rng, {32}, -1);
  auto rq = relu_fwd(q);
  auto f = fp32_relu_fwd(dequantize(q));
  for (size_t i = 0; i < q.data.size(); ++i) {
    CHECK(std::ldexp(static_cast<float>(rq.output.data[i]), q.exponent) == f.output.data[i]);
    CHECK(rq.mask.data[i] == f.mask.data[i]);
  }
  QuantTensor e = oracle::random_quant(rng, {32}, 0);
  QuantTensor eb = relu_bwd(e, rq.mask);
  for (size_t i = 0; i < e.data.size(); ++i) {
    CHECK(eb.data[i] == (rq.mask.data[i] ? e.data[i] : 0));
  }
}

TEST_CASE("softmax_xent_loss: uniform logits give ln(C) and symmetric error") {
  QuantTensor logits({2, 4}, 0); // zeros
  std::vector<int> labels = {1, 3};
  auto r = softmax_xent_loss(logits, labels);
  CHECK(r.loss == doctest::Approx(std::log(4.0)).epsilon(1e-6));
  FloatTensor err = dequantize(r.error);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 4; ++j) {
      const float expect = 0.25f - (j == labels[static_cast<size_t>(i)] ? 1.0f : 0.0f);
      CHECK(err.data[i * 4 + j] == doctest::Approx(expect).epsilon(0.02));
    }
}

TEST_CASE("softmax_xent_loss: dominant correct logit drives loss to zero") {
  QuantTensor logits({1, 3}, 0);
  logits.data = {120, -120, -120};
  std::vector<int> labels = {0};
  auto r = softmax_xent_loss(logits, labels);
  auto f = fp32_softmax_xent(dequantize(logits), labels);
  CHECK(r.loss == doctest::Approx(f.loss).epsilon(1e-6));
  CHECK(r.loss < 1e-6f);
}

TEST_CASE("softmax_xent_loss: label out of range") {
  QuantTensor logits({1, 3}, 0);
  std::vector<int> labels = {3};
  CHECK_THROWS_AS(softmax_xent_loss(logits, labels), std::invalid_argument);
}

TEST_CASE("softmax error gradient matches finite differences of the loss") {
  std::mt19937 rng(16);
  QuantTensor logits = oracle::random_quant(rng, {3, 5}, -4);
  std::vector<int> labels = {0, 2, 4};
  auto r = softmax_xent_loss(logits, labels);
  FloatTensor err = dequantize(r.error);

  // loss is the batch mean, so d(loss)/d(logit) = (softmax - onehot) / N.
  FloatTensor base = dequantize(logits);
  const double h = 1e-3;
  for (size_t i = 0; i < base.data.size(); ++i) {
    FloatTensor up = base, dn = base;
    up.data[i] += static_cast<float>(h);
    dn.data[i] -= static_cast<float>(h);
    const double fd =
        (fp32_softmax_xent(up, labels).loss - fp32_softmax_xent(dn, labels).loss) / (2 * h);
    const double grad = err.data[i] / 3.0;
    if (std::fabs(fd) > 1e-3) {
      CHECK(grad == doctest::Approx(fd).epsilon(1e-2));
    } else {
      CHECK(std::fabs(grad - fd) < 5e-3); // quantization floor near zero
    }
  }
}

TEST_CASE("weight_update_int8 hand cases") {
  QuantTensor w({1}, 0);
  w.data = {10};
  QuantTensor g({1}, 0);
  g.data = {0};
  CHECK(weight_update_int8(w, g, 1).data[0] == 10);

  g.data = {4}; // 4 * 2^(0-0-1) = 2
  QuantTensor w2 = weight_update_int8(w, g, 1);
  CHECK(w2.data[0] == 8);
  CHECK(w2.exponent == 0);

  QuantTensor wneg({1}, 0);
  wneg.data = {-127};
  QuantTensor gpos({1}, 0);
  gpos.data = {100};
  CHECK(weight_update_int8(wneg, gpos, 0).data[0] == -127); // saturates
}

TEST_CASE("weight_update_fp32: identity at lr=0 and SGD-oracle match") {
  std::mt19937 rng(17);
  FloatTensor master = oracle::random_float(rng, {8}, -1.0f, 1.0f);
  QuantTensor g = oracle::random_quant(rng, {8}, -8);

  auto r0 = weight_update_fp32(master, g, 0.0f);
  CHECK(r0.master.data == master.data);

  const float lr = 0.25f;
  auto r = weight_update_fp32(master, g, lr);
  FloatTensor gf = dequantize(g);
  for (size_t i = 0; i < master.data.size(); ++i) {
    CHECK(r.master.data[i] == master.data[i] - lr * gf.data[i]);
  }
  // Returned INT8 weights drift from the master by at most the quantize step.
  FloatTensor back = dequantize(r.weights);
  const double bound = std::exp2(static_cast<double>(r.weights.exponent - 1));
  for (size_t i = 0; i < back.data.size(); ++i) {
    CHECK(std::fabs(back.data[i] - r.master.data[i]) <= bound + 1e-9);
  }
}

TEST_CASE("overflow safety at the admissible reduction bound") {
  // All-(+/-127) operands at the longest legal reduction: the accumulation
  // reaches 127*127*2^16 and must stay inside INT32.
  QuantTensor a({1, kMaxReduction}, 0);
  QuantTensor b({kMaxReduction, 1}, 0);
  std::fill(a.data.begin(), a.data.end(), 127);
  std::fill(b.data.begin(), b.data.end(), -127);
  AccumTensor out = int8_matmul(a, b);
  CHECK(out.data[0] == -1057030144); // -127*127*65536, exact
}

TEST_CASE("two-layer toy network: integer backward tracks FP32 finite differences") {
  std::mt19937 rng(18);

  // dense(6->8) -> relu -> dense(8->3) -> softmax xent
  FloatTensor xs = oracle::random_float(rng, {4, 6}, -1.0f, 1.0f);
  FloatTensor w1f = oracle::random_float(rng, {6, 8}, -0.5f, 0.5f);
  FloatTensor w2f = oracle::random_float(rng, {8, 3}, -0.5f, 0.5f);
  std::vector<int> labels = {0, 1, 2, 1};

  QuantTensor x = quantize(xs);
  QuantTensor w1 = quantize(w1f);
  QuantTensor w2 = quantize(w2f);

  // Integer forward
  AccumTensor a1 = int8_matmul(x, w1);
  QuantTensor h1 = downscale(a1, compute_scale_exponent(a1));
  auto rl = relu_fwd(h1);
  AccumTensor a2 = int8_matmul(rl.output, w2);
  QuantTensor logits = downscale(a2, compute_scale_exponent(a2));
  auto loss = softmax_xent_loss(logits, labels);

  // Integer backward
  QuantTensor e2 = loss.error;
  AccumTensor g2acc = int8_matmul(transpose2d(rl.output), e2);
  QuantTensor g2 = downscale(g2acc, compute_scale_exponent(g2acc));
  AccumTensor e1acc = int8_matmul(e2, transpose2d(w2));
  QuantTensor e1 = relu_bwd(downscale(e1acc, compute_scale_exponent(e1acc)), rl.mask);
  AccumTensor g1acc = int8_matmul(transpose2d(x), e1);
  QuantTensor g1 = downscale(g1acc, compute_scale_exponent(g1acc));

  // FP32 finite differences at the dequantized weights
  FloatTensor xd = dequantize(x);
  FloatTensor w1d = dequantize(w1);
  FloatTensor w2d = dequantize(w2);
  auto fwd_loss = [&](const FloatTensor& a, const FloatTensor& b) {
    auto r1 = fp32_relu_fwd(fp32_matmul(xd, a));
    return fp32_softmax_xent(fp32_matmul(r1.output, b), labels).loss;
  };

  auto cosine = [](const std::vector<double>& u, const std::vector<double>& v) {
    double uv = 0, uu = 0, vv = 0;
    for (size_t i = 0; i < u.size(); ++i) {
      uv += u[i] * v[i];
      uu += u[i] * u[i];
      vv += v[i] * v[i];
    }
    return uv / std::sqrt(uu * vv);
  };

  const double h = 1e-3;
  std::vector<double> fd, ig;
  FloatTensor g1d = dequantize(g1);
  for (size_t i = 0; i < w1d.data.size(); ++i) {
    FloatTensor up = w1d, dn = w1d;
    up.data[i] += static_cast<float>(h);
    dn.data[i] -= static_cast<float>(h);
    fd.push_back((fwd_loss(up, w2d) - fwd_loss(dn, w2d)) / (2 * h));
    ig.push_back(g1d.data[i] / 4.0); // mean-loss scaling over the batch of 4
  }
  FloatTensor g2d = dequantize(g2);
  for (size_t i = 0; i < w2d.data.size(); ++i) {
    FloatTensor up = w2d, dn = w2d;
    up.data[i] += static_cast<float>(h);
    dn.data[i] -= static_cast<float>(h);
    fd.push_back((fwd_loss(w1d, up) - fwd_loss(w1d, dn)) / (2 * h));
    ig.push_back(g2d.data[i] / 4.0);
  }

  CHECK(cosine(fd, ig) >= 0.9);
}
