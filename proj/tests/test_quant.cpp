#include <cmath>

#include "core/rng.hpp"
#include "doctest.h"
#include "quant/quant.hpp"

using namespace tcaq;

namespace {

QuantParams uniform_qp(float s, int32_t z, int bits) {
  QuantParams qp;
  qp.kind = QuantKind::kUniform;
  qp.bits = bits;
  qp.scale = {s};
  qp.zero_point = {z};
  return qp;
}

QuantParams log2_qp(float s, int bits) {
  QuantParams qp;
  qp.kind = QuantKind::kLog2;
  qp.bits = bits;
  qp.scale = {s};
  qp.zero_point = {0};
  return qp;
}

}  // namespace

TEST_CASE("uniform quantize basics") {
  auto qp = uniform_qp(1.0f, 0, 8);
  CHECK(quantize_uniform(Tensor::scalar(0.0f), qp).codes[0] == 0);
  // grid points are exact
  for (int k : {1, 7, 100, 255}) {
    auto q = quantize_uniform(Tensor::scalar(static_cast<float>(k)), qp);
    CHECK(q.codes[0] == k);
    CHECK(dequantize_uniform(q, qp).item() == static_cast<float>(k));
  }
  // clipping at the top of the range
  CHECK(quantize_uniform(Tensor::scalar(1000.0f), qp).codes[0] == 255);
  // z code dequantizes to zero
  auto qp2 = uniform_qp(0.5f, 7, 4);
  QuantizedTensor q{{1}, {7}};
  CHECK(dequantize_uniform(q, qp2).item() == 0.0f);
}

TEST_CASE("uniform fake-quant error bounded by half step in range") {
  Rng rng(5);
  auto qp = uniform_qp(0.03f, 128, 8);
  const float lo = 0.03f * (0 - 128), hi = 0.03f * (255 - 128);
  for (int i = 0; i < 20000; ++i) {
    const float x = rng.uniform(lo, hi);
    Tensor t = Tensor::scalar(x);
    const float y = fake_quant(t, qp).item();
    CHECK(std::abs(y - x) <= 0.03f / 2 + 1e-6f);
  }
}

TEST_CASE("log2 quantize hand values") {
  auto qp = log2_qp(1.0f, 4);
  CHECK(quantize_log2(Tensor::scalar(1.0f), qp).codes[0] == 0);
  CHECK(dequantize_log2(QuantizedTensor{{1}, {0}}, qp).item() == 1.0f);
  CHECK(quantize_log2(Tensor::scalar(0.5f), qp).codes[0] == 1);
  CHECK(dequantize_log2(QuantizedTensor{{1}, {1}}, qp).item() == 0.5f);
  // -log2(1/3) = 1.585 -> code 2 -> dequant 1/4
  CHECK(quantize_log2(Tensor::scalar(1.0f / 3.0f), qp).codes[0] == 2);
  CHECK(dequantize_log2(QuantizedTensor{{1}, {2}}, qp).item() == 0.25f);
  // top code: bits=4 -> L=15 -> 2^-15
  CHECK(dequantize_log2(QuantizedTensor{{1}, {15}}, qp).item() == std::ldexp(1.0f, -15));
  // below the smallest level lands on the largest code
  CHECK(quantize_log2(Tensor::scalar(1e-30f), qp).codes[0] == 15);
  // exact zero uses the reserved code and round-trips to zero
  auto qz = quantize_log2(Tensor::scalar(0.0f), qp);
  CHECK(qz.codes[0] == qp.log2_zero_code());
  CHECK(dequantize_log2(qz, qp).item() == 0.0f);
  CHECK_THROWS_AS(quantize_log2(Tensor::scalar(-0.1f), qp), NumericError);
}

TEST_CASE("log2 relative error bound on the covered range") {
  Rng rng(7);
  auto qp = log2_qp(1.0f, 4);
  const float lo = std::ldexp(1.0f, -qp.qmax());
  for (int i = 0; i < 20000; ++i) {
    // log-uniform over [s*2^-L, s]
    const float e = rng.uniform(0.0f, static_cast<float>(qp.qmax()));
    const float x = std::pow(2.0f, -e);
    (void)lo;
    Tensor t = Tensor::scalar(x);
    const float y = fake_quant(t, qp).item();
    CHECK(std::abs(y - x) / x <= 0.415f);
  }
}

TEST_CASE("both quantizers keep softmax argmax maximal") {
  Rng rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<float> logits(16);
    for (auto& v : logits) v = rng.uniform(-4.0f, 4.0f);
    float mx = logits[0];
    for (float v : logits) mx = std::max(mx, v);
    float denom = 0;
    std::vector<float> row(16);
    for (size_t i = 0; i < 16; ++i) denom += row[i] = std::exp(logits[i] - mx);
    int argmax = 0;
    for (size_t i = 0; i < 16; ++i) {
      row[i] /= denom;
      if (row[i] > row[static_cast<size_t>(argmax)]) argmax = static_cast<int>(i);
    }
    Tensor t({16}, row);
    for (auto kind : {QuantKind::kUniform, QuantKind::kLog2}) {
      QuantParams qp = search_params_minmax(t, 4, kind, Granularity::kPerTensor);
      Tensor fq = fake_quant(t, qp);
      float qmax_val = fq.at(0);
      for (int i = 1; i < 16; ++i) qmax_val = std::max(qmax_val, fq.at(i));
      // the original argmax still attains the quantized maximum
      CHECK(fq.at(argmax) == qmax_val);
    }
  }
}

TEST_CASE("search_params_minmax formulas") {
  SUBCASE("[0,1] at 8 bits") {
    Tensor s({2}, std::vector<float>{0.0f, 1.0f});
    auto qp = search_params_minmax(s, 8, QuantKind::kUniform, Granularity::kPerTensor);
    CHECK(qp.scale[0] == doctest::Approx(1.0f / 255.0f));
    CHECK(qp.zero_point[0] == 0);
  }
  SUBCASE("[-1,1] at 2 bits") {
    Tensor s({2}, std::vector<float>{-1.0f, 1.0f});
    auto qp = search_params_minmax(s, 2, QuantKind::kUniform, Granularity::kPerTensor);
    CHECK(qp.scale[0] == doctest::Approx(2.0f / 3.0f));
    CHECK(qp.zero_point[0] == 2);  // round_half_even(1.5) = 2, in [0,3]
  }
  SUBCASE("degenerate constant input hits the scale floor") {
    Tensor s({4}, 0.5f);
    auto qp = search_params_minmax(s, 8, QuantKind::kUniform, Granularity::kPerTensor);
    CHECK(qp.scale[0] == doctest::Approx(1e-8f));
  }
  SUBCASE("log2 uses the max") {
    Tensor s({3}, std::vector<float>{0.1f, 0.9f, 0.4f});
    auto qp = search_params_minmax(s, 4, QuantKind::kLog2, Granularity::kPerTensor);
    CHECK(qp.scale[0] == doctest::Approx(0.9f));
    CHECK(qp.zero_point[0] == 0);
  }
  SUBCASE("per-channel keys on dim 0") {
    Tensor s({2, 3}, std::vector<float>{0, 1, 2, 0, 10, 20});
    auto qp = search_params_minmax(s, 8, QuantKind::kUniform, Granularity::kPerChannel);
    REQUIRE(qp.scale.size() == 2);
    CHECK(qp.scale[0] == doctest::Approx(2.0f / 255.0f));
    CHECK(qp.scale[1] == doctest::Approx(20.0f / 255.0f));
  }
}

TEST_CASE("search_params_mse") {
  Rng rng(21);
  SUBCASE("exact-grid samples give zero error") {
    std::vector<float> vals;
    for (int i = 0; i < 16; ++i) vals.push_back(0.1f * static_cast<float>(i));
    Tensor s({16}, vals);
    auto qp = search_params_mse(s, 4, QuantKind::kUniform, Granularity::kPerTensor);
    CHECK(fake_quant_mse(s, qp) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("outlier pulls the chosen scale below min-max") {
    std::vector<float> vals(2000);
    for (auto& v : vals) v = rng.normal();
    vals[0] = 40.0f;  // extreme outlier
    Tensor s({2000}, vals);
    auto mm = search_params_minmax(s, 4, QuantKind::kUniform, Granularity::kPerTensor);
    auto ms = search_params_mse(s, 4, QuantKind::kUniform, Granularity::kPerTensor);
    CHECK(ms.scale[0] < mm.scale[0]);
    CHECK(fake_quant_mse(s, ms) <= fake_quant_mse(s, mm));
  }
  SUBCASE("grid=2 still returns the better of the candidates") {
    std::vector<float> vals(100);
    for (auto& v : vals) v = rng.uniform(0.0f, 1.0f);
    Tensor s({100}, vals);
    auto mm = search_params_minmax(s, 4, QuantKind::kUniform, Granularity::kPerTensor);
    auto ms = search_params_mse(s, 4, QuantKind::kUniform, Granularity::kPerTensor, 2);
    CHECK(fake_quant_mse(s, ms) <= fake_quant_mse(s, mm) + 1e-12);
  }
  SUBCASE("never worse than min-max on its own samples (both kinds)") {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<float> vals(512);
      for (auto& v : vals) v = std::abs(rng.normal()) + 1e-4f;
      Tensor s({512}, vals);
      for (auto kind : {QuantKind::kUniform, QuantKind::kLog2}) {
        auto mm = search_params_minmax(s, 4, kind, Granularity::kPerTensor);
        auto ms = search_params_mse(s, 4, kind, Granularity::kPerTensor);
        CHECK(fake_quant_mse(s, ms) <= fake_quant_mse(s, mm) + 1e-12);
      }
    }
  }
}

TEST_CASE("fake_quant is idempotent") {
  Rng rng(33);
  for (auto kind : {QuantKind::kUniform, QuantKind::kLog2}) {
    std::vector<float> vals(999);
    for (auto& v : vals)
      v = kind == QuantKind::kUniform ? rng.uniform(-2.0f, 2.0f) : rng.uniform(0.0f, 1.0f);
    Tensor s({999}, vals);
    auto qp = search_params_minmax(s, 4, kind, Granularity::kPerTensor);
    Tensor once = fake_quant(s, qp);
    Tensor twice = fake_quant(once, qp);
    CHECK(once.data() == twice.data());
  }
}

TEST_CASE("straight-through gradient matches the clip envelope") {
  // envelope g(x) = clip(x, s*(0-z), s*(2^bits-1-z)); STE grad of fake_quant
  // should equal FD of g away from the kinks
  auto qp = uniform_qp(0.1f, 8, 4);
  const float lo = 0.1f * (0 - 8), hi = 0.1f * (15 - 8);
  Tensor x({6}, std::vector<float>{-1.4f, -0.52f, 0.01f, 0.33f, 0.69f, 1.2f});
  Tape tape;
  Tensor xin = x.clone();
  xin.set_requires_grad(true);
  Tensor y = fake_quant(xin, qp, &tape);
  Tensor loss = mean(y, &tape);
  backward(tape, loss);
  for (int i = 0; i < 6; ++i) {
    const float xi = x.at(i);
    const float expected = (xi > lo && xi < hi) ? 1.0f / 6.0f : 0.0f;
    CHECK(xin.grad()[static_cast<size_t>(i)] == doctest::Approx(expected).epsilon(1e-6));
  }
}

TEST_CASE("adaround soft weight: init reproduces FP weights, finalize snaps to grid") {
  Rng rng(71);
  std::vector<float> w(64);
  for (auto& v : w) v = rng.uniform(-0.4f, 0.4f);
  Tensor wt({64}, w);
  auto qp = search_params_minmax(wt, 4, QuantKind::kUniform, Granularity::kPerTensor);
  const float zeta = 1.1f, gamma = -0.1f;
  Tensor v = adaround_init_v(wt, qp, zeta, gamma);
  Tensor soft = adaround_soft_weight(wt, v, qp, zeta, gamma, nullptr);
  for (int64_t i = 0; i < wt.size(); ++i) {
    // exact only where the soft code stays inside the clip range and the
    // fractional part is away from the [0.01, 0.99] init clamp
    const float pos = wt.at(i) / qp.scale[0] + static_cast<float>(qp.zero_point[0]);
    const float frac = pos - std::floor(pos);
    if (pos >= 0.1f && pos <= static_cast<float>(qp.qmax()) - 0.1f && frac > 0.02f &&
        frac < 0.98f)
      CHECK(soft.at(i) == doctest::Approx(wt.at(i)).epsilon(1e-4));
    // everywhere else the soft weight stays within one step of the FP weight
    CHECK(std::abs(soft.at(i) - wt.at(i)) <= qp.scale[0] + 1e-6f);
  }

  Tensor hard = adaround_finalize(wt, v, qp, zeta, gamma);
  Tensor requant = fake_quant(hard, qp);
  CHECK(hard.data() == requant.data());  // exactly representable
  // finalized weights are floor-or-ceil of w/s, up to range clipping
  const float rep_lo = qp.scale[0] * (0.0f - static_cast<float>(qp.zero_point[0]));
  const float rep_hi = qp.scale[0] * (static_cast<float>(qp.qmax()) - qp.zero_point[0]);
  for (int64_t i = 0; i < wt.size(); ++i) {
    const float fl = std::floor(wt.at(i) / qp.scale[0]) * qp.scale[0];
    const float lo_v = std::min(rep_hi, std::max(rep_lo, fl));
    const float hi_v = std::min(rep_hi, std::max(rep_lo, fl + qp.scale[0]));
    CHECK((hard.at(i) == doctest::Approx(lo_v).epsilon(1e-5) ||
           hard.at(i) == doctest::Approx(hi_v).epsilon(1e-5)));
  }
}

TEST_CASE("adaround gradients agree with finite differences") {
  Rng rng(73);
  // wide weights give an O(1) quant step, which keeps d(soft)/dv = s * h'(v)
  // large enough for f32 central differences to resolve
  std::vector<float> w(10);
  for (auto& v : w) v = rng.uniform(-3.0f, 3.0f);
  Tensor wt({10}, w);
  auto qp = search_params_minmax(wt, 4, QuantKind::kUniform, Granularity::kPerTensor);
  const float zeta = 1.1f, gamma = -0.1f;
  // probe at v values where sigmoid'(v) and |2h-1| are not vanishing
  Tensor v0({10}, 0.0f);
  for (auto& v : v0.raw_data()) {
    const float mag = rng.uniform(0.4f, 1.4f);
    v = rng.uniform() < 0.5f ? -mag : mag;
  }
  // offset beyond one quant step so soft(w) - target never crosses zero
  Tensor target(wt.shape(), 0.0f);
  for (int64_t i = 0; i < target.size(); ++i)
    target.raw_data()[static_cast<size_t>(i)] = wt.at(i) + (i % 2 ? 1.0f : -1.0f);
  auto f = [&](const Tensor& v, Tape* tape) {
    Tensor soft = adaround_soft_weight(wt, v, qp, zeta, gamma, tape);
    return mse_loss(soft, target, tape);
  };
  // h = 5e-3: the larger step keeps the f32 loss-rounding noise below the
  // gradient signal for this composed surrogate
  CHECK(finite_difference_check(f, v0, 5e-3) < 1e-3);
  Tensor v_small({5}, std::vector<float>{0.5f, -0.7f, 1.1f, -1.3f, 0.9f});
  auto g = [&](const Tensor& v, Tape* tape) {
    return adaround_regularizer(v, 2.0f, zeta, gamma, tape);
  };
  CHECK(finite_difference_check(g, v_small, 5e-3) < 1e-3);
}

TEST_CASE("quant errors") {
  QuantParams qp;
  qp.scale = {0.0f};
  qp.zero_point = {0};
  CHECK_THROWS(quantize_uniform(Tensor::scalar(1.0f), qp));
  QuantParams bad_bits = uniform_qp(1.0f, 0, 8);
  bad_bits.bits = 9;
  CHECK_THROWS(quantize_uniform(Tensor::scalar(1.0f), bad_bits));
}
