#include <cmath>

#include "doctest.h"
#include "tcr/tcr.hpp"

using namespace tcaq;

namespace {

ToyUNet make_test_model(uint64_t seed) {
  ToyUNet model(UNetConfig{}, seed);
  Rng rng(seed, 0x99);
  for (auto& v : model.mutable_param("out.conv.weight").raw_data()) v = 0.05f * rng.normal();
  for (auto& v : model.mutable_param("mid.attn.proj.weight").raw_data()) v = 0.1f * rng.normal();
  for (auto& v : model.mutable_param("down.1.attn.proj.weight").raw_data())
    v = 0.1f * rng.normal();
  return model;
}

// hand-built calibration set with explicit captures for one layer
CalibrationSet hand_set(const std::string& layer, const std::vector<int>& ts,
                        const std::vector<Tensor>& batches_per_t) {
  CalibrationSet set;
  set.timesteps = ts;
  set.inference_steps = static_cast<int>(ts.size());
  for (size_t i = 0; i < ts.size(); ++i) {
    const Tensor& batch = batches_per_t[i];
    for (int c = 0; c < batch.dim(0); ++c) {
      CalibrationSample s;
      s.t = ts[i];
      s.chain_id = c;
      const int64_t per = numel(batch.shape()) / batch.dim(0);
      Shape rs = batch.shape();
      rs[0] = 1;
      std::vector<float> row(static_cast<size_t>(per));
      std::copy_n(&batch.data()[static_cast<size_t>(c) * per], per, row.data());
      s.captured.emplace(layer, Tensor(rs, std::move(row)));
      set.samples.push_back(std::move(s));
    }
  }
  return set;
}

ChannelStats stats_from(std::vector<int> ts, std::vector<std::vector<float>> maxima) {
  ChannelStats st;
  st.layer_id = "test";
  st.timesteps = std::move(ts);
  st.maxima = std::move(maxima);
  st.channels = static_cast<int>(st.maxima[0].size());
  return st;
}

}  // namespace

TEST_CASE("channel maxima against a brute-force oracle") {
  ToyUNet model = make_test_model(5);
  // layer down.0.conv1 has 16 input channels; build a 2-chain, 2-timestep set
  Rng rng(3);
  std::vector<Tensor> batches;
  for (int t = 0; t < 2; ++t) {
    Tensor b({2, 16, 8, 8}, 0.0f);
    for (auto& v : b.raw_data()) v = rng.uniform(-2.0f, 2.0f);
    batches.push_back(b);
  }
  CalibrationSet set = hand_set("down.0.conv1", {10, 0}, batches);
  ChannelStats st = collect_channel_maxima(set, model, "down.0.conv1");
  REQUIRE(st.maxima.size() == 2);
  REQUIRE(st.channels == 16);
  for (int ti = 0; ti < 2; ++ti)
    for (int d = 0; d < 16; ++d) {
      float expect = 0.0f;
      for (int n = 0; n < 2; ++n)
        for (int j = 0; j < 64; ++j)
          expect = std::max(expect, std::abs(batches[static_cast<size_t>(ti)].at(
                                        (static_cast<int64_t>(n) * 16 + d) * 64 + j)));
      CHECK(st.maxima[static_cast<size_t>(ti)][static_cast<size_t>(d)] ==
            doctest::Approx(expect));
    }

  // constant activations give |c| everywhere
  Tensor cbatch({1, 16, 8, 8}, -0.75f);
  CalibrationSet cset = hand_set("down.0.conv1", {0}, {cbatch});
  ChannelStats cst = collect_channel_maxima(cset, model, "down.0.conv1");
  for (float m : cst.maxima[0]) CHECK(m == doctest::Approx(0.75f));

  // duplicating a sample never changes the maxima
  std::vector<Tensor> dup = {concat({batches[0], batches[0]}, 0)};
  CalibrationSet dset = hand_set("down.0.conv1", {10}, dup);
  ChannelStats dst = collect_channel_maxima(dset, model, "down.0.conv1");
  for (int d = 0; d < 16; ++d)
    CHECK(dst.maxima[0][static_cast<size_t>(d)] ==
          doctest::Approx(st.maxima[0][static_cast<size_t>(d)]));
}

TEST_CASE("target range") {
  ChannelStats st = stats_from({0}, {{4.0f, 2.0f, 8.0f}});
  CHECK(compute_target_range(st, 0) == doctest::Approx(2.0f));
  ChannelStats eq = stats_from({0}, {{3.5f, 3.5f}});
  CHECK(compute_target_range(eq, 0) == doctest::Approx(3.5f));
  ChannelStats dead = stats_from({0}, {{0.0f, 5.0f}});
  CHECK(compute_target_range(dead, 0) == doctest::Approx(1e-8f));
  // dead channel keeps every ratio finite
  ScalingVector sv = compute_scaling_vector(dead);
  for (float r : sv.r) CHECK(std::isfinite(r));
}

TEST_CASE("scaling vector formulas") {
  SUBCASE("single timestep is the plain ratio") {
    ScalingVector sv = compute_scaling_vector(stats_from({0}, {{4.0f, 2.0f, 8.0f}}));
    CHECK(sv.r[0] == doctest::Approx(2.0f));
    CHECK(sv.r[1] == doctest::Approx(1.0f));
    CHECK(sv.r[2] == doctest::Approx(4.0f));
  }
  SUBCASE("two-timestep weighted average, hand computed") {
    ScalingVector sv =
        compute_scaling_vector(stats_from({10, 0}, {{4.0f, 2.0f}, {2.0f, 2.0f}}));
    // s_tar = 2, 2 ; r_t = [2,1],[1,1] ; r0 = (2*4+1*2)/(4+2) = 10/6
    CHECK(sv.s_tar[0] == doctest::Approx(2.0f));
    CHECK(sv.s_tar[1] == doctest::Approx(2.0f));
    CHECK(sv.r[0] == doctest::Approx(10.0f / 6.0f));
    CHECK(sv.r[1] == doctest::Approx(1.0f));
  }
  SUBCASE("duplicated timestep rows leave r unchanged") {
    ScalingVector once = compute_scaling_vector(stats_from({10, 0}, {{4.0f, 2.0f}, {2.0f, 2.0f}}));
    ScalingVector twice = compute_scaling_vector(
        stats_from({10, 5, 3, 0}, {{4.0f, 2.0f}, {4.0f, 2.0f}, {2.0f, 2.0f}, {2.0f, 2.0f}}));
    for (size_t d = 0; d < once.r.size(); ++d)
      CHECK(twice.r[d] == doctest::Approx(once.r[d]).epsilon(1e-6));
  }
}

TEST_CASE("clamp_scaling") {
  ScalingVector sv;
  sv.r = {0.1f, 2.0f, 40.0f};
  ScalingVector clamped = clamp_scaling(sv, 5.0f);
  CHECK(clamped.r[0] == doctest::Approx(0.2f));
  CHECK(clamped.r[1] == doctest::Approx(2.0f));
  CHECK(clamped.r[2] == doctest::Approx(5.0f));
  CHECK_THROWS(clamp_scaling(sv, 0.5f));

  // clamp with smaller range never increases |log r|
  for (float range : {100.0f, 10.0f, 5.0f, 2.0f, 1.0f}) {
    ScalingVector c = clamp_scaling(sv, range);
    for (size_t d = 0; d < sv.r.size(); ++d) {
      const float before = std::abs(std::log(sv.r[d]));
      const float after = std::abs(std::log(c.r[d]));
      CHECK(after <= before + 1e-6f);
    }
  }
}

TEST_CASE("apply_reparam preserves layer outputs in FP") {
  ToyUNet model = make_test_model(5);
  Rng rng(7);

  SUBCASE("all-ones vector leaves weights unchanged") {
    QuantContext qc;
    ScalingVector sv;
    sv.layer_id = "down.0.conv1";
    sv.r.assign(16, 1.0f);
    apply_reparam(model, qc, sv);
    CHECK(qc.weights.at("down.0.conv1.weight").data() ==
          model.param("down.0.conv1.weight").data());
  }
  SUBCASE("random conv layer, random r: output preserved within 1e-5") {
    QuantContext qc;
    qc.quantize_acts = false;
    ScalingVector sv;
    sv.layer_id = "down.1.conv2";
    for (int i = 0; i < 32; ++i) sv.r.push_back(rng.uniform(0.5f, 4.0f));
    apply_reparam(model, qc, sv);
    const Tensor& w = model.param("down.1.conv2.weight");
    const Tensor& b = model.param("down.1.conv2.bias");
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = Tensor::randn({2, 32, 8, 8}, rng);
      Tensor ref = conv2d(x, w, b);
      Tensor xdiv = mul(x, qc.input_recip.at("down.1.conv2"));
      Tensor got = conv2d(xdiv, qc.weights.at("down.1.conv2.weight"), b);
      // relative to the output scale; per-element ratios are meaningless
      // where the accumulation cancels to near zero
      float scale_den = 0.0f, worst = 0.0f;
      for (int64_t i = 0; i < ref.size(); ++i) scale_den = std::max(scale_den, std::abs(ref.at(i)));
      for (int64_t i = 0; i < ref.size(); ++i)
        worst = std::max(worst, std::abs(got.at(i) - ref.at(i)));
      CHECK(worst / scale_den < 1e-5f);
    }
  }
  SUBCASE("channel count mismatch is an error") {
    QuantContext qc;
    ScalingVector sv;
    sv.layer_id = "down.0.conv1";
    sv.r.assign(7, 1.0f);
    CHECK_THROWS(apply_reparam(model, qc, sv));
  }
}

TEST_CASE("reparameterization shrinks the cross-channel spread") {
  ChannelStats st = stats_from({10, 0}, {{8.0f, 1.0f, 2.0f}, {4.0f, 0.5f, 2.0f}});
  ScalingVector sv = compute_scaling_vector(st);
  ChannelStats after = reparamed_stats(st, sv);
  CHECK(mean_channel_spread(after) < mean_channel_spread(st));
}

TEST_CASE("timestep tables") {
  ToyUNet model = make_test_model(5);
  NoiseSchedule sched = NoiseSchedule::linear(100);
  CalibrationSet set = sample_calibration_fp(model, 4, 8, 21, sched);

  TimestepQuantTable g1 = build_timestep_table(set, model, "down.0.conv1", 4, 1);
  CHECK(g1.group_count() == 1);
  for (int g : g1.group_of) CHECK(g == 0);

  TimestepQuantTable gt = build_timestep_table(set, model, "down.0.conv1", 4, 8);
  CHECK(gt.group_count() == 8);
  for (size_t i = 0; i < gt.group_of.size(); ++i)
    CHECK(gt.group_of[i] == static_cast<int>(i));  // per-timestep
  // lookup maps each timestep to its own group
  for (size_t i = 0; i < set.timesteps.size(); ++i)
    CHECK(gt.lookup(set.timesteps[i]) == &gt.group_params[i]);
  CHECK(gt.lookup(9999) == nullptr);

  // finer partition cannot do worse: total fake-quant MSE per timestep
  auto grouped = capture_layer_stats(set, "down.0.conv1");
  double mse_g1 = 0.0, mse_gt = 0.0;
  for (size_t i = 0; i < grouped.size(); ++i) {
    const auto& [t, batch] = grouped[i];
    mse_g1 += fake_quant_mse(batch, *g1.lookup(t));
    mse_gt += fake_quant_mse(batch, *gt.lookup(t));
  }
  CHECK(mse_gt <= mse_g1 + 1e-12);

  CHECK_THROWS(build_timestep_table(set, model, "down.0.conv1", 4, 9));
}
