#include <algorithm>
#include <cmath>

#include "calib/calibration.hpp"
#include "daq/daq.hpp"
#include "doctest.h"

using namespace tcaq;

namespace {

// inverse-CDF sampler for the continuous power law with density exponent
// alpha: x = x_min * u^(-1/(alpha-1))
std::vector<float> power_law_samples(double alpha, double x_min, int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> out(static_cast<size_t>(n));
  for (auto& v : out) {
    const double u = 1.0 - static_cast<double>(rng.uniform());  // (0, 1]
    v = static_cast<float>(x_min * std::pow(u, -1.0 / (alpha - 1.0)));
  }
  return out;
}

std::vector<float> exponential_samples(double rate, double shift, int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> out(static_cast<size_t>(n));
  for (auto& v : out) {
    const double u = 1.0 - static_cast<double>(rng.uniform());
    v = static_cast<float>(shift - std::log(u) / rate);
  }
  return out;
}

std::vector<float> truncated_normal_samples(double mean, double sd, int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> out;
  out.reserve(static_cast<size_t>(n));
  while (static_cast<int>(out.size()) < n) {
    const float v = static_cast<float>(mean + sd * rng.normal());
    if (v > 0.0f) out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_CASE("power-law fit recovers the exponent") {
  int hits = 0;
  const int trials = 12;
  for (int k = 0; k < trials; ++k) {
    auto samples = power_law_samples(2.5, 0.01, 10000, 100 + static_cast<uint64_t>(k));
    PowerLawFit fit = fit_power_law(samples);
    CHECK(fit.alpha > 1.0);
    CHECK(fit.x_min >= 0.01);
    CHECK(fit.n_tail >= 50);
    if (fit.alpha > 2.4 && fit.alpha < 2.6) ++hits;
  }
  CHECK(hits >= trials - 1);
}

TEST_CASE("degenerate and scaling behaviour") {
  SUBCASE("all-equal samples raise the insufficient-tail error") {
    std::vector<float> same(500, 0.25f);
    CHECK_THROWS_AS(fit_power_law(same), InsufficientTailError);
  }
  SUBCASE("too few samples") {
    std::vector<float> few(10, 1.0f);
    CHECK_THROWS_AS(fit_power_law(few), InsufficientTailError);
  }
  SUBCASE("non-positive samples are rejected") {
    std::vector<float> bad(100, 1.0f);
    bad[3] = 0.0f;
    CHECK_THROWS(fit_power_law(bad));
  }
  SUBCASE("doubling every sample doubles x_min and keeps alpha") {
    auto samples = power_law_samples(2.5, 0.01, 5000, 7);
    PowerLawFit a = fit_power_law(samples);
    for (auto& v : samples) v *= 2.0f;  // exact in binary float
    PowerLawFit b = fit_power_law(samples);
    CHECK(b.alpha == doctest::Approx(a.alpha).epsilon(1e-6));
    CHECK(b.x_min == doctest::Approx(2.0 * a.x_min).epsilon(1e-6));
  }
  SUBCASE("log-likelihood is invariant to sample order") {
    auto samples = power_law_samples(2.2, 0.05, 2000, 9);
    PowerLawFit a = fit_power_law(samples);
    std::reverse(samples.begin(), samples.end());
    PowerLawFit b = fit_power_law(samples);
    CHECK(a.loglik == b.loglik);
    CHECK(fit_alternative(samples, AltFamily::kExponential, a.x_min) ==
          fit_alternative({samples.rbegin(), samples.rend()}, AltFamily::kExponential, a.x_min));
  }
}

TEST_CASE("model selection discriminates the generating family") {
  SUBCASE("power-law data: R_g > 0 in nearly every trial") {
    int wins = 0;
    for (int k = 0; k < 10; ++k) {
      auto samples = power_law_samples(2.5, 0.01, 10000, 300 + static_cast<uint64_t>(k));
      PowerLawFit fit = fit_power_law(samples);
      std::vector<double> alts = {fit_alternative(samples, AltFamily::kExponential, fit.x_min),
                                  fit_alternative(samples, AltFamily::kLogNormal, fit.x_min)};
      if (likelihood_ratio(fit, alts) > 0.0) ++wins;
    }
    CHECK(wins >= 9);
  }
  SUBCASE("exponential data: the exponential fit wins") {
    int wins = 0;
    for (int k = 0; k < 10; ++k) {
      auto samples = exponential_samples(3.0, 0.01, 10000, 400 + static_cast<uint64_t>(k));
      PowerLawFit fit = fit_power_law(samples);
      const double alt = fit_alternative(samples, AltFamily::kExponential, fit.x_min);
      if (alt > fit.loglik) ++wins;
    }
    CHECK(wins >= 9);
  }
  SUBCASE("truncated-normal data: R_g < 0") {
    int wins = 0;
    for (int k = 0; k < 10; ++k) {
      auto samples = truncated_normal_samples(0.5, 0.15, 10000, 500 + static_cast<uint64_t>(k));
      PowerLawFit fit = fit_power_law(samples);
      std::vector<double> alts = {fit_alternative(samples, AltFamily::kExponential, fit.x_min),
                                  fit_alternative(samples, AltFamily::kLogNormal, fit.x_min)};
      if (likelihood_ratio(fit, alts) < 0.0) ++wins;
    }
    CHECK(wins >= 9);
  }
}

TEST_CASE("likelihood ratio and selection rules") {
  PowerLawFit fit;
  fit.loglik = 100.0;
  fit.n_tail = 50;
  CHECK(likelihood_ratio(fit, {100.0}) == doctest::Approx(0.0));
  CHECK(likelihood_ratio(fit, {90.0, 95.0}) == doctest::Approx(0.1));
  CHECK(likelihood_ratio(fit, {110.0, 10.0}) == doctest::Approx(-0.2));

  SUBCASE("sign rule with ties to uniform") {
    auto pl = power_law_samples(2.5, 0.01, 4000, 42);
    DaqDecision d = select_quantizer("layer", 5, pl, 4);
    CHECK(d.r_g > 0.0);
    CHECK(d.chosen == QuantKind::kLog2);
    CHECK(d.params.kind == QuantKind::kLog2);

    auto tn = truncated_normal_samples(0.5, 0.15, 4000, 43);
    DaqDecision du = select_quantizer("layer", 5, tn, 4);
    CHECK(du.r_g < 0.0);
    CHECK(du.chosen == QuantKind::kUniform);
  }
  SUBCASE("insufficient tail falls back to uniform with a sentinel") {
    std::vector<float> tiny(20, 0.5f);
    DaqDecision d = select_quantizer("layer", 3, tiny, 4);
    CHECK(d.chosen == QuantKind::kUniform);
    CHECK(std::isinf(d.r_g));
    CHECK(d.r_g < 0.0);
    CHECK(!d.fit.has_value());
  }
  SUBCASE("zeros are excluded and counted") {
    auto pl = power_law_samples(2.5, 0.01, 4000, 44);
    pl.push_back(0.0f);
    pl.push_back(0.0f);
    DaqDecision d = select_quantizer("layer", 1, pl, 4);
    CHECK(d.n_excluded == 2);
  }
}

TEST_CASE("run_daq_offline over a calibration set") {
  ToyUNet model(UNetConfig{}, 5);
  Rng rng(5, 0x99);
  for (auto& v : model.mutable_param("out.conv.weight").raw_data()) v = 0.05f * rng.normal();
  NoiseSchedule sched = NoiseSchedule::linear(100);
  CalibrationSet set = sample_calibration_fp(model, 4, 6, 31, sched);

  DaqResult r1 = run_daq_offline(set, model, 4);
  DaqResult r2 = run_daq_offline(set, model, 4);
  CHECK(r1.decisions.size() == 2 * 6);  // two post-softmax layers x 6 timesteps
  CHECK(r1.tables.count("down.1.attn.av") == 1);
  CHECK(r1.tables.count("mid.attn.av") == 1);
  // determinism
  for (const auto& [key, d] : r1.decisions) {
    const DaqDecision& o = r2.decisions.at(key);
    CHECK(d.r_g == o.r_g);
    CHECK(d.chosen == o.chosen);
  }
  // csv audit has one row per cell plus header
  std::string csv = daq_decisions_csv(r1);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);

  SUBCASE("uniform-noise activations never select log2") {
    // overwrite captures with uniform [0,1] noise
    Rng noise(77);
    CalibrationSet fake = set;
    for (auto& s : fake.samples)
      for (auto& [k, v] : s.captured) {
        Tensor t = v.clone();
        for (auto& x : t.raw_data()) x = noise.uniform();
        v = t;
      }
    DaqResult r = run_daq_offline(fake, model, 4);
    for (const auto& [key, d] : r.decisions) {
      (void)key;
      CHECK(d.chosen == QuantKind::kUniform);
    }
  }
}
