#pragma once

#include <vector>

#include "core/tensor.hpp"

namespace tcaq {

// DDPM noise schedule; alpha_bar(-1) = 1 by convention so the final DDIM
// step lands on the clean estimate.
struct NoiseSchedule {
  int T = 100;
  std::vector<float> betas;
  std::vector<float> alpha_bars;

  static NoiseSchedule linear(int T = 100, float beta_start = 1e-4f, float beta_end = 0.02f);

  float alpha_bar(int t) const;
  void validate() const;
};

// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

}  // namespace tcaq
