#include "diffusion/schedule.hpp"

#include <cmath>

namespace tcaq {

NoiseSchedule NoiseSchedule::linear(int T, float beta_start, float beta_end) {
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(static_cast<size_t>(T));
  s.alpha_bars.resize(static_cast<size_t>(T));
  float abar = 1.0f;
  for (int t = 0; t < T; ++t) {
    const float beta =
        T == 1 ? beta_start
               : beta_start + (beta_end - beta_start) * static_cast<float>(t) /
                                  static_cast<float>(T - 1);
    s.betas[static_cast<size_t>(t)] = beta;
    abar *= 1.0f - beta;
    s.alpha_bars[static_cast<size_t>(t)] = abar;
  }
  s.validate();
  return s;
}

float NoiseSchedule::alpha_bar(int t) const {
  if (t == -1) return 1.0f;
  if (t < 0 || t >= T) throw Error("schedule: timestep " + std::to_string(t) + " out of [0," +
                                   std::to_string(T) + ")");
  return alpha_bars[static_cast<size_t>(t)];
}

void NoiseSchedule::validate() const {
  if (T < 1 || static_cast<int>(betas.size()) != T || static_cast<int>(alpha_bars.size()) != T)
    throw Error("schedule: inconsistent sizes");
  float prev = 2.0f;
  for (int t = 0; t < T; ++t) {
    const float b = betas[static_cast<size_t>(t)];
    if (!(b > 0.0f && b < 1.0f)) throw Error("schedule: beta out of (0,1)");
    const float ab = alpha_bars[static_cast<size_t>(t)];
    if (!(ab < prev)) throw Error("schedule: alpha_bar not strictly decreasing");
    prev = ab;
  }
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.T)
    throw Error("forward_diffuse: timestep " + std::to_string(t) + " out of [0," +
                std::to_string(sched.T) + ")");
  if (x0.shape() != eps.shape())
    throw ShapeError("forward_diffuse: eps shape " + shape_str(eps.shape()) +
                     " != x0 shape " + shape_str(x0.shape()));
  const float ab = sched.alpha_bar(t);
  return axpby(std::sqrt(ab), x0, std::sqrt(1.0f - ab), eps);
}

}  // namespace tcaq
