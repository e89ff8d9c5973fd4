#include "diffusion/sampler.hpp"

#include <cmath>

namespace tcaq {

std::vector<int> ddim_timesteps(int T, int steps) {
  if (steps < 1 || steps > T)
    throw Error("ddim_timesteps: steps must be in [1, T]");
  const int stride = T / steps;
  std::vector<int> ts(static_cast<size_t>(steps));
  for (int i = 0; i < steps; ++i) ts[static_cast<size_t>(i)] = (steps - 1 - i) * stride;
  return ts;
}

Tensor ddim_step(const ToyUNet& model, const Tensor& x_t, int t, int t_prev, float eta,
                 const NoiseSchedule& sched, const ForwardEnv& env, Rng* noise_rng) {
  if (!(t > t_prev && t_prev >= -1))
    throw Error("ddim_step: need t > t_prev >= -1, got t=" + std::to_string(t) +
                " t_prev=" + std::to_string(t_prev));
  if (eta < 0.0f || eta > 1.0f) throw ConfigError("ddim_step: eta must be in [0,1]");
  if (eta > 0.0f && !noise_rng)
    throw ConfigError("ddim_step: eta > 0 needs a noise source");

  ForwardEnv step_env = env;
  step_env.t = t;
  std::vector<int> ts(static_cast<size_t>(x_t.dim(0)), t);
  Tensor eps = model.forward(x_t, ts, step_env);

  const float ab_t = sched.alpha_bar(t);
  const float ab_p = sched.alpha_bar(t_prev);
  const float sqrt_ab_t = std::sqrt(ab_t);
  // x0 estimate, then re-noise toward t_prev
  Tensor x0 = axpby(1.0f / sqrt_ab_t, x_t, -std::sqrt(1.0f - ab_t) / sqrt_ab_t, eps);
  float sigma = 0.0f;
  if (eta > 0.0f && t_prev >= 0)
    sigma = eta * std::sqrt((1.0f - ab_p) / (1.0f - ab_t)) * std::sqrt(1.0f - ab_t / ab_p);
  const float dir = std::sqrt(std::max(0.0f, 1.0f - ab_p - sigma * sigma));
  Tensor x_prev = axpby(std::sqrt(ab_p), x0, dir, eps);
  if (sigma > 0.0f) {
    Tensor noise(x_prev.shape(), 0.0f);
    for (auto& v : noise.raw_data()) v = noise_rng->normal();
    x_prev = axpby(1.0f, x_prev, sigma, noise);
  }
  for (float v : x_prev.data())
    if (!std::isfinite(v))
      throw NumericError("ddim_step: non-finite state at t=" + std::to_string(t));
  return x_prev;
}

Tensor sample(const ToyUNet& model, int n, int inference_steps, uint64_t seed,
              const NoiseSchedule& sched, const QuantContext* qc, Capture* capture) {
  const int side = model.config().image_size;
  if (n == 0) return Tensor({0, model.config().in_channels, side, side}, 0.0f);
  Rng rng(seed, /*stream=*/0x31);
  Tensor x({n, model.config().in_channels, side, side}, 0.0f);
  for (auto& v : x.raw_data()) v = rng.normal();

  ForwardEnv env;
  env.qc = qc;
  env.capture = capture;
  const auto ts = ddim_timesteps(sched.T, inference_steps);
  for (size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const int t_prev = (k + 1 < ts.size()) ? ts[k + 1] : -1;
    x = ddim_step(model, x, t, t_prev, 0.0f, sched, env);
  }
  return clip_values(x, -1.5f, 1.5f);
}

}  // namespace tcaq
