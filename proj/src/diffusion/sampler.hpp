#pragma once

#include <vector>

#include "diffusion/schedule.hpp"
#include "diffusion/unet.hpp"

namespace tcaq {

// Uniform-stride DDIM sub-sequence in sampling order (largest t first,
// ending at 0). steps must divide into T.
std::vector<int> ddim_timesteps(int T, int steps);

// One DDIM update x_t -> x_{t_prev}; t_prev = -1 denotes the final hop onto
// the clean estimate. eta > 0 requires a noise source.
Tensor ddim_step(const ToyUNet& model, const Tensor& x_t, int t, int t_prev, float eta,
                 const NoiseSchedule& sched, const ForwardEnv& env, Rng* noise_rng = nullptr);

// n chains sampled in lockstep (every chain is at the same timestep), so
// hooks see batched activations tagged with a single t.
Tensor sample(const ToyUNet& model, int n, int inference_steps, uint64_t seed,
              const NoiseSchedule& sched, const QuantContext* qc = nullptr,
              Capture* capture = nullptr);

}  // namespace tcaq
