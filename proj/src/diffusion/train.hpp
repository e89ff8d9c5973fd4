#pragma once

#include "diffusion/dataset.hpp"
#include "diffusion/schedule.hpp"
#include "diffusion/unet.hpp"

namespace tcaq {

// Plain Adam over an ordered parameter list; state is positional so the
// update sequence is deterministic.
class Adam {
 public:
  Adam(float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Tensor>& params);
  void set_lr(float lr) { lr_ = lr; }

 private:
  float lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct TrainConfig {
  int steps = 3000;
  float lr = 1e-3f;
  int batch = 32;
  uint64_t seed = 7;
};

struct TrainStats {
  float initial_avg = 0.0f;  // mean loss over the first 100 steps
  float final_avg = 0.0f;    // mean loss over the last 100 steps
  int steps = 0;
};

// Noise-prediction MSE training; mutates the model parameters in place.
TrainStats train_toy(ToyUNet& model, const ToyDataset& dataset, const NoiseSchedule& sched,
                     const TrainConfig& cfg);

}  // namespace tcaq
