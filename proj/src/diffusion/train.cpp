#include "diffusion/train.hpp"

#include <algorithm>
#include <cmath>

namespace tcaq {

void Adam::step(std::vector<Tensor>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].data().size(), 0.0f);
      v_[i].assign(params[i].data().size(), 0.0f);
    }
  }
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    auto& w = params[i].raw_data();
    const auto& g = params[i].grad();
    for (size_t j = 0; j < w.size(); ++j) {
      m_[i][j] = beta1_ * m_[i][j] + (1.0f - beta1_) * g[j];
      v_[i][j] = beta2_ * v_[i][j] + (1.0f - beta2_) * g[j] * g[j];
      const float mhat = m_[i][j] / bc1;
      const float vhat = v_[i][j] / bc2;
      w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

TrainStats train_toy(ToyUNet& model, const ToyDataset& dataset, const NoiseSchedule& sched,
                     const TrainConfig& cfg) {
  if (cfg.steps < 1) throw ConfigError("train_toy: steps must be >= 1");
  Rng rng(cfg.seed, /*stream=*/0x41);
  auto params = model.trainable_params();
  for (auto& p : params) p.set_requires_grad(true);
  Adam opt(cfg.lr);

  const int side = model.config().image_size;
  std::vector<float> losses;
  losses.reserve(static_cast<size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int> idx(static_cast<size_t>(cfg.batch));
    for (auto& i : idx) i = rng.uniform_int(dataset.n);
    std::vector<int> ts(static_cast<size_t>(cfg.batch));
    for (auto& t : ts) t = rng.uniform_int(sched.T);
    Tensor x0 = dataset_batch(dataset, idx);
    Tensor eps({cfg.batch, 1, side, side}, 0.0f);
    for (auto& v : eps.raw_data()) v = rng.normal();
    // per-sample closed-form noising
    Tensor x_t(x0.shape(), 0.0f);
    {
      auto& xt = x_t.raw_data();
      const int64_t per = static_cast<int64_t>(side) * side;
      for (int i = 0; i < cfg.batch; ++i) {
        const float ab = sched.alpha_bar(ts[static_cast<size_t>(i)]);
        const float a = std::sqrt(ab), b = std::sqrt(1.0f - ab);
        for (int64_t j = 0; j < per; ++j) {
          const size_t k = static_cast<size_t>(i * per + j);
          xt[k] = a * x0.data()[k] + b * eps.data()[k];
        }
      }
    }

    Tape tape;
    ForwardEnv env;
    env.tape = &tape;
    Tensor pred = model.forward(x_t, ts, env);
    Tensor loss = mse_loss(pred, eps, &tape);
    const float loss_val = loss.item();
    if (!std::isfinite(loss_val))
      throw NumericError("train_toy: loss diverged (non-finite) at step " + std::to_string(step));
    losses.push_back(loss_val);

    for (auto& p : params) p.zero_grad();
    backward(tape, loss);
    opt.step(params);
  }
  for (auto& p : params) p.set_requires_grad(false);

  TrainStats stats;
  stats.steps = cfg.steps;
  const size_t window = std::min<size_t>(100, losses.size());
  float acc = 0.0f;
  for (size_t i = 0; i < window; ++i) acc += losses[i];
  stats.initial_avg = acc / static_cast<float>(window);
  acc = 0.0f;
  for (size_t i = losses.size() - window; i < losses.size(); ++i) acc += losses[i];
  stats.final_avg = acc / static_cast<float>(window);
  return stats;
}

}  // namespace tcaq
