#include "calib/calibration.hpp"

#include <algorithm>

namespace tcaq {

namespace {

// row slice [n, ...] -> [1, ...]
Tensor slice_row(const Tensor& batch, int row) {
  Shape s = batch.shape();
  const int64_t per = numel(s) / s[0];
  Shape out_shape = s;
  out_shape[0] = 1;
  std::vector<float> data(static_cast<size_t>(per));
  std::copy_n(&batch.data()[static_cast<size_t>(row) * per], per, data.data());
  return Tensor(std::move(out_shape), std::move(data));
}

CalibrationSet run_calibration(const ToyUNet& model, const QuantContext* qc, int n_chains,
                               int inference_steps, uint64_t seed, const std::string& source,
                               const NoiseSchedule& sched, const CaptureOptions& opts) {
  if (n_chains < 1) throw Error("calibration: need at least one chain");
  CalibrationSet set;
  set.source = source;
  set.seed = seed;
  set.inference_steps = inference_steps;
  set.timesteps = ddim_timesteps(sched.T, inference_steps);

  // samples indexed [chain][step]
  set.samples.resize(static_cast<size_t>(n_chains) * inference_steps);
  auto sample_at = [&](int chain, int step) -> CalibrationSample& {
    return set.samples[static_cast<size_t>(chain) * inference_steps + step];
  };

  Rng rng(seed, /*stream=*/0x31);  // same stream as sample(): identical x_T draws
  const int side = model.config().image_size;
  Tensor x({n_chains, model.config().in_channels, side, side}, 0.0f);
  for (auto& v : x.raw_data()) v = rng.normal();

  int step_idx = 0;
  Capture cap;
  if (opts.layer_inputs) {
    cap.on_layer_input = [&](const std::string& layer, int t, const Tensor& input) {
      for (int c = 0; c < n_chains; ++c) {
        CalibrationSample& s = sample_at(c, step_idx);
        (void)t;
        s.captured.emplace(layer, slice_row(input, c));
      }
    };
  }
  if (opts.stage_tensors) {
    cap.on_stage_input = [&](const std::string& stage, int t, const Tensor& sx,
                             const Tensor* skip) {
      (void)t;
      for (int c = 0; c < n_chains; ++c) {
        CalibrationSample& s = sample_at(c, step_idx);
        s.stage_in.emplace(stage, slice_row(sx, c));
        if (skip) s.stage_skip.emplace(stage, slice_row(*skip, c));
      }
    };
    cap.on_stage_output = [&](const std::string& stage, int t, const Tensor& out) {
      (void)t;
      for (int c = 0; c < n_chains; ++c)
        sample_at(c, step_idx).stage_out.emplace(stage, slice_row(out, c));
    };
  }

  ForwardEnv env;
  env.qc = qc;
  env.capture =
      (opts.layer_inputs || opts.stage_tensors) ? &cap : nullptr;
  for (size_t k = 0; k < set.timesteps.size(); ++k) {
    const int t = set.timesteps[k];
    const int t_prev = (k + 1 < set.timesteps.size()) ? set.timesteps[k + 1] : -1;
    step_idx = static_cast<int>(k);
    for (int c = 0; c < n_chains; ++c) {
      CalibrationSample& s = sample_at(c, step_idx);
      s.t = t;
      s.chain_id = c;
      s.x_t = slice_row(x, c);
    }
    x = ddim_step(model, x, t, t_prev, 0.0f, sched, env);
  }
  set.final_batch = clip_values(x, -1.5f, 1.5f);

  // every (layer, timestep) cell used downstream must be populated
  if (opts.layer_inputs) {
    for (const auto& s : set.samples) {
      if (s.captured.empty())
        throw Error("calibration: empty capture cell at t=" + std::to_string(s.t) + " chain " +
                    std::to_string(s.chain_id));
    }
  }
  return set;
}

}  // namespace

CalibrationSet sample_calibration_fp(const ToyUNet& model, int n_chains, int inference_steps,
                                     uint64_t seed, const NoiseSchedule& sched,
                                     const CaptureOptions& opts) {
  return run_calibration(model, nullptr, n_chains, inference_steps, seed, "fp_model", sched, opts);
}

CalibrationSet resample_calibration_quant(const ToyUNet& model, const QuantContext& qc,
                                          int n_chains, int inference_steps, uint64_t seed,
                                          int round, const NoiseSchedule& sched,
                                          const CaptureOptions& opts) {
  return run_calibration(model, &qc, n_chains, inference_steps, seed,
                         "quant_model(round " + std::to_string(round) + ")", sched, opts);
}

std::vector<std::pair<int, Tensor>> capture_layer_stats(const CalibrationSet& set,
                                                        const std::string& layer_id) {
  std::vector<std::pair<int, Tensor>> out;
  for (int t : set.timesteps) {
    std::vector<const Tensor*> rows;
    for (const auto& s : set.samples) {
      if (s.t != t) continue;
      auto it = s.captured.find(layer_id);
      if (it == s.captured.end()) {
        std::string known;
        for (const auto& [k, v] : s.captured) known += (known.empty() ? "" : ", ") + k;
        throw Error("capture_layer_stats: layer '" + layer_id +
                    "' not hooked; captured layers: " + known);
      }
      rows.push_back(&it->second);
    }
    if (rows.empty())
      throw Error("capture_layer_stats: no samples at t=" + std::to_string(t));
    Shape s = rows[0]->shape();
    const int64_t per = numel(s);
    s[0] = static_cast<int>(rows.size());
    std::vector<float> data(static_cast<size_t>(per) * rows.size());
    for (size_t i = 0; i < rows.size(); ++i)
      std::copy_n(rows[i]->data().data(), per, &data[i * static_cast<size_t>(per)]);
    out.emplace_back(t, Tensor(std::move(s), std::move(data)));
  }
  return out;
}

}  // namespace tcaq
