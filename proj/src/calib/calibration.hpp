#pragma once

#include <map>
#include <string>
#include <vector>

#include "diffusion/sampler.hpp"
#include "diffusion/unet.hpp"

namespace tcaq {

// One (chain, timestep) cell of a calibration run.
struct CalibrationSample {
  Tensor x_t;  // sampler state entering the step at t, [1,C,H,W]
  int t = 0;
  int chain_id = 0;
  std::map<std::string, Tensor> captured;  // hooked layer inputs, per chain
  // stage boundary records for block reconstruction
  std::map<std::string, Tensor> stage_in;
  std::map<std::string, Tensor> stage_skip;  // only stages with a skip input
  std::map<std::string, Tensor> stage_out;
};

struct CalibrationSet {
  std::vector<CalibrationSample> samples;  // ordered by (chain, step index)
  std::string source;                      // "fp_model" or "quant_model(round n)"
  uint64_t seed = 0;
  int inference_steps = 0;
  std::vector<int> timesteps;  // sampling order (descending)
  Tensor final_batch;          // [chains, C, H, W] final outputs of the run
};

struct CaptureOptions {
  bool layer_inputs = true;
  bool stage_tensors = true;
};

// Runs the DDIM sampler with observation hooks on the full-precision model.
// Hooks never perturb the trajectory.
CalibrationSet sample_calibration_fp(const ToyUNet& model, int n_chains, int inference_steps,
                                     uint64_t seed, const NoiseSchedule& sched,
                                     const CaptureOptions& opts = {});

// Same, but through the quantized context; used by the progressive
// reconstruction rounds to realign calibration data.
CalibrationSet resample_calibration_quant(const ToyUNet& model, const QuantContext& qc,
                                          int n_chains, int inference_steps, uint64_t seed,
                                          int round, const NoiseSchedule& sched,
                                          const CaptureOptions& opts = {false, false});

// Activations of one hooked layer grouped by timestep (sampling order),
// concatenated over chains in ascending chain order.
std::vector<std::pair<int, Tensor>> capture_layer_stats(const CalibrationSet& set,
                                                        const std::string& layer_id);

}  // namespace tcaq
