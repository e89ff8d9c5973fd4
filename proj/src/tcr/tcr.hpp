#pragma once

#include <optional>
#include <string>
#include <vector>

#include "calib/calibration.hpp"
#include "diffusion/unet.hpp"
#include "quant/qcontext.hpp"

namespace tcaq {

// Per-timestep, per-input-channel absolute activation maxima of one layer.
struct ChannelStats {
  std::string layer_id;
  std::vector<int> timesteps;               // sampling order
  int channels = 0;
  std::vector<std::vector<float>> maxima;   // [timestep][channel], >= 0
};

// Per-input-channel reparameterization factors with their per-timestep
// provenance kept for auditing.
struct ScalingVector {
  std::string layer_id;
  std::vector<float> r;                     // r^s, > 0
  std::vector<std::vector<float>> r_t;      // [timestep][channel]
  std::vector<float> s_tar;                 // [timestep]
  std::optional<float> clamp_range;
};

ChannelStats collect_channel_maxima(const CalibrationSet& set, const ToyUNet& model,
                                    const std::string& layer_id);

// min over channels of the per-channel maxima at one timestep, floored at
// 1e-8 so dead channels cannot produce infinities
float compute_target_range(const ChannelStats& stats, int t_index);

// r^t_d = M[t][d] / s_tar^t ; r^s_d = sum_t r^t_d M[t][d] / sum_t M[t][d]
ScalingVector compute_scaling_vector(const ChannelStats& stats);

// clips r elementwise to [1/r_tru, r_tru]; r_tru must be >= 1
ScalingVector clamp_scaling(ScalingVector sv, float r_tru);

// Rewrites the layer weight into qc (input channels scaled by r) and records
// the inference-time input division. Layer output is preserved in FP.
void apply_reparam(const ToyUNet& model, QuantContext& qc, const ScalingVector& sv);

// per-channel maxima after reparameterization (exact: max|x/r| = max|x| / r)
ChannelStats reparamed_stats(const ChannelStats& stats, const ScalingVector& sv);

// mean over timesteps of max_d M[t][d] / min_d M[t][d] (floored)
double mean_channel_spread(const ChannelStats& stats);

// Activation quantizer table for one layer: the inference timesteps are
// partitioned into G contiguous near-equal groups, each with MSE-searched
// uniform params over that group's (already rescaled) activations.
TimestepQuantTable build_timestep_table(const CalibrationSet& set, const ToyUNet& model,
                                        const std::string& layer_id, int bits, int groups,
                                        const QuantContext* qc = nullptr,
                                        int max_samples_per_group = 65536);

}  // namespace tcaq
