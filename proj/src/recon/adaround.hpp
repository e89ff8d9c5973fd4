#pragma once

#include <map>
#include <string>

#include "diffusion/schedule.hpp"
#include "recon/blocks.hpp"

namespace tcaq {

struct ReconConfig {
  int init_iters = 2000;  // first reconstruction pass
  int par_iters = 1000;   // each progressive round; <= init_iters
  int rounds = 2;         // progressive rounds p
  int batch = 16;
  float lr = 1e-2f;
  float lambda_reg = 0.01f;
  float beta_start = 20.0f;
  float beta_end = 2.0f;
  float warmup = 0.2f;  // fraction of iterations before the regularizer kicks in
  bool quantize_acts_during_recon = true;
  float zeta = 1.1f;
  float gamma = -0.1f;
  int early_stop_patience = 200;
  uint64_t seed = 0;

  void validate() const {
    if (par_iters > init_iters && init_iters > 0)
      throw ConfigError("recon: par_iters must be <= init_iters");
    if (batch < 1) throw ConfigError("recon: batch must be >= 1");
  }
};

// Continuous rounding variables for one layer's weight.
struct LayerRounding {
  std::string layer_id;
  Tensor w_base;  // reparameterized FP weight the rounding is relative to
  QuantParams qp;
  Tensor v;
};

// Warm-started across progressive rounds.
struct RoundState {
  std::map<std::string, LayerRounding> layers;
};

struct BlockReconStats {
  std::string stage;
  double rtn_mse = 0.0;    // round-to-nearest baseline on this calibration
  double start_mse = 0.0;  // with current rounding vars, at round start
  double final_mse = 0.0;  // after optimization and binarization
  int iters_run = 0;
};

// Initializes rounding variables from the (reparameterized) weights and
// their per-channel quantizers recorded in qc.
RoundState init_round_state(const ToyUNet& model, const QuantContext& qc, const ReconConfig& cfg);

// Optimizes one block's rounding variables against the FP stage outputs and
// writes the binarized weights back into qc. Never leaves qc worse than the
// rounding it started from on this calibration data.
BlockReconStats adaround_block(const ToyUNet& model, QuantContext& qc, const Block& block,
                               const StageIO& quant_io, const StageIO& fp_io,
                               const std::vector<int>& sample_t, const ReconConfig& cfg,
                               int iters, RoundState& state, uint64_t round_tag);

// Block output MSE over all samples under the current qc weights.
double block_output_mse(const ToyUNet& model, const QuantContext& qc, const Block& block,
                        const StageIO& quant_io, const StageIO& fp_io,
                        const std::vector<int>& sample_t);

}  // namespace tcaq
