#pragma once

#include "recon/adaround.hpp"

namespace tcaq {

struct RoundLog {
  int round = 0;            // 0 = initial reconstruction
  std::string source;       // calibration source tag
  std::vector<BlockReconStats> blocks;
  double seconds = 0.0;
};

// One reconstruction pass: blocks in topological order, each optimized
// against FP stage outputs with inputs produced by the partially quantized
// model (earlier blocks already finalized).
RoundLog reconstruct_round(const ToyUNet& model, QuantContext& qc, const CalibrationSet& set,
                           const NoiseSchedule& sched, const ReconConfig& cfg, int iters,
                           RoundState& state, int round_index);

struct ParOutput {
  std::vector<RoundLog> logs;
  std::vector<std::string> calibration_sources;  // exactly [fp, q_0, ..., q_{p-1}]
};

// Progressive loop: initial reconstruction on the given (FP-sampled)
// calibration set, then `cfg.rounds` rounds each re-sampling calibration from
// the current quantized model and re-optimizing with cfg.par_iters
// (warm-started rounding variables).
ParOutput run_progressive_reconstruction(const ToyUNet& model, QuantContext& qc,
                                         const CalibrationSet& fp_calib,
                                         const NoiseSchedule& sched, const ReconConfig& cfg,
                                         int calib_chains, uint64_t resample_seed);

}  // namespace tcaq
