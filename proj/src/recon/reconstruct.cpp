#include "recon/reconstruct.hpp"

#include <chrono>

namespace tcaq {

RoundLog reconstruct_round(const ToyUNet& model, QuantContext& qc, const CalibrationSet& set,
                           const NoiseSchedule& sched, const ReconConfig& cfg, int iters,
                           RoundState& state, int round_index) {
  const auto t0 = std::chrono::steady_clock::now();
  RoundLog log;
  log.round = round_index;
  log.source = set.source;

  std::vector<int> sample_t;
  sample_t.reserve(set.samples.size());
  for (const auto& s : set.samples) sample_t.push_back(s.t);

  // FP reference pass once per round; quant inputs refreshed per block so
  // later blocks consume the outputs of already-finalized ones
  auto fp_io = collect_stage_io(model, nullptr, set, sched);
  for (const Block& block : partition_blocks(model)) {
    QuantContext local = qc;
    local.quantize_acts = cfg.quantize_acts_during_recon && qc.quantize_acts;
    auto quant_io = collect_stage_io(model, &local, set, sched);
    if (iters > 0) {
      log.blocks.push_back(adaround_block(model, qc, block, quant_io.at(block.stage),
                                          fp_io.at(block.stage), sample_t, cfg, iters, state,
                                          static_cast<uint64_t>(round_index) * 131 +
                                              static_cast<uint64_t>(log.blocks.size())));
    } else {
      // round-to-nearest arm: only measure
      BlockReconStats st;
      st.stage = block.stage;
      st.rtn_mse = st.start_mse = st.final_mse =
          block_output_mse(model, local, block, quant_io.at(block.stage),
                           fp_io.at(block.stage), sample_t);
      log.blocks.push_back(st);
    }
  }
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

ParOutput run_progressive_reconstruction(const ToyUNet& model, QuantContext& qc,
                                         const CalibrationSet& fp_calib,
                                         const NoiseSchedule& sched, const ReconConfig& cfg,
                                         int calib_chains, uint64_t resample_seed) {
  cfg.validate();
  ParOutput out;
  RoundState state = init_round_state(model, qc, cfg);
  out.calibration_sources.push_back(fp_calib.source);
  out.logs.push_back(
      reconstruct_round(model, qc, fp_calib, sched, cfg, cfg.init_iters, state, 0));
  for (int r = 0; r < cfg.rounds; ++r) {
    CalibrationSet aligned = resample_calibration_quant(
        model, qc, calib_chains, fp_calib.inference_steps, resample_seed + static_cast<uint64_t>(r) + 1,
        r + 1, sched, CaptureOptions{false, false});
    out.calibration_sources.push_back(aligned.source);
    out.logs.push_back(
        reconstruct_round(model, qc, aligned, sched, cfg, cfg.par_iters, state, r + 1));
  }
  return out;
}

}  // namespace tcaq
