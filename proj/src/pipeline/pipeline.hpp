#pragma once

#include <memory>
#include <optional>

#include "calib/calibration.hpp"
#include "daq/daq.hpp"
#include "diffusion/train.hpp"
#include "metrics/report.hpp"
#include "pipeline/config.hpp"
#include "recon/reconstruct.hpp"
#include "tcr/tcr.hpp"

namespace tcaq {

// A loaded checkpoint: the FP model plus, when quantized, everything needed
// to run the simulated low-bit model.
struct ModelBundle {
  RunConfig cfg;
  std::unique_ptr<ToyUNet> model;
  QuantContext qc;
  bool quantized = false;

  const QuantContext* qc_ptr() const { return quantized ? &qc : nullptr; }
};

struct QuantizeArtifacts {
  QuantContext qc;
  std::map<std::string, ScalingVector> scaling;  // per reparameterized layer
  std::optional<DaqResult> daq;
  std::vector<RoundLog> recon_logs;
  std::map<std::string, double> timings;  // calibration_s, daq_s, recon_s ...
};

NoiseSchedule schedule_from(const RunConfig& cfg);
UNetConfig unet_config_from(const RunConfig& cfg);

// Initialization + reconstruction, per the toggles in cfg. Does not mutate
// the model.
QuantizeArtifacts quantize_model(const ToyUNet& model, const RunConfig& cfg);

void save_bundle(const ModelBundle& bundle, const QuantizeArtifacts* artifacts,
                 const std::string& path);
ModelBundle load_bundle(const std::string& path);

// ---- commands (exit-code semantics live in the C API) ----

// trains, writes <out>/model.tcaq, returns the checkpoint path
std::string cmd_train(const RunConfig& cfg);
// quantizes, writes <out>/quant.tcaq, recon_log.json, daq_decisions.csv
std::string cmd_quantize(const RunConfig& cfg, const std::string& model_path);
// samples, writes <out>/samples.tcaq and <out>/samples.png
std::string cmd_sample(const RunConfig& cfg, const std::string& ckpt_path);
// evaluates, writes <out>/report.json and <out>/report.csv
MetricReport cmd_evaluate(const RunConfig& cfg, const std::string& ckpt_path);
// 2^3 toggle grid per bit setting, writes <out>/ablation.csv byte-stably
std::string cmd_ablate(const RunConfig& cfg, const std::string& model_path);

}  // namespace tcaq
