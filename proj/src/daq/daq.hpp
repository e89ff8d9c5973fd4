#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "calib/calibration.hpp"
#include "daq/powerlaw.hpp"
#include "quant/qcontext.hpp"

namespace tcaq {

// Quantizer choice for one (post-softmax layer, timestep) cell.
struct DaqDecision {
  std::string layer_id;
  int t = 0;
  double r_g = 0.0;  // -inf when the tail was insufficient
  QuantKind chosen = QuantKind::kUniform;
  std::optional<PowerLawFit> fit;
  std::map<std::string, double> alt_logliks;
  int n_excluded = 0;  // zeros dropped before fitting
  QuantParams params;  // searched with the chosen kind
};

// log2 iff r_g > 0; ties and fit failures go to uniform
DaqDecision select_quantizer(const std::string& layer_id, int t,
                             const std::vector<float>& cell_samples, int bits,
                             int min_tail = 50, int max_fit_samples = 16384);

struct DaqResult {
  std::map<std::pair<std::string, int>, DaqDecision> decisions;
  // per-layer table in runtime form (one group per timestep, mixed kinds)
  std::map<std::string, TimestepQuantTable> tables;
};

// Fits every (post-softmax layer, timestep) cell of the calibration set.
// Runs offline over captured activations only.
DaqResult run_daq_offline(const CalibrationSet& set, const ToyUNet& model, int bits,
                          int min_tail = 50);

// audit dump, one row per cell
std::string daq_decisions_csv(const DaqResult& result);

}  // namespace tcaq
