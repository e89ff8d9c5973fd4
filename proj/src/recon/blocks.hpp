#pragma once

#include <string>
#include <vector>

#include "calib/calibration.hpp"
#include "diffusion/unet.hpp"

namespace tcaq {

// Reconstruction granularity: one block per UNet stage. Boundary layers stay
// outside every block (they are kept full precision).
struct Block {
  std::string stage;
  std::vector<std::string> layer_ids;  // registry order
  std::string input_layer;
  std::string output_layer;
};

std::vector<Block> partition_blocks(const ToyUNet& model);

// Per-sample stage boundary tensors aligned with set.samples.
struct StageIO {
  std::vector<Tensor> x_in;    // stage input
  std::vector<Tensor> skip;    // undefined tensors for stages without a skip
  std::vector<Tensor> out;     // stage output
};

// Runs the model over every calibration sample (batched per timestep) and
// records each stage's input/skip/output. qc == nullptr gives the
// full-precision reference pass.
std::map<std::string, StageIO> collect_stage_io(const ToyUNet& model, const QuantContext* qc,
                                                const CalibrationSet& set,
                                                const NoiseSchedule& sched);

}  // namespace tcaq
