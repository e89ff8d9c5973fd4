#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "quant/quant.hpp"

namespace tcaq {

// Per-layer activation quantization table: inference timesteps (in sampling
// order) partitioned into contiguous groups, one QuantParams per group. A
// post-softmax layer driven by per-timestep quantizer selection is the G = T
// case with mixed kinds.
struct TimestepQuantTable {
  std::string layer_id;
  std::vector<int> timesteps;      // sampling order (descending t)
  std::vector<int> group_of;       // same length; group index per timestep
  std::vector<QuantParams> group_params;

  int group_count() const { return static_cast<int>(group_params.size()); }

  const QuantParams* lookup(int t) const {
    for (size_t i = 0; i < timesteps.size(); ++i)
      if (timesteps[i] == t) return &group_params[static_cast<size_t>(group_of[i])];
    return nullptr;
  }
};

// Everything that turns the FP model into the (simulated) quantized model:
// rewritten weights, per-layer input rescaling, and activation quantizers.
// The FP model object itself is never mutated.
struct QuantContext {
  std::unordered_map<std::string, Tensor> weights;  // "<layer>.weight" replacements
  std::unordered_map<std::string, QuantParams> weight_qp;
  std::unordered_map<std::string, Tensor> input_recip;  // 1/r^s per layer, shape [C]
  std::unordered_map<std::string, TimestepQuantTable> act;
  bool quantize_acts = true;
  int bits_w = 32, bits_a = 32, bits_s = 32;

  bool has_weight(const std::string& layer_id) const {
    return weights.count(layer_id + ".weight") != 0;
  }
};

}  // namespace tcaq
