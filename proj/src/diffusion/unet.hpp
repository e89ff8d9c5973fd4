#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/checkpoint.hpp"
#include "core/tensor.hpp"
#include "quant/qcontext.hpp"

namespace tcaq {

enum class LayerKind { kConv, kLinear, kNorm, kPostSoftmax, kActPoint };

struct LayerInfo {
  std::string id;
  LayerKind kind = LayerKind::kConv;
  bool is_boundary = false;  // kept full precision
  int in_channels = 0;
  int out_channels = 0;
  std::string stage;  // "down.0" ... "up.1", empty for boundary layers

  bool quantizable() const {
    return !is_boundary && (kind == LayerKind::kConv || kind == LayerKind::kLinear);
  }
  // carries an activation quantizer (weighted layers, matmul operands,
  // post-softmax probabilities)
  bool act_quantized() const {
    return quantizable() || kind == LayerKind::kActPoint || kind == LayerKind::kPostSoftmax;
  }
};

// Observation hooks; they never alter the computation.
struct Capture {
  std::function<void(const std::string& layer_id, int t, const Tensor& input)> on_layer_input;
  std::function<void(const std::string& stage, int t, const Tensor& x, const Tensor* skip)>
      on_stage_input;
  std::function<void(const std::string& stage, int t, const Tensor& out)> on_stage_output;
};

struct ForwardEnv {
  Tape* tape = nullptr;
  const QuantContext* qc = nullptr;
  Capture* capture = nullptr;
  // learned-rounding soft weights, keyed "<layer>.weight"; wins over qc
  const std::unordered_map<std::string, Tensor>* weight_override = nullptr;
  int t = -1;  // timestep tag for activation tables and capture
};

struct UNetConfig {
  int in_channels = 1;
  int base_channels = 16;
  int channel_mult = 2;
  int temb_dim = 32;
  int gn_groups = 4;
  int image_size = 8;
};

// Fixed-topology noise predictor: five stages (down.0, down.1, mid, up.0,
// up.1) of GN/SiLU/conv residual blocks with timestep-embedding injection,
// single-head self-attention in down.1 and mid, and concatenation skips into
// the up stages. Input/output convs and the embedding MLP stay full
// precision.
class ToyUNet {
 public:
  ToyUNet(UNetConfig cfg, uint64_t seed);

  const UNetConfig& config() const { return cfg_; }

  const Tensor& param(const std::string& name) const;
  Tensor& mutable_param(const std::string& name);
  const std::vector<std::string>& param_names() const { return param_order_; }
  std::vector<Tensor> trainable_params() const;

  const std::vector<LayerInfo>& layers() const { return layers_; }
  const LayerInfo& layer(const std::string& id) const;
  static const std::vector<std::string>& stage_names();
  // the stage whose output is concatenated into this stage's input
  static std::optional<std::string> skip_source(const std::string& stage);

  Tensor forward(const Tensor& x, const std::vector<int>& ts, const ForwardEnv& env) const;
  Tensor forward_stage(const std::string& stage, const Tensor& x, const Tensor* skip,
                       const Tensor& emb, const ForwardEnv& env) const;
  // embedding MLP output for a batch of timesteps (full precision path)
  Tensor time_embedding(const std::vector<int>& ts, Tape* tape = nullptr) const;

  void save_params(TensorArchive& ar, const std::string& prefix = "model/") const;
  void load_params(const TensorArchive& ar, const std::string& prefix = "model/");

 private:
  struct StageSpec {
    std::string name;
    int cin = 0, cout = 0;
    bool attn = false;
  };

  Tensor apply_layer(const std::string& id, Tensor x, const ForwardEnv& env) const;
  Tensor quantize_activation(const std::string& id, Tensor x, const ForwardEnv& env) const;
  Tensor attention(const std::string& prefix, const Tensor& x, const ForwardEnv& env) const;
  Tensor norm(const std::string& id, const Tensor& x, const ForwardEnv& env) const;

  void add_param(const std::string& name, Tensor t);
  void add_conv(const std::string& id, int cin, int cout, int k, bool boundary,
                const std::string& stage, Rng& rng, bool zero_init = false);
  void add_linear(const std::string& id, int cin, int cout, bool boundary,
                  const std::string& stage, Rng& rng, bool zero_init = false);
  void add_norm(const std::string& id, int channels, bool boundary, const std::string& stage);

  UNetConfig cfg_;
  std::vector<StageSpec> stages_;
  std::vector<LayerInfo> layers_;
  std::map<std::string, size_t> layer_index_;
  std::map<std::string, Tensor> params_;
  std::vector<std::string> param_order_;
};

}  // namespace tcaq
