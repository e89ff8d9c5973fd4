#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "core/errors.hpp"

namespace tcaq {

// Full run configuration. 32 in a bits field means full precision for that
// class. tcr.groups = 0 resolves to one group per inference timestep;
// tcr.clamp = -1 resolves to 5 when bits.w <= 4 and off otherwise.
struct RunConfig {
  uint64_t seed = 7;
  std::string out_dir = "out";

  int base_channels = 16;
  int channel_mult = 2;
  int temb_dim = 32;
  int gn_groups = 4;
  int image_size = 8;

  int train_timesteps = 100;  // T
  int inference_steps = 20;

  int dataset_size = 2048;

  int train_steps = 3000;
  float train_lr = 1e-3f;
  int train_batch = 32;

  int bits_w = 4;
  int bits_a = 4;
  int bits_s = 8;

  bool tcr_enabled = true;
  int tcr_groups = 0;
  float tcr_clamp = -1.0f;

  bool daq_enabled = true;
  std::string daq_force = "auto";  // auto | uniform | log2
  int daq_min_tail = 50;

  int par_rounds = 2;

  int recon_init_iters = 2000;
  int recon_par_iters = 1000;
  int recon_batch = 16;
  float recon_lr = 1e-2f;
  float recon_lambda = 0.01f;
  float recon_beta_start = 20.0f;
  float recon_beta_end = 2.0f;
  bool recon_quant_acts = true;

  int calib_chains = 32;
  int eval_samples = 512;

  bool paper_scale = false;  // restores 20000/10000 reconstruction iterations
  std::string ablate_bit_settings;  // e.g. "W4A4S8;W4A8S8"; empty = bits.* only

  void validate() const;
  // clamp resolution rule
  float resolved_clamp() const;
  int resolved_tcr_groups() const;
  int resolved_init_iters() const { return paper_scale ? 20000 : recon_init_iters; }
  int resolved_par_iters() const { return paper_scale ? 10000 : recon_par_iters; }
};

struct ConfigField {
  std::string key;  // "section.name"
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<ConfigField>& config_schema();

std::string config_get(const RunConfig& cfg, const std::string& key);
void config_set(RunConfig& cfg, const std::string& key, const std::string& value);

// canonical INI text; parse(emit(cfg)) == cfg
std::string emit_config(const RunConfig& cfg);
RunConfig parse_config(const std::string& text);
RunConfig load_config_file(const std::string& path);
void save_config_file(const RunConfig& cfg, const std::string& path);

}  // namespace tcaq
