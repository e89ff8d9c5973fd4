// tcaq command-line driver. Talks to the engine exclusively through the
// public C API in tcaq/tcaq.h.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tcaq/tcaq.h"

namespace {

struct ConfigHandle {
  tcaq_config* cfg = tcaq_config_new();
  ~ConfigHandle() { tcaq_config_free(cfg); }
};

int exit_code_for(tcaq_status s) {
  switch (s) {
    case TCAQ_OK: return 0;
    case TCAQ_ERR_CONFIG: return 2;
    case TCAQ_ERR_ARGUMENT: return 2;
    case TCAQ_ERR_NUMERIC: return 3;
    case TCAQ_ERR_MISSING_ARTIFACT: return 4;
    default: return 1;
  }
}

int report(tcaq_status s) {
  if (s != TCAQ_OK)
    std::fprintf(stderr, "tcaq: %s error: %s\n", tcaq_status_name(s), tcaq_last_error());
  return exit_code_for(s);
}

// pending key=value assignments applied to the config after --config loads
struct Override {
  std::string key, value;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tcaq: post-training quantization playground for a toy diffusion model"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<Override> overrides;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "configuration file (INI; flags override it)");
    auto opt = [&](const char* flag, const char* key, const char* help) {
      cmd->add_option_function<std::string>(
          flag, [&overrides, key](const std::string& v) { overrides.push_back({key, v}); },
          help);
    };
    opt("--seed", "run.seed", "base seed for every derived random stream");
    opt("--out", "run.out", "output directory");
    opt("--bits-w", "bits.w", "weight bit-width (2..8, or 32 for FP)");
    opt("--bits-a", "bits.a", "activation bit-width (2..8, or 32 for FP)");
    opt("--bits-s", "bits.s", "post-softmax bit-width (4, 6, 8, or 32 for FP)");
    opt("--par-rounds", "par.rounds", "progressive reconstruction rounds");
    opt("--clamp", "tcr.clamp", "scaling-vector clamp range (-1 auto, 0 off)");
    opt("--groups", "tcr.groups", "timestep groups for activation tables (0 = per step)");
    cmd->add_flag_function(
        "--no-tcr",
        [&overrides](int64_t) { overrides.push_back({"tcr.enabled", "false"}); },
        "disable timestep-channel reparameterization");
    cmd->add_flag_function(
        "--no-daq",
        [&overrides](int64_t) {
          overrides.push_back({"daq.enabled", "false"});
          overrides.push_back({"daq.force", "uniform"});
        },
        "disable adaptive post-softmax quantizer selection");
    cmd->add_flag_function(
        "--paper-scale",
        [&overrides](int64_t) { overrides.push_back({"run.paper_scale", "true"}); },
        "use the published reconstruction iteration counts");
  };

  std::string model_path, ckpt_path;
  CLI::App* train = app.add_subcommand("train", "train the toy diffusion model");
  add_common(train);
  CLI::App* quantize = app.add_subcommand("quantize", "quantize a trained checkpoint");
  add_common(quantize);
  quantize->add_option("--model", model_path, "full-precision checkpoint from train")
      ->required();
  CLI::App* sample_cmd = app.add_subcommand("sample", "generate samples from a checkpoint");
  add_common(sample_cmd);
  sample_cmd->add_option("--ckpt", ckpt_path, "checkpoint (FP or quantized)")->required();
  CLI::App* evaluate = app.add_subcommand("evaluate", "metric report for a checkpoint");
  add_common(evaluate);
  evaluate->add_option("--ckpt", ckpt_path, "checkpoint (FP or quantized)")->required();
  CLI::App* ablate = app.add_subcommand("ablate", "2^3 toggle grid ablation table");
  add_common(ablate);
  ablate->add_option("--model", model_path, "full-precision checkpoint from train")->required();
  ablate->add_option_function<std::string>(
      "--bit-settings",
      [&overrides](const std::string& v) { overrides.push_back({"ablate.bit_settings", v}); },
      "semicolon list of bit settings, e.g. W4A4S8;W4A8S8");

  CLI11_PARSE(app, argc, argv);

  ConfigHandle handle;
  if (!config_path.empty()) {
    const tcaq_status s = tcaq_config_load(handle.cfg, config_path.c_str());
    if (s != TCAQ_OK) return report(s);
  }
  for (const auto& ov : overrides) {
    const tcaq_status s = tcaq_config_set(handle.cfg, ov.key.c_str(), ov.value.c_str());
    if (s != TCAQ_OK) return report(s);
  }

  char out_dir[512] = {0};
  tcaq_config_get(handle.cfg, "run.out", out_dir, sizeof(out_dir));

  if (app.got_subcommand(train)) {
    tcaq_model* model = nullptr;
    const tcaq_status s = tcaq_train(handle.cfg, &model);
    if (s == TCAQ_OK) {
      std::printf("trained model written to %s/model.tcaq\n", out_dir);
      tcaq_model_free(model);
    }
    return report(s);
  }
  if (app.got_subcommand(quantize)) {
    tcaq_model* model = nullptr;
    const tcaq_status s = tcaq_quantize(handle.cfg, model_path.c_str(), &model);
    if (s == TCAQ_OK) {
      std::printf("quantized model written to %s/quant.tcaq (quantized=%d)\n", out_dir,
                  tcaq_model_is_quantized(model));
      tcaq_model_free(model);
    }
    return report(s);
  }
  if (app.got_subcommand(sample_cmd)) {
    const tcaq_status s = tcaq_sample(handle.cfg, ckpt_path.c_str());
    if (s == TCAQ_OK)
      std::printf("samples written to %s/samples.tcaq and %s/samples.png\n", out_dir, out_dir);
    return report(s);
  }
  if (app.got_subcommand(evaluate)) {
    const tcaq_status s = tcaq_evaluate(handle.cfg, ckpt_path.c_str());
    if (s == TCAQ_OK)
      std::printf("report written to %s/report.json and %s/report.csv\n", out_dir, out_dir);
    return report(s);
  }
  if (app.got_subcommand(ablate)) {
    const tcaq_status s = tcaq_ablate(handle.cfg, model_path.c_str());
    if (s == TCAQ_OK) std::printf("ablation table written to %s/ablation.csv\n", out_dir);
    return report(s);
  }
  return 2;
}
