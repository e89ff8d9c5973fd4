#include "pipeline/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace tcaq {

namespace {

std::string fmt_float(float v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

float parse_float(const std::string& s) {
  try {
    size_t pos = 0;
    const float v = std::stof(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad float '" + s + "'");
  }
}

int parse_int(const std::string& s) {
  try {
    size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer '" + s + "'");
  }
}

uint64_t parse_u64(const std::string& s) {
  try {
    size_t pos = 0;
    const uint64_t v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad seed '" + s + "'");
  }
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config: bad boolean '" + s + "'");
}

ConfigField f_u64(const std::string& key, uint64_t RunConfig::* m) {
  return {key, [m](const RunConfig& c) { return std::to_string(c.*m); },
          [m](RunConfig& c, const std::string& v) { c.*m = parse_u64(v); }};
}
ConfigField f_int(const std::string& key, int RunConfig::* m) {
  return {key, [m](const RunConfig& c) { return std::to_string(c.*m); },
          [m](RunConfig& c, const std::string& v) { c.*m = parse_int(v); }};
}
ConfigField f_float(const std::string& key, float RunConfig::* m) {
  return {key, [m](const RunConfig& c) { return fmt_float(c.*m); },
          [m](RunConfig& c, const std::string& v) { c.*m = parse_float(v); }};
}
ConfigField f_bool(const std::string& key, bool RunConfig::* m) {
  return {key, [m](const RunConfig& c) { return (c.*m) ? "true" : "false"; },
          [m](RunConfig& c, const std::string& v) { c.*m = parse_bool(v); }};
}
ConfigField f_str(const std::string& key, std::string RunConfig::* m) {
  return {key, [m](const RunConfig& c) { return c.*m; },
          [m](RunConfig& c, const std::string& v) { c.*m = v; }};
}

}  // namespace

const std::vector<ConfigField>& config_schema() {
  static const std::vector<ConfigField> schema = {
      f_u64("run.seed", &RunConfig::seed),
      f_str("run.out", &RunConfig::out_dir),
      f_bool("run.paper_scale", &RunConfig::paper_scale),
      f_int("model.base_channels", &RunConfig::base_channels),
      f_int("model.channel_mult", &RunConfig::channel_mult),
      f_int("model.temb_dim", &RunConfig::temb_dim),
      f_int("model.gn_groups", &RunConfig::gn_groups),
      f_int("model.image_size", &RunConfig::image_size),
      f_int("diffusion.train_timesteps", &RunConfig::train_timesteps),
      f_int("diffusion.inference_steps", &RunConfig::inference_steps),
      f_int("dataset.size", &RunConfig::dataset_size),
      f_int("train.steps", &RunConfig::train_steps),
      f_float("train.lr", &RunConfig::train_lr),
      f_int("train.batch", &RunConfig::train_batch),
      f_int("bits.w", &RunConfig::bits_w),
      f_int("bits.a", &RunConfig::bits_a),
      f_int("bits.s", &RunConfig::bits_s),
      f_bool("tcr.enabled", &RunConfig::tcr_enabled),
      f_int("tcr.groups", &RunConfig::tcr_groups),
      f_float("tcr.clamp", &RunConfig::tcr_clamp),
      f_bool("daq.enabled", &RunConfig::daq_enabled),
      f_str("daq.force", &RunConfig::daq_force),
      f_int("daq.min_tail", &RunConfig::daq_min_tail),
      f_int("par.rounds", &RunConfig::par_rounds),
      f_int("recon.init_iters", &RunConfig::recon_init_iters),
      f_int("recon.par_iters", &RunConfig::recon_par_iters),
      f_int("recon.batch", &RunConfig::recon_batch),
      f_float("recon.lr", &RunConfig::recon_lr),
      f_float("recon.lambda", &RunConfig::recon_lambda),
      f_float("recon.beta_start", &RunConfig::recon_beta_start),
      f_float("recon.beta_end", &RunConfig::recon_beta_end),
      f_bool("recon.quant_acts", &RunConfig::recon_quant_acts),
      f_int("calib.chains", &RunConfig::calib_chains),
      f_int("eval.samples", &RunConfig::eval_samples),
      f_str("ablate.bit_settings", &RunConfig::ablate_bit_settings),
  };
  return schema;
}

std::string config_get(const RunConfig& cfg, const std::string& key) {
  for (const auto& f : config_schema())
    if (f.key == key) return f.get(cfg);
  throw ConfigError("config: unknown key '" + key + "'");
}

void config_set(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : config_schema()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

void RunConfig::validate() const {
  auto bits_ok = [](int b) { return b == 32 || (b >= 2 && b <= 8); };
  if (!bits_ok(bits_w)) throw ConfigError("config: bits.w must be in {2..8, 32}");
  if (!bits_ok(bits_a)) throw ConfigError("config: bits.a must be in {2..8, 32}");
  if (bits_s != 32 && bits_s != 4 && bits_s != 6 && bits_s != 8)
    throw ConfigError("config: bits.s must be in {4, 6, 8, 32}");
  if (inference_steps < 1 || inference_steps > train_timesteps)
    throw ConfigError("config: inference_steps must be in [1, train_timesteps]");
  if (daq_force != "auto" && daq_force != "uniform" && daq_force != "log2")
    throw ConfigError("config: daq.force must be auto, uniform or log2");
  if (par_rounds < 0) throw ConfigError("config: par.rounds must be >= 0");
  if (calib_chains < 1) throw ConfigError("config: calib.chains must be >= 1");
  if (tcr_groups < 0) throw ConfigError("config: tcr.groups must be >= 0");
}

float RunConfig::resolved_clamp() const {
  if (tcr_clamp < 0.0f) return bits_w <= 4 ? 5.0f : 0.0f;
  return tcr_clamp;
}

int RunConfig::resolved_tcr_groups() const {
  return tcr_groups == 0 ? inference_steps : std::min(tcr_groups, inference_steps);
}

std::string emit_config(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : config_schema()) {
    const auto dot = f.key.find('.');
    const std::string sec = f.key.substr(0, dot);
    const std::string name = f.key.substr(dot + 1);
    if (sec != section) {
      if (!out.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += name + " = " + f.get(cfg) + "\n";
  }
  return out;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    // strip comments and whitespace
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: bad section header at line " + std::to_string(lineno));
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at line " + std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    config_set(cfg, section.empty() ? key : section + "." + key, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifactError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

void save_config_file(const RunConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("config: cannot write '" + path + "'");
  os << emit_config(cfg);
  if (!os) throw IoError("config: write failed for '" + path + "'");
}

}  // namespace tcaq
