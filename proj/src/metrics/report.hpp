#pragma once

#include <map>
#include <string>
#include <vector>

#include "metrics/metrics.hpp"

namespace tcaq {

struct ArmResult {
  std::string name;
  double fmd_value = 0.0;
  int sample_count = 0;
  uint64_t seed = 0;
};

struct AblationRow {
  std::string arm;
  int bits_w = 32, bits_a = 32, bits_s = 32;
  bool tcr = false, daq = false;
  int par_rounds = 0;
  double fmd_value = 0.0;
  double mean_sqnr_db = 0.0;
  double seconds = 0.0;  // fixed 0 in the CSV; wall-clock lives in timings
};

// Schema v1; every number is a pure function of (checkpoint, seed, config)
// except the timings block, which is informational.
struct MetricReport {
  int schema_version = 1;
  std::map<std::string, std::string> config_echo;
  std::map<std::string, LayerError> layers;
  std::vector<ArmResult> arms;
  std::vector<AblationRow> ablation;
  std::map<std::string, double> timings;
};

void emit_report(const MetricReport& report, const std::string& json_path,
                 const std::string& csv_path);
MetricReport parse_report(const std::string& json_path);

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace tcaq
