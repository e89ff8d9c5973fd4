#include "metrics/report.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace tcaq {

namespace {

using nlohmann::json;

// JSON cannot carry inf; encode non-finite doubles as strings
json num(double v) {
  if (std::isfinite(v)) return v;
  if (v > 0) return "+inf";
  if (v < 0) return "-inf";
  return "nan";
}

double num_back(const json& j) {
  if (j.is_number()) return j.get<double>();
  const std::string s = j.get<std::string>();
  if (s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::numeric_limits<double>::quiet_NaN();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "arm,bits_w,bits_a,bits_s,tcr,daq,par_rounds,fmd,mean_sqnr_db,seconds\n";
  for (const auto& r : rows) {
    out += r.arm + "," + std::to_string(r.bits_w) + "," + std::to_string(r.bits_a) + "," +
           std::to_string(r.bits_s) + "," + (r.tcr ? "1" : "0") + "," + (r.daq ? "1" : "0") +
           "," + std::to_string(r.par_rounds) + "," + fmt(r.fmd_value) + "," +
           fmt(r.mean_sqnr_db) + "," + fmt(r.seconds) + "\n";
  }
  return out;
}

void emit_report(const MetricReport& report, const std::string& json_path,
                 const std::string& csv_path) {
  json j;
  j["schema_version"] = report.schema_version;
  j["config"] = report.config_echo;
  json layers = json::object();
  for (const auto& [id, e] : report.layers)
    layers[id] = {{"mse", num(e.mse)}, {"sqnr_db", num(e.sqnr_db)}};
  j["layers"] = layers;
  json arms = json::array();
  for (const auto& a : report.arms)
    arms.push_back({{"name", a.name},
                    {"fmd", num(a.fmd_value)},
                    {"sample_count", a.sample_count},
                    {"seed", a.seed}});
  j["arms"] = arms;
  json abl = json::array();
  for (const auto& r : report.ablation)
    abl.push_back({{"arm", r.arm},
                   {"bits_w", r.bits_w},
                   {"bits_a", r.bits_a},
                   {"bits_s", r.bits_s},
                   {"tcr", r.tcr},
                   {"daq", r.daq},
                   {"par_rounds", r.par_rounds},
                   {"fmd", num(r.fmd_value)},
                   {"mean_sqnr_db", num(r.mean_sqnr_db)},
                   {"seconds", num(r.seconds)}});
  j["ablation"] = abl;
  j["timings"] = report.timings;

  std::ofstream os(json_path);
  if (!os) throw IoError("emit_report: cannot write '" + json_path + "'");
  os << j.dump(2) << "\n";
  if (!os) throw IoError("emit_report: write failed for '" + json_path + "'");

  if (!csv_path.empty()) {
    std::ofstream cs(csv_path);
    if (!cs) throw IoError("emit_report: cannot write '" + csv_path + "'");
    cs << ablation_csv(report.ablation);
    if (!cs) throw IoError("emit_report: write failed for '" + csv_path + "'");
  }
}

MetricReport parse_report(const std::string& json_path) {
  std::ifstream is(json_path);
  if (!is) throw MissingArtifactError("parse_report: cannot open '" + json_path + "'");
  json j = json::parse(is);
  MetricReport r;
  r.schema_version = j.at("schema_version").get<int>();
  for (const auto& [k, v] : j.at("config").items()) r.config_echo[k] = v.get<std::string>();
  for (const auto& [k, v] : j.at("layers").items())
    r.layers[k] = LayerError{num_back(v.at("mse")), num_back(v.at("sqnr_db"))};
  for (const auto& a : j.at("arms")) {
    ArmResult ar;
    ar.name = a.at("name").get<std::string>();
    ar.fmd_value = num_back(a.at("fmd"));
    ar.sample_count = a.at("sample_count").get<int>();
    ar.seed = a.at("seed").get<uint64_t>();
    r.arms.push_back(ar);
  }
  for (const auto& a : j.at("ablation")) {
    AblationRow row;
    row.arm = a.at("arm").get<std::string>();
    row.bits_w = a.at("bits_w").get<int>();
    row.bits_a = a.at("bits_a").get<int>();
    row.bits_s = a.at("bits_s").get<int>();
    row.tcr = a.at("tcr").get<bool>();
    row.daq = a.at("daq").get<bool>();
    row.par_rounds = a.at("par_rounds").get<int>();
    row.fmd_value = num_back(a.at("fmd"));
    row.mean_sqnr_db = num_back(a.at("mean_sqnr_db"));
    row.seconds = num_back(a.at("seconds"));
    r.ablation.push_back(row);
  }
  for (const auto& [k, v] : j.at("timings").items()) r.timings[k] = v.get<double>();
  return r;
}

}  // namespace tcaq
