#include "daq/daq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace tcaq {

namespace {

std::vector<float> stride_subsample(const std::vector<float>& v, int cap) {
  if (static_cast<int>(v.size()) <= cap) return v;
  std::vector<float> out;
  out.reserve(static_cast<size_t>(cap));
  const size_t stride = v.size() / static_cast<size_t>(cap);
  for (size_t i = 0; i < v.size() && out.size() < static_cast<size_t>(cap); i += stride)
    out.push_back(v[i]);
  return out;
}

}  // namespace

DaqDecision select_quantizer(const std::string& layer_id, int t,
                             const std::vector<float>& cell_samples, int bits, int min_tail,
                             int max_fit_samples) {
  DaqDecision d;
  d.layer_id = layer_id;
  d.t = t;

  std::vector<float> positive;
  positive.reserve(cell_samples.size());
  for (float v : cell_samples) {
    if (v > 0.0f)
      positive.push_back(v);
    else
      ++d.n_excluded;
  }
  positive = stride_subsample(positive, max_fit_samples);

  try {
    PowerLawFit fit = fit_power_law(positive, min_tail);
    std::vector<double> alts;
    for (AltFamily fam : {AltFamily::kExponential, AltFamily::kLogNormal}) {
      const double ll = fit_alternative(positive, fam, fit.x_min);
      d.alt_logliks[alt_family_name(fam)] = ll;
      alts.push_back(ll);
    }
    d.r_g = likelihood_ratio(fit, alts);
    d.fit = fit;
    d.chosen = d.r_g > 0.0 ? QuantKind::kLog2 : QuantKind::kUniform;
  } catch (const InsufficientTailError&) {
    d.r_g = -std::numeric_limits<double>::infinity();
    d.chosen = QuantKind::kUniform;
  }

  // quantizer parameters searched per branch on the full cell (zeros included)
  std::vector<float> pool = stride_subsample(cell_samples, 65536);
  const int pool_n = static_cast<int>(pool.size());
  Tensor samples({pool_n}, std::move(pool));
  d.params = search_params_mse(samples, bits, d.chosen, Granularity::kPerTensor);
  return d;
}

DaqResult run_daq_offline(const CalibrationSet& set, const ToyUNet& model, int bits,
                          int min_tail) {
  DaqResult result;
  for (const auto& li : model.layers()) {
    if (li.kind != LayerKind::kPostSoftmax) continue;
    auto grouped = capture_layer_stats(set, li.id);
    TimestepQuantTable table;
    table.layer_id = li.id;
    table.timesteps = set.timesteps;
    for (size_t i = 0; i < grouped.size(); ++i) {
      const auto& [t, batch] = grouped[i];
      std::vector<float> cell(batch.data());
      DaqDecision d = select_quantizer(li.id, t, cell, bits, min_tail);
      table.group_of.push_back(static_cast<int>(i));
      table.group_params.push_back(d.params);
      result.decisions.emplace(std::make_pair(li.id, t), std::move(d));
    }
    result.tables.emplace(li.id, std::move(table));
  }
  return result;
}

std::string daq_decisions_csv(const DaqResult& result) {
  std::ostringstream os;
  os << "layer,t,chosen,r_g,alpha,x_min,n_tail,n_excluded\n";
  for (const auto& [key, d] : result.decisions) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%d,%s,%.9g,%.9g,%.9g,%d,%d\n", key.first.c_str(),
                  key.second, quant_kind_name(d.chosen), d.r_g, d.fit ? d.fit->alpha : 0.0,
                  d.fit ? d.fit->x_min : 0.0, d.fit ? d.fit->n_tail : 0, d.n_excluded);
    os << buf;
  }
  return os.str();
}

}  // namespace tcaq
