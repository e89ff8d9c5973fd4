#include "tcr/tcr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tcaq {

namespace {
constexpr float kFloor = 1e-8f;

// channel axis is dim 1 for every capture layout: conv [n,C,H,W],
// token linear [n,C,T], plain linear [n,C]
void per_channel_abs_max(const Tensor& batch, std::vector<float>* maxima) {
  const Shape& s = batch.shape();
  if (s.size() < 2) throw ShapeError("channel maxima: batch must have a channel axis");
  const int n = s[0], c = s[1];
  const int64_t inner = numel(s) / (static_cast<int64_t>(n) * c);
  maxima->assign(static_cast<size_t>(c), 0.0f);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const size_t base = (static_cast<size_t>(i) * c + ch) * inner;
      float m = (*maxima)[static_cast<size_t>(ch)];
      for (int64_t j = 0; j < inner; ++j) m = std::max(m, std::abs(batch.data()[base + j]));
      (*maxima)[static_cast<size_t>(ch)] = m;
    }
}
}  // namespace

ChannelStats collect_channel_maxima(const CalibrationSet& set, const ToyUNet& model,
                                    const std::string& layer_id) {
  const LayerInfo& li = model.layer(layer_id);
  if (li.kind != LayerKind::kConv && li.kind != LayerKind::kLinear)
    throw Error("collect_channel_maxima: '" + layer_id + "' is not a conv or linear layer");
  ChannelStats stats;
  stats.layer_id = layer_id;
  stats.timesteps = set.timesteps;
  stats.channels = li.in_channels;
  auto grouped = capture_layer_stats(set, layer_id);
  for (const auto& [t, batch] : grouped) {
    (void)t;
    std::vector<float> m;
    per_channel_abs_max(batch, &m);
    if (static_cast<int>(m.size()) != li.in_channels)
      throw Error("collect_channel_maxima: capture channel count " + std::to_string(m.size()) +
                  " != layer in_channels " + std::to_string(li.in_channels) + " for '" +
                  layer_id + "'");
    stats.maxima.push_back(std::move(m));
  }
  return stats;
}

float compute_target_range(const ChannelStats& stats, int t_index) {
  if (t_index < 0 || t_index >= static_cast<int>(stats.maxima.size()))
    throw Error("compute_target_range: timestep index out of range");
  const auto& row = stats.maxima[static_cast<size_t>(t_index)];
  if (row.empty()) throw Error("compute_target_range: no channels");
  float mn = row[0];
  for (float v : row) mn = std::min(mn, v);
  return std::max(mn, kFloor);
}

ScalingVector compute_scaling_vector(const ChannelStats& stats) {
  if (stats.maxima.empty()) throw Error("compute_scaling_vector: empty stats");
  const int T = static_cast<int>(stats.maxima.size());
  const int D = stats.channels;
  ScalingVector sv;
  sv.layer_id = stats.layer_id;
  sv.s_tar.resize(static_cast<size_t>(T));
  sv.r_t.assign(static_cast<size_t>(T), std::vector<float>(static_cast<size_t>(D)));
  for (int ti = 0; ti < T; ++ti) {
    const float tar = compute_target_range(stats, ti);
    sv.s_tar[static_cast<size_t>(ti)] = tar;
    for (int d = 0; d < D; ++d)
      sv.r_t[static_cast<size_t>(ti)][static_cast<size_t>(d)] =
          std::max(stats.maxima[static_cast<size_t>(ti)][static_cast<size_t>(d)], kFloor) / tar;
  }
  sv.r.resize(static_cast<size_t>(D));
  for (int d = 0; d < D; ++d) {
    float num = 0.0f, den = 0.0f;
    for (int ti = 0; ti < T; ++ti) {
      const float m = stats.maxima[static_cast<size_t>(ti)][static_cast<size_t>(d)];
      num += sv.r_t[static_cast<size_t>(ti)][static_cast<size_t>(d)] * m;
      den += m;
    }
    sv.r[static_cast<size_t>(d)] = den < kFloor ? 1.0f : num / den;
    if (!(sv.r[static_cast<size_t>(d)] > 0.0f)) sv.r[static_cast<size_t>(d)] = kFloor;
  }
  return sv;
}

ScalingVector clamp_scaling(ScalingVector sv, float r_tru) {
  if (!(r_tru >= 1.0f)) throw Error("clamp_scaling: clamp range must be >= 1");
  sv.clamp_range = r_tru;
  for (auto& v : sv.r) v = std::min(r_tru, std::max(1.0f / r_tru, v));
  return sv;
}

void apply_reparam(const ToyUNet& model, QuantContext& qc, const ScalingVector& sv) {
  const LayerInfo& li = model.layer(sv.layer_id);
  if (static_cast<int>(sv.r.size()) != li.in_channels)
    throw Error("apply_reparam: scaling vector length " + std::to_string(sv.r.size()) +
                " != in_channels " + std::to_string(li.in_channels) + " of '" + sv.layer_id +
                "'");
  const std::string wname = sv.layer_id + ".weight";
  const Tensor& base =
      qc.weights.count(wname) ? qc.weights.at(wname) : model.param(wname);
  Tensor scaled = base.clone();
  auto& wd = scaled.raw_data();
  const Shape& ws = scaled.shape();
  // conv [O,I,kh,kw] or linear [O,I]: input channels are dim 1
  const int O = ws[0], I = ws[1];
  const int64_t inner = numel(ws) / (static_cast<int64_t>(O) * I);
  for (int o = 0; o < O; ++o)
    for (int i = 0; i < I; ++i) {
      const float r = sv.r[static_cast<size_t>(i)];
      const size_t bidx = (static_cast<size_t>(o) * I + i) * inner;
      for (int64_t j = 0; j < inner; ++j) wd[bidx + j] *= r;
    }
  qc.weights[wname] = std::move(scaled);

  Tensor recip({li.in_channels}, 0.0f);
  for (int i = 0; i < li.in_channels; ++i)
    recip.raw_data()[static_cast<size_t>(i)] = 1.0f / sv.r[static_cast<size_t>(i)];
  qc.input_recip[sv.layer_id] = std::move(recip);
}

ChannelStats reparamed_stats(const ChannelStats& stats, const ScalingVector& sv) {
  ChannelStats out = stats;
  for (auto& row : out.maxima)
    for (size_t d = 0; d < row.size(); ++d) row[d] /= sv.r[d];
  return out;
}

double mean_channel_spread(const ChannelStats& stats) {
  double acc = 0.0;
  for (const auto& row : stats.maxima) {
    float mx = 0.0f, mn = std::numeric_limits<float>::max();
    for (float v : row) {
      mx = std::max(mx, v);
      mn = std::min(mn, v);
    }
    acc += static_cast<double>(std::max(mx, kFloor)) / static_cast<double>(std::max(mn, kFloor));
  }
  return acc / static_cast<double>(stats.maxima.size());
}

TimestepQuantTable build_timestep_table(const CalibrationSet& set, const ToyUNet& model,
                                        const std::string& layer_id, int bits, int groups,
                                        const QuantContext* qc, int max_samples_per_group) {
  model.layer(layer_id);  // validates the id
  auto grouped = capture_layer_stats(set, layer_id);
  const int T = static_cast<int>(grouped.size());
  if (groups < 1 || groups > T)
    throw Error("build_timestep_table: groups must be in [1, inference_steps]");

  TimestepQuantTable table;
  table.layer_id = layer_id;
  table.timesteps = set.timesteps;
  table.group_of.resize(static_cast<size_t>(T));
  // contiguous near-equal partition of the sampling order
  for (int i = 0; i < T; ++i)
    table.group_of[static_cast<size_t>(i)] = static_cast<int>(
        (static_cast<int64_t>(i) * groups) / T);

  const Tensor* recip = nullptr;
  if (qc) {
    auto it = qc->input_recip.find(layer_id);
    if (it != qc->input_recip.end()) recip = &it->second;
  }

  for (int g = 0; g < groups; ++g) {
    std::vector<float> pool;
    for (int i = 0; i < T; ++i) {
      if (table.group_of[static_cast<size_t>(i)] != g) continue;
      const Tensor& batch = grouped[static_cast<size_t>(i)].second;
      const Shape& s = batch.shape();
      const int n = s[0], c = s.size() > 1 ? s[1] : 1;
      const int64_t inner = numel(s) / (static_cast<int64_t>(n) * c);
      for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
          const float rc = recip ? recip->at(ch) : 1.0f;
          const size_t base = (static_cast<size_t>(b) * c + ch) * inner;
          for (int64_t j = 0; j < inner; ++j) pool.push_back(batch.data()[base + j] * rc);
        }
    }
    if (pool.empty()) throw Error("build_timestep_table: empty group " + std::to_string(g));
    // deterministic stride subsampling keeps the search cheap
    if (static_cast<int>(pool.size()) > max_samples_per_group) {
      const size_t stride = pool.size() / static_cast<size_t>(max_samples_per_group);
      std::vector<float> sub;
      sub.reserve(static_cast<size_t>(max_samples_per_group));
      for (size_t i = 0; i < pool.size() && sub.size() < static_cast<size_t>(max_samples_per_group);
           i += stride)
        sub.push_back(pool[i]);
      pool = std::move(sub);
    }
    const int pool_n = static_cast<int>(pool.size());
    Tensor samples({pool_n}, std::move(pool));
    table.group_params.push_back(
        search_params_mse(samples, bits, QuantKind::kUniform, Granularity::kPerTensor));
  }
  return table;
}

}  // namespace tcaq
