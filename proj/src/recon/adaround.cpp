#include "recon/adaround.hpp"

#include <algorithm>
#include <cmath>

#include "diffusion/train.hpp"

namespace tcaq {

namespace {

Tensor stack_rows(const std::vector<Tensor>& rows, const std::vector<size_t>& idx) {
  if (idx.empty()) throw Error("stack_rows: empty selection");
  Shape s = rows[idx[0]].shape();
  const int64_t per = numel(s);
  s[0] = static_cast<int>(idx.size());
  std::vector<float> data(static_cast<size_t>(per) * idx.size());
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(rows[idx[i]].data().data(), per, &data[i * static_cast<size_t>(per)]);
  return Tensor(std::move(s), std::move(data));
}

// reparameterized FP weight: model parameter with input channels rescaled
Tensor reparamed_base(const ToyUNet& model, const QuantContext& qc, const std::string& layer_id) {
  Tensor base = model.param(layer_id + ".weight").clone();
  auto it = qc.input_recip.find(layer_id);
  if (it == qc.input_recip.end()) return base;
  const Tensor& recip = it->second;
  auto& wd = base.raw_data();
  const Shape& ws = base.shape();
  const int O = ws[0], I = ws[1];
  const int64_t inner = numel(ws) / (static_cast<int64_t>(O) * I);
  for (int o = 0; o < O; ++o)
    for (int i = 0; i < I; ++i) {
      const float r = 1.0f / recip.at(i);
      const size_t b = (static_cast<size_t>(o) * I + i) * inner;
      for (int64_t j = 0; j < inner; ++j) wd[b + j] *= r;
    }
  return base;
}

struct TimestepGroups {
  std::vector<int> ts;                      // distinct timesteps, sampling order
  std::vector<std::vector<size_t>> members; // sample indices per timestep
};

TimestepGroups group_by_t(const std::vector<int>& sample_t) {
  TimestepGroups g;
  for (size_t i = 0; i < sample_t.size(); ++i) {
    const int t = sample_t[i];
    size_t k = 0;
    for (; k < g.ts.size(); ++k)
      if (g.ts[k] == t) break;
    if (k == g.ts.size()) {
      g.ts.push_back(t);
      g.members.emplace_back();
    }
    g.members[k].push_back(i);
  }
  return g;
}

}  // namespace

RoundState init_round_state(const ToyUNet& model, const QuantContext& qc,
                            const ReconConfig& cfg) {
  RoundState state;
  for (const auto& [layer_id, qp] : qc.weight_qp) {
    LayerRounding lr;
    lr.layer_id = layer_id;
    lr.w_base = reparamed_base(model, qc, layer_id);
    lr.qp = qp;
    lr.v = adaround_init_v(lr.w_base, qp, cfg.zeta, cfg.gamma);
    state.layers.emplace(layer_id, std::move(lr));
  }
  return state;
}

double block_output_mse(const ToyUNet& model, const QuantContext& qc, const Block& block,
                        const StageIO& quant_io, const StageIO& fp_io,
                        const std::vector<int>& sample_t) {
  const TimestepGroups groups = group_by_t(sample_t);
  const bool has_skip = ToyUNet::skip_source(block.stage).has_value();
  double acc = 0.0;
  int64_t count = 0;
  for (size_t k = 0; k < groups.ts.size(); ++k) {
    const auto& idx = groups.members[k];
    Tensor x = stack_rows(quant_io.x_in, idx);
    Tensor skip;
    if (has_skip) skip = stack_rows(quant_io.skip, idx);
    Tensor target = stack_rows(fp_io.out, idx);
    Tensor emb = model.time_embedding(std::vector<int>(idx.size(), groups.ts[k]));
    ForwardEnv env;
    env.qc = &qc;
    env.t = groups.ts[k];
    Tensor out = model.forward_stage(block.stage, x, has_skip ? &skip : nullptr, emb, env);
    for (int64_t i = 0; i < out.size(); ++i) {
      const double d = static_cast<double>(out.at(i)) - target.at(i);
      acc += d * d;
    }
    count += out.size();
  }
  return acc / static_cast<double>(count);
}

BlockReconStats adaround_block(const ToyUNet& model, QuantContext& qc, const Block& block,
                               const StageIO& quant_io, const StageIO& fp_io,
                               const std::vector<int>& sample_t, const ReconConfig& cfg,
                               int iters, RoundState& state, uint64_t round_tag) {
  BlockReconStats stats;
  stats.stage = block.stage;

  // rounding layers of this block
  std::vector<LayerRounding*> rounding;
  for (const auto& lid : block.layer_ids) {
    auto it = state.layers.find(lid);
    if (it != state.layers.end()) rounding.push_back(&it->second);
  }
  if (rounding.empty()) throw Error("adaround_block: no quantized layers in " + block.stage);

  QuantContext local = qc;
  local.quantize_acts = cfg.quantize_acts_during_recon && qc.quantize_acts;

  // round-to-nearest baseline for this calibration data
  {
    QuantContext rtn = local;
    for (auto* lr : rounding)
      rtn.weights[lr->layer_id + ".weight"] = fake_quant(lr->w_base, lr->qp);
    stats.rtn_mse = block_output_mse(model, rtn, block, quant_io, fp_io, sample_t);
  }
  stats.start_mse = block_output_mse(model, local, block, quant_io, fp_io, sample_t);

  // snapshot for the downhill guarantee
  std::map<std::string, Tensor> v_snapshot;
  for (auto* lr : rounding) v_snapshot.emplace(lr->layer_id, lr->v.clone());

  const bool has_skip = ToyUNet::skip_source(block.stage).has_value();
  const TimestepGroups groups = group_by_t(sample_t);
  Rng rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (round_tag + 1)), 0x51);
  std::vector<Tensor> v_params;
  for (auto* lr : rounding) {
    lr->v.set_requires_grad(true);
    v_params.push_back(lr->v);
  }
  Adam opt(cfg.lr);

  double best_loss = std::numeric_limits<double>::max();
  int stall = 0;
  int ran = 0;
  const int warmup_iters = static_cast<int>(cfg.warmup * static_cast<float>(iters));
  for (int iter = 0; iter < iters; ++iter) {
    const size_t gi = static_cast<size_t>(iter) % groups.ts.size();
    const auto& members = groups.members[gi];
    std::vector<size_t> pick;
    const int bsz = std::min<int>(cfg.batch, static_cast<int>(members.size()));
    for (int i = 0; i < bsz; ++i)
      pick.push_back(members[static_cast<size_t>(rng.uniform_int(static_cast<int>(members.size())))]);

    Tape tape;
    std::unordered_map<std::string, Tensor> soft;
    for (auto* lr : rounding)
      soft.emplace(lr->layer_id + ".weight",
                   adaround_soft_weight(lr->w_base, lr->v, lr->qp, cfg.zeta, cfg.gamma, &tape));

    Tensor x = stack_rows(quant_io.x_in, pick);
    Tensor skip;
    if (has_skip) skip = stack_rows(quant_io.skip, pick);
    Tensor target = stack_rows(fp_io.out, pick);
    const int t = groups.ts[gi];
    Tensor emb = model.time_embedding(std::vector<int>(pick.size(), t));
    ForwardEnv env;
    env.tape = &tape;
    env.qc = &local;
    env.weight_override = &soft;
    env.t = t;
    Tensor out = model.forward_stage(block.stage, x, has_skip ? &skip : nullptr, emb, env);
    Tensor loss = mse_loss(out, target, &tape);

    if (iter >= warmup_iters && cfg.lambda_reg > 0.0f) {
      const float frac = iters > warmup_iters
                             ? static_cast<float>(iter - warmup_iters) /
                                   static_cast<float>(iters - warmup_iters)
                             : 1.0f;
      const float beta = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * frac;
      Tensor reg = adaround_regularizer(rounding[0]->v, beta, cfg.zeta, cfg.gamma, &tape);
      for (size_t i = 1; i < rounding.size(); ++i)
        reg = add(reg, adaround_regularizer(rounding[i]->v, beta, cfg.zeta, cfg.gamma, &tape),
                  &tape);
      loss = add(loss, mul(reg, Tensor::scalar(cfg.lambda_reg), &tape), &tape);
    }
    const float loss_val = loss.item();
    if (!std::isfinite(loss_val))
      throw NumericError("adaround_block: NaN loss at iteration " + std::to_string(iter) +
                         " in " + block.stage);
    for (auto& p : v_params) p.zero_grad();
    backward(tape, loss);
    opt.step(v_params);
    ++ran;

    if (loss_val < best_loss) {
      best_loss = loss_val;
      stall = 0;
    } else if (++stall >= cfg.early_stop_patience) {
      break;
    }
  }
  stats.iters_run = ran;
  for (auto* lr : rounding) lr->v.set_requires_grad(false);

  // binarize and verify the downhill guarantee on this calibration set
  QuantContext candidate = local;
  for (auto* lr : rounding)
    candidate.weights[lr->layer_id + ".weight"] =
        adaround_finalize(lr->w_base, lr->v, lr->qp, cfg.zeta, cfg.gamma);
  double final_mse = block_output_mse(model, candidate, block, quant_io, fp_io, sample_t);
  if (final_mse > stats.start_mse) {
    // revert: the optimizer may not leave the block worse than it started
    for (auto* lr : rounding) {
      lr->v = v_snapshot.at(lr->layer_id);
      candidate.weights[lr->layer_id + ".weight"] =
          adaround_finalize(lr->w_base, lr->v, lr->qp, cfg.zeta, cfg.gamma);
    }
    final_mse = block_output_mse(model, candidate, block, quant_io, fp_io, sample_t);
  }
  stats.final_mse = final_mse;
  for (auto* lr : rounding)
    qc.weights[lr->layer_id + ".weight"] = candidate.weights.at(lr->layer_id + ".weight");
  return stats;
}

}  // namespace tcaq
