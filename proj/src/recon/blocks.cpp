#include "recon/blocks.hpp"

#include <algorithm>

namespace tcaq {

std::vector<Block> partition_blocks(const ToyUNet& model) {
  std::vector<Block> blocks;
  for (const auto& stage : ToyUNet::stage_names()) {
    Block b;
    b.stage = stage;
    for (const auto& li : model.layers())
      if (li.stage == stage) b.layer_ids.push_back(li.id);
    if (b.layer_ids.empty()) throw Error("partition_blocks: stage '" + stage + "' has no layers");
    b.input_layer = b.layer_ids.front();
    b.output_layer = b.layer_ids.back();
    blocks.push_back(std::move(b));
  }
  return blocks;
}

std::map<std::string, StageIO> collect_stage_io(const ToyUNet& model, const QuantContext* qc,
                                                const CalibrationSet& set,
                                                const NoiseSchedule& sched) {
  (void)sched;
  std::map<std::string, StageIO> io;
  const size_t n_samples = set.samples.size();
  for (const auto& stage : ToyUNet::stage_names()) {
    io[stage].x_in.resize(n_samples);
    io[stage].skip.resize(n_samples);
    io[stage].out.resize(n_samples);
  }

  // batch the chains that share a timestep, preserving sample order
  for (int t : set.timesteps) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < n_samples; ++i)
      if (set.samples[i].t == t) idx.push_back(i);
    if (idx.empty()) throw Error("collect_stage_io: timestep " + std::to_string(t) + " missing");
    const Shape row_shape = set.samples[idx[0]].x_t.shape();
    const int64_t per = numel(row_shape);
    Shape batch_shape = row_shape;
    batch_shape[0] = static_cast<int>(idx.size());
    std::vector<float> data(static_cast<size_t>(per) * idx.size());
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy_n(set.samples[idx[i]].x_t.data().data(), per,
                  &data[i * static_cast<size_t>(per)]);
    Tensor x(std::move(batch_shape), std::move(data));

    Capture cap;
    cap.on_stage_input = [&](const std::string& stage, int, const Tensor& sx,
                             const Tensor* skip) {
      auto& s = io[stage];
      const int64_t p = numel(sx.shape()) / sx.dim(0);
      for (size_t i = 0; i < idx.size(); ++i) {
        Shape rs = sx.shape();
        rs[0] = 1;
        std::vector<float> row(static_cast<size_t>(p));
        std::copy_n(&sx.data()[i * static_cast<size_t>(p)], p, row.data());
        s.x_in[idx[i]] = Tensor(rs, std::move(row));
        if (skip) {
          const int64_t ps = numel(skip->shape()) / skip->dim(0);
          Shape ss = skip->shape();
          ss[0] = 1;
          std::vector<float> srow(static_cast<size_t>(ps));
          std::copy_n(&skip->data()[i * static_cast<size_t>(ps)], ps, srow.data());
          s.skip[idx[i]] = Tensor(ss, std::move(srow));
        }
      }
    };
    cap.on_stage_output = [&](const std::string& stage, int, const Tensor& out) {
      auto& s = io[stage];
      const int64_t p = numel(out.shape()) / out.dim(0);
      for (size_t i = 0; i < idx.size(); ++i) {
        Shape rs = out.shape();
        rs[0] = 1;
        std::vector<float> row(static_cast<size_t>(p));
        std::copy_n(&out.data()[i * static_cast<size_t>(p)], p, row.data());
        s.out[idx[i]] = Tensor(rs, std::move(row));
      }
    };

    ForwardEnv env;
    env.qc = qc;
    env.capture = &cap;
    env.t = t;
    std::vector<int> ts(idx.size(), t);
    model.forward(x, ts, env);
  }
  return io;
}

}  // namespace tcaq
