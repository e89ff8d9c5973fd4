#include "diffusion/unet.hpp"

#include <cmath>

namespace tcaq {

const std::vector<std::string>& ToyUNet::stage_names() {
  static const std::vector<std::string> names = {"down.0", "down.1", "mid", "up.0", "up.1"};
  return names;
}

std::optional<std::string> ToyUNet::skip_source(const std::string& stage) {
  if (stage == "up.0") return "down.1";
  if (stage == "up.1") return "down.0";
  return std::nullopt;
}

ToyUNet::ToyUNet(UNetConfig cfg, uint64_t seed) : cfg_(cfg) {
  const int c1 = cfg.base_channels;
  const int c2 = cfg.base_channels * cfg.channel_mult;
  stages_ = {
      {"down.0", c1, c1, false},
      {"down.1", c1, c2, true},
      {"mid", c2, c2, true},
      {"up.0", c2 + c2, c2, false},
      {"up.1", c2 + c1, c1, false},
  };

  Rng rng(seed, /*stream=*/0x21);
  add_linear("temb.fc1", cfg.temb_dim, cfg.temb_dim, /*boundary=*/true, "", rng);
  add_linear("temb.fc2", cfg.temb_dim, cfg.temb_dim, /*boundary=*/true, "", rng);
  add_conv("in.conv", cfg.in_channels, c1, 3, /*boundary=*/true, "", rng);
  for (const auto& s : stages_) {
    add_norm(s.name + ".norm1", s.cin, false, s.name);
    add_conv(s.name + ".conv1", s.cin, s.cout, 3, false, s.name, rng);
    add_linear(s.name + ".temb", cfg.temb_dim, s.cout, false, s.name, rng);
    add_norm(s.name + ".norm2", s.cout, false, s.name);
    add_conv(s.name + ".conv2", s.cout, s.cout, 3, false, s.name, rng);
    if (s.cin != s.cout) add_conv(s.name + ".nin", s.cin, s.cout, 1, false, s.name, rng);
    if (s.attn) {
      add_norm(s.name + ".attn.norm", s.cout, false, s.name);
      add_linear(s.name + ".attn.q", s.cout, s.cout, false, s.name, rng);
      add_linear(s.name + ".attn.k", s.cout, s.cout, false, s.name, rng);
      add_linear(s.name + ".attn.v", s.cout, s.cout, false, s.name, rng);
      auto add_act_point = [&](const std::string& id, int channels) {
        LayerInfo ap;
        ap.id = id;
        ap.kind = LayerKind::kActPoint;
        ap.in_channels = channels;
        ap.out_channels = channels;
        ap.stage = s.name;
        layer_index_[ap.id] = layers_.size();
        layers_.push_back(ap);
      };
      // matmul operands carry their own activation quantizers
      add_act_point(s.name + ".attn.q_out", s.cout);
      add_act_point(s.name + ".attn.k_out", s.cout);
      add_act_point(s.name + ".attn.v_out", s.cout);
      LayerInfo ps;
      ps.id = s.name + ".attn.av";
      ps.kind = LayerKind::kPostSoftmax;
      ps.in_channels = cfg.image_size * cfg.image_size;
      ps.out_channels = ps.in_channels;
      ps.stage = s.name;
      layer_index_[ps.id] = layers_.size();
      layers_.push_back(ps);
      add_linear(s.name + ".attn.proj", s.cout, s.cout, false, s.name, rng);
      // damp the residual branch at init without silencing it outright
      {
        Tensor& pw = params_.at(s.name + ".attn.proj.weight");
        for (auto& v : pw.raw_data()) v *= 0.1f;
      }
    }
  }
  add_norm("out.norm", c1, /*boundary=*/true, "");
  add_conv("out.conv", c1, cfg.in_channels, 3, /*boundary=*/true, "", rng, /*zero_init=*/true);
}

void ToyUNet::add_param(const std::string& name, Tensor t) {
  params_.emplace(name, std::move(t));
  param_order_.push_back(name);
}

void ToyUNet::add_conv(const std::string& id, int cin, int cout, int k, bool boundary,
                       const std::string& stage, Rng& rng, bool zero_init) {
  LayerInfo li;
  li.id = id;
  li.kind = LayerKind::kConv;
  li.is_boundary = boundary;
  li.in_channels = cin;
  li.out_channels = cout;
  li.stage = stage;
  layer_index_[id] = layers_.size();
  layers_.push_back(li);
  const float std_dev = zero_init ? 0.0f : std::sqrt(2.0f / static_cast<float>(cin * k * k));
  add_param(id + ".weight", Tensor::randn({cout, cin, k, k}, rng, std_dev));
  add_param(id + ".bias", Tensor({cout}, 0.0f));
}

void ToyUNet::add_linear(const std::string& id, int cin, int cout, bool boundary,
                         const std::string& stage, Rng& rng, bool zero_init) {
  LayerInfo li;
  li.id = id;
  li.kind = LayerKind::kLinear;
  li.is_boundary = boundary;
  li.in_channels = cin;
  li.out_channels = cout;
  li.stage = stage;
  layer_index_[id] = layers_.size();
  layers_.push_back(li);
  const float std_dev = zero_init ? 0.0f : std::sqrt(2.0f / static_cast<float>(cin));
  add_param(id + ".weight", Tensor::randn({cout, cin}, rng, std_dev));
  add_param(id + ".bias", Tensor({cout}, 0.0f));
}

void ToyUNet::add_norm(const std::string& id, int channels, bool boundary,
                       const std::string& stage) {
  LayerInfo li;
  li.id = id;
  li.kind = LayerKind::kNorm;
  li.is_boundary = boundary;
  li.in_channels = channels;
  li.out_channels = channels;
  li.stage = stage;
  layer_index_[id] = layers_.size();
  layers_.push_back(li);
  add_param(id + ".gamma", Tensor({channels}, 1.0f));
  add_param(id + ".beta", Tensor({channels}, 0.0f));
}

const Tensor& ToyUNet::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unet: no parameter '" + name + "'");
  return it->second;
}

Tensor& ToyUNet::mutable_param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unet: no parameter '" + name + "'");
  return it->second;
}

std::vector<Tensor> ToyUNet::trainable_params() const {
  std::vector<Tensor> out;
  for (const auto& name : param_order_) out.push_back(params_.at(name));
  return out;
}

const LayerInfo& ToyUNet::layer(const std::string& id) const {
  auto it = layer_index_.find(id);
  if (it == layer_index_.end()) {
    std::string known;
    for (const auto& li : layers_) known += (known.empty() ? "" : ", ") + li.id;
    throw Error("unet: unknown layer '" + id + "'; known layers: " + known);
  }
  return layers_[it->second];
}

Tensor ToyUNet::time_embedding(const std::vector<int>& ts, Tape* tape) const {
  const int n = static_cast<int>(ts.size());
  const int d = cfg_.temb_dim;
  const int half = d / 2;
  Tensor emb({n, d}, 0.0f);
  auto& e = emb.raw_data();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < half; ++j) {
      const float freq =
          std::exp(-std::log(10000.0f) * static_cast<float>(j) / static_cast<float>(half));
      const float a = static_cast<float>(ts[static_cast<size_t>(i)]) * freq;
      e[static_cast<size_t>(i * d + j)] = std::sin(a);
      e[static_cast<size_t>(i * d + half + j)] = std::cos(a);
    }
  }
  Tensor h = linear(emb, param("temb.fc1.weight"), param("temb.fc1.bias"), tape);
  h = silu(h, tape);
  return linear(h, param("temb.fc2.weight"), param("temb.fc2.bias"), tape);
}

Tensor ToyUNet::quantize_activation(const std::string& id, Tensor x, const ForwardEnv& env) const {
  if (env.qc) {
    auto rit = env.qc->input_recip.find(id);
    if (rit != env.qc->input_recip.end()) x = mul(x, rit->second, env.tape);
  }
  if (env.capture && env.capture->on_layer_input) env.capture->on_layer_input(id, env.t, x);
  if (env.qc && env.qc->quantize_acts) {
    auto it = env.qc->act.find(id);
    if (it != env.qc->act.end()) {
      const QuantParams* qp = it->second.lookup(env.t);
      if (qp) x = fake_quant(x, *qp, env.tape);
    }
  }
  return x;
}

Tensor ToyUNet::apply_layer(const std::string& id, Tensor x, const ForwardEnv& env) const {
  const LayerInfo& li = layer(id);
  if (!li.is_boundary) x = quantize_activation(id, std::move(x), env);
  const Tensor* w = &param(id + ".weight");
  if (env.qc) {
    auto it = env.qc->weights.find(id + ".weight");
    if (it != env.qc->weights.end()) w = &it->second;
  }
  if (env.weight_override) {
    auto it = env.weight_override->find(id + ".weight");
    if (it != env.weight_override->end()) w = &it->second;
  }
  const Tensor& b = param(id + ".bias");
  if (li.kind == LayerKind::kConv) return conv2d(x, *w, b, env.tape);
  return linear(x, *w, b, env.tape);
}

Tensor ToyUNet::norm(const std::string& id, const Tensor& x, const ForwardEnv& env) const {
  return group_norm(x, param(id + ".gamma"), param(id + ".beta"), cfg_.gn_groups, env.tape);
}

Tensor ToyUNet::attention(const std::string& prefix, const Tensor& x, const ForwardEnv& env) const {
  const int n = x.dim(0), c = x.dim(1), hh = x.dim(2), ww = x.dim(3);
  Tensor hn = norm(prefix + ".norm", x, env);
  Tensor tokens = reshape(hn, {n, c, hh * ww}, env.tape);
  Tensor q = quantize_activation(prefix + ".q_out", apply_layer(prefix + ".q", tokens, env), env);
  Tensor k = quantize_activation(prefix + ".k_out", apply_layer(prefix + ".k", tokens, env), env);
  Tensor v = quantize_activation(prefix + ".v_out", apply_layer(prefix + ".v", tokens, env), env);
  const float inv_sqrt_c = 1.0f / std::sqrt(static_cast<float>(c));
  Tensor scores = matmul(q, k, /*trans_a=*/true, /*trans_b=*/false, inv_sqrt_c, env.tape);
  Tensor attn = softmax(scores, env.tape);  // [n, T, T], rows over keys
  attn = quantize_activation(prefix + ".av", std::move(attn), env);
  Tensor out = matmul(v, attn, /*trans_a=*/false, /*trans_b=*/true, 1.0f, env.tape);
  out = apply_layer(prefix + ".proj", out, env);
  return add(x, reshape(out, {n, c, hh, ww}, env.tape), env.tape);
}

Tensor ToyUNet::forward_stage(const std::string& stage, const Tensor& x, const Tensor* skip,
                              const Tensor& emb, const ForwardEnv& env) const {
  const StageSpec* spec = nullptr;
  for (const auto& s : stages_)
    if (s.name == stage) spec = &s;
  if (!spec) throw Error("unet: unknown stage '" + stage + "'");
  const bool wants_skip = skip_source(stage).has_value();
  if (wants_skip != (skip != nullptr))
    throw Error("unet: stage '" + stage + "' skip input mismatch");
  if (env.capture && env.capture->on_stage_input)
    env.capture->on_stage_input(stage, env.t, x, skip);

  Tensor in = skip ? concat({x, *skip}, 1, env.tape) : x;
  Tensor h = apply_layer(stage + ".conv1", silu(norm(stage + ".norm1", in, env), env.tape), env);
  Tensor e = apply_layer(stage + ".temb", silu(emb, env.tape), env);
  h = scale_embed_add(h, e, env.tape);
  h = apply_layer(stage + ".conv2", silu(norm(stage + ".norm2", h, env), env.tape), env);
  Tensor shortcut = spec->cin != spec->cout ? apply_layer(stage + ".nin", in, env) : in;
  h = add(h, shortcut, env.tape);
  if (spec->attn) h = attention(stage + ".attn", h, env);
  if (env.capture && env.capture->on_stage_output)
    env.capture->on_stage_output(stage, env.t, h);
  return h;
}

Tensor ToyUNet::forward(const Tensor& x, const std::vector<int>& ts, const ForwardEnv& env) const {
  if (x.shape().size() != 4 || x.dim(0) != static_cast<int>(ts.size()))
    throw ShapeError("unet: input must be [N,C,H,W] with one timestep per row, got " +
                     shape_str(x.shape()) + " and " + std::to_string(ts.size()) + " timesteps");
  if (env.qc && env.qc->quantize_acts) {
    for (int t : ts)
      if (t != env.t)
        throw Error("unet: activation quantization needs a uniform batch timestep");
  }
  Tensor emb = time_embedding(ts, env.tape);
  Tensor h = apply_layer("in.conv", x, env);
  Tensor h1 = forward_stage("down.0", h, nullptr, emb, env);
  Tensor h2 = forward_stage("down.1", h1, nullptr, emb, env);
  Tensor m = forward_stage("mid", h2, nullptr, emb, env);
  Tensor u0 = forward_stage("up.0", m, &h2, emb, env);
  Tensor u1 = forward_stage("up.1", u0, &h1, emb, env);
  return apply_layer("out.conv", silu(norm("out.norm", u1, env), env.tape), env);
}

void ToyUNet::save_params(TensorArchive& ar, const std::string& prefix) const {
  ar.put(prefix + "meta/config",
         Tensor({6}, std::vector<float>{
                         static_cast<float>(cfg_.in_channels), static_cast<float>(cfg_.base_channels),
                         static_cast<float>(cfg_.channel_mult), static_cast<float>(cfg_.temb_dim),
                         static_cast<float>(cfg_.gn_groups), static_cast<float>(cfg_.image_size)}));
  for (const auto& name : param_order_) ar.put(prefix + name, params_.at(name));
}

void ToyUNet::load_params(const TensorArchive& ar, const std::string& prefix) {
  for (const auto& name : param_order_) {
    const Tensor& t = ar.get(prefix + name);
    Tensor& dst = mutable_param(name);
    if (t.shape() != dst.shape())
      throw IoError("unet: checkpoint shape mismatch for '" + name + "'");
    dst.raw_data() = t.data();
  }
}

}  // namespace tcaq
