#include "quant/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tcaq {

namespace {
constexpr float kScaleFloor = 1e-8f;

float sigmoid_f(float x) { return 1.0f / (1.0f + std::exp(-x)); }

// rows/cols view for per-channel handling: channel = dim 0
void channel_view(const Shape& shape, const QuantParams& qp, int64_t* rows, int64_t* cols) {
  if (qp.granularity == Granularity::kPerChannel) {
    *rows = shape.empty() ? 1 : shape[0];
    *cols = numel(shape) / *rows;
  } else {
    *rows = 1;
    *cols = numel(shape);
  }
}

void check_scale_count(const Shape& shape, const QuantParams& qp) {
  int64_t rows, cols;
  channel_view(shape, qp, &rows, &cols);
  if (static_cast<int64_t>(qp.scale.size()) != rows)
    throw ShapeError("quant: scale count " + std::to_string(qp.scale.size()) +
                     " does not match channel count " + std::to_string(rows) + " for shape " +
                     shape_str(shape));
}
}  // namespace

const char* quant_kind_name(QuantKind k) {
  return k == QuantKind::kUniform ? "uniform" : "log2";
}

void QuantParams::validate() const {
  if (bits < 2 || bits > 8) throw Error("quant: bits must be in [2,8], got " + std::to_string(bits));
  if (scale.empty() || scale.size() != zero_point.size())
    throw Error("quant: scale/zero_point size mismatch");
  for (float s : scale)
    if (!(s > 0.0f)) throw Error("quant: non-positive scale");
  for (int32_t z : zero_point) {
    if (kind == QuantKind::kLog2 && z != 0) throw Error("quant: log2 zero_point must be 0");
    if (z < 0 || z > qmax()) throw Error("quant: zero_point out of [0, 2^bits-1]");
  }
}

QuantizedTensor quantize_uniform(const Tensor& x, const QuantParams& qp) {
  if (qp.kind != QuantKind::kUniform) throw Error("quantize_uniform: wrong quantizer kind");
  qp.validate();
  check_scale_count(x.shape(), qp);
  int64_t rows, cols;
  channel_view(x.shape(), qp, &rows, &cols);
  QuantizedTensor q;
  q.shape = x.shape();
  q.codes.resize(x.data().size());
  const float top = static_cast<float>(qp.qmax());
  for (int64_t r = 0; r < rows; ++r) {
    const float inv_s = 1.0f / qp.scale[static_cast<size_t>(r)];
    const float z = static_cast<float>(qp.zero_point[static_cast<size_t>(r)]);
    for (int64_t i = 0; i < cols; ++i) {
      const size_t idx = static_cast<size_t>(r * cols + i);
      const float c = round_half_even(x.data()[idx] * inv_s) + z;
      q.codes[idx] = static_cast<int32_t>(std::min(top, std::max(0.0f, c)));
    }
  }
  return q;
}

Tensor dequantize_uniform(const QuantizedTensor& q, const QuantParams& qp) {
  qp.validate();
  int64_t rows, cols;
  channel_view(q.shape, qp, &rows, &cols);
  Tensor out(q.shape, 0.0f);
  auto& o = out.raw_data();
  for (int64_t r = 0; r < rows; ++r) {
    const float s = qp.scale[static_cast<size_t>(r)];
    const int32_t z = qp.zero_point[static_cast<size_t>(r)];
    for (int64_t i = 0; i < cols; ++i) {
      const size_t idx = static_cast<size_t>(r * cols + i);
      o[idx] = s * static_cast<float>(q.codes[idx] - z);
    }
  }
  return out;
}

QuantizedTensor quantize_log2(const Tensor& x, const QuantParams& qp) {
  if (qp.kind != QuantKind::kLog2) throw Error("quantize_log2: wrong quantizer kind");
  qp.validate();
  check_scale_count(x.shape(), qp);
  int64_t rows, cols;
  channel_view(x.shape(), qp, &rows, &cols);
  QuantizedTensor q;
  q.shape = x.shape();
  q.codes.resize(x.data().size());
  const float top = static_cast<float>(qp.qmax());
  for (int64_t r = 0; r < rows; ++r) {
    const float s = qp.scale[static_cast<size_t>(r)];
    for (int64_t i = 0; i < cols; ++i) {
      const size_t idx = static_cast<size_t>(r * cols + i);
      const float v = x.data()[idx];
      if (v < 0.0f)
        throw NumericError("quantize_log2: negative input; log2 quantizer covers the "
                           "post-softmax domain x >= 0");
      if (v == 0.0f) {
        q.codes[idx] = qp.log2_zero_code();
        continue;
      }
      const float c = round_half_even(-std::log2(v / s));
      q.codes[idx] = static_cast<int32_t>(std::min(top, std::max(0.0f, c)));
    }
  }
  return q;
}

Tensor dequantize_log2(const QuantizedTensor& q, const QuantParams& qp) {
  qp.validate();
  int64_t rows, cols;
  channel_view(q.shape, qp, &rows, &cols);
  Tensor out(q.shape, 0.0f);
  auto& o = out.raw_data();
  for (int64_t r = 0; r < rows; ++r) {
    const float s = qp.scale[static_cast<size_t>(r)];
    for (int64_t i = 0; i < cols; ++i) {
      const size_t idx = static_cast<size_t>(r * cols + i);
      const int32_t c = q.codes[idx];
      o[idx] = (c == qp.log2_zero_code()) ? 0.0f : std::ldexp(s, -c);
    }
  }
  return out;
}

namespace {

// min-max over one channel row
void minmax_row(const float* p, int64_t n, float* mn, float* mx) {
  *mn = p[0];
  *mx = p[0];
  for (int64_t i = 1; i < n; ++i) {
    *mn = std::min(*mn, p[i]);
    *mx = std::max(*mx, p[i]);
  }
}

void minmax_params_row(const float* p, int64_t n, int bits, QuantKind kind, float* s, int32_t* z) {
  float mn, mx;
  minmax_row(p, n, &mn, &mx);
  const float top = static_cast<float>((1 << bits) - 1);
  if (kind == QuantKind::kUniform) {
    *s = std::max((mx - mn) / top, kScaleFloor);
    const float zf = round_half_even(-mn / *s);
    *z = static_cast<int32_t>(std::min(top, std::max(0.0f, zf)));
  } else {
    if (mn < 0.0f)
      throw NumericError("search_params: negative sample given to log2 quantizer");
    *s = std::max(mx, kScaleFloor);
    *z = 0;
  }
}

double row_mse(const float* p, int64_t n, float s, int32_t z, int bits, QuantKind kind) {
  const float top = static_cast<float>((1 << bits) - 1);
  double acc = 0.0;
  if (kind == QuantKind::kUniform) {
    const float inv_s = 1.0f / s;
    for (int64_t i = 0; i < n; ++i) {
      float c = round_half_even(p[i] * inv_s) + static_cast<float>(z);
      c = std::min(top, std::max(0.0f, c));
      const float d = s * (c - static_cast<float>(z)) - p[i];
      acc += static_cast<double>(d) * d;
    }
  } else {
    for (int64_t i = 0; i < n; ++i) {
      float y;
      if (p[i] == 0.0f) {
        y = 0.0f;
      } else {
        float c = round_half_even(-std::log2(p[i] / s));
        c = std::min(top, std::max(0.0f, c));
        y = std::ldexp(s, -static_cast<int>(c));
      }
      const float d = y - p[i];
      acc += static_cast<double>(d) * d;
    }
  }
  return acc / static_cast<double>(n);
}

}  // namespace

QuantParams search_params_minmax(const Tensor& samples, int bits, QuantKind kind,
                                 Granularity granularity) {
  if (samples.size() < 1) throw Error("search_params_minmax: need at least one sample");
  QuantParams qp;
  qp.kind = kind;
  qp.bits = bits;
  qp.granularity = granularity;
  int64_t rows, cols;
  channel_view(samples.shape(), qp, &rows, &cols);
  qp.scale.resize(static_cast<size_t>(rows));
  qp.zero_point.resize(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r)
    minmax_params_row(&samples.data()[static_cast<size_t>(r * cols)], cols, bits, kind,
                      &qp.scale[static_cast<size_t>(r)], &qp.zero_point[static_cast<size_t>(r)]);
  qp.validate();
  return qp;
}

QuantParams search_params_mse(const Tensor& samples, int bits, QuantKind kind,
                              Granularity granularity, int grid) {
  if (grid < 2) throw Error("search_params_mse: grid must be >= 2");
  QuantParams qp = search_params_minmax(samples, bits, kind, granularity);
  int64_t rows, cols;
  channel_view(samples.shape(), qp, &rows, &cols);
  const float top = static_cast<float>(qp.qmax());
  for (int64_t r = 0; r < rows; ++r) {
    const float* p = &samples.data()[static_cast<size_t>(r * cols)];
    float mn, mx;
    minmax_row(p, cols, &mn, &mx);
    const float s_base = qp.scale[static_cast<size_t>(r)];
    // min-max candidate first so exact-grid inputs keep it on ties
    float best_s = s_base;
    int32_t best_z = qp.zero_point[static_cast<size_t>(r)];
    double best = row_mse(p, cols, best_s, best_z, bits, kind);
    for (int i = 0; i < grid; ++i) {
      const float beta = 0.2f + (1.2f - 0.2f) * static_cast<float>(i) / static_cast<float>(grid - 1);
      const float s_c = std::max(beta * s_base, kScaleFloor);
      int32_t z_c = 0;
      if (kind == QuantKind::kUniform) {
        const float zf = round_half_even(-mn / s_c);
        z_c = static_cast<int32_t>(std::min(top, std::max(0.0f, zf)));
      }
      const double m = row_mse(p, cols, s_c, z_c, bits, kind);
      if (m < best) {
        best = m;
        best_s = s_c;
        best_z = z_c;
      }
    }
    qp.scale[static_cast<size_t>(r)] = best_s;
    qp.zero_point[static_cast<size_t>(r)] = best_z;
  }
  qp.validate();
  return qp;
}

Tensor fake_quant(const Tensor& x, const QuantParams& qp, Tape* tape) {
  qp.validate();
  check_scale_count(x.shape(), qp);
  const Tensor deq = qp.kind == QuantKind::kUniform
                         ? dequantize_uniform(quantize_uniform(x, qp), qp)
                         : dequantize_log2(quantize_log2(x, qp), qp);
  if (!tape && !x.requires_grad()) return deq;

  // straight-through node: pass gradient where the unclipped code stays in
  // range, zero elsewhere
  Node node;
  node.op = Op::kCustom;
  node.name = std::string("fake_quant_") + quant_kind_name(qp.kind);
  node.inputs = {x.impl()};
  int64_t rows, cols;
  channel_view(x.shape(), qp, &rows, &cols);
  node.saved.resize(x.data().size());
  const float top = static_cast<float>(qp.qmax());
  for (int64_t r = 0; r < rows; ++r) {
    const float s = qp.scale[static_cast<size_t>(r)];
    const float z = static_cast<float>(qp.zero_point[static_cast<size_t>(r)]);
    for (int64_t i = 0; i < cols; ++i) {
      const size_t idx = static_cast<size_t>(r * cols + i);
      const float v = x.data()[idx];
      bool pass;
      if (qp.kind == QuantKind::kUniform) {
        const float c = round_half_even(v / s) + z;
        pass = c >= 0.0f && c <= top;
      } else {
        if (v <= 0.0f) {
          pass = false;
        } else {
          const float c = round_half_even(-std::log2(v / s));
          pass = c >= 0.0f && c <= top;
        }
      }
      node.saved[idx] = pass ? 1.0f : 0.0f;
    }
  }
  QuantParams qp_copy = qp;
  node.custom_forward = [qp_copy](const Node& n) {
    Tensor in(n.inputs[0]->shape, n.inputs[0]->data);
    const Tensor out = qp_copy.kind == QuantKind::kUniform
                           ? dequantize_uniform(quantize_uniform(in, qp_copy), qp_copy)
                           : dequantize_log2(quantize_log2(in, qp_copy), qp_copy);
    return out.data();
  };
  node.custom_backward = [](Node& n) {
    auto& in = *n.inputs[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    const auto& dout = n.output->grad;
    for (size_t i = 0; i < dout.size(); ++i) in.grad[i] += dout[i] * n.saved[i];
  };
  auto out_impl = std::make_shared<TensorImpl>();
  out_impl->shape = deq.shape();
  out_impl->data = deq.data();
  node.output = out_impl;
  return record_custom(tape, std::move(node));
}

double fake_quant_mse(const Tensor& samples, const QuantParams& qp) {
  int64_t rows, cols;
  channel_view(samples.shape(), qp, &rows, &cols);
  double acc = 0.0;
  for (int64_t r = 0; r < rows; ++r)
    acc += row_mse(&samples.data()[static_cast<size_t>(r * cols)], cols,
                   qp.scale[static_cast<size_t>(r)], qp.zero_point[static_cast<size_t>(r)],
                   qp.bits, qp.kind) *
           static_cast<double>(cols);
  return acc / static_cast<double>(numel(samples.shape()));
}

namespace {
float rect_sigmoid(float v, float zeta, float gamma) {
  return std::min(1.0f, std::max(0.0f, sigmoid_f(v) * (zeta - gamma) + gamma));
}
}  // namespace

Tensor adaround_soft_weight(const Tensor& w_fp, const Tensor& v, const QuantParams& qp, float zeta,
                            float gamma, Tape* tape) {
  if (qp.kind != QuantKind::kUniform)
    throw Error("adaround_soft_weight: weights use the uniform quantizer");
  qp.validate();
  if (w_fp.shape() != v.shape())
    throw ShapeError("adaround_soft_weight: v shape " + shape_str(v.shape()) +
                     " != weight shape " + shape_str(w_fp.shape()));
  check_scale_count(w_fp.shape(), qp);
  int64_t rows, cols;
  channel_view(w_fp.shape(), qp, &rows, &cols);
  const float top = static_cast<float>(qp.qmax());

  Node node;
  node.op = Op::kCustom;
  node.name = "adaround_soft_weight";
  node.inputs = {w_fp.impl(), v.impl()};
  node.saved.resize(w_fp.data().size());  // d(out)/d(v) per element
  std::vector<float> out(w_fp.data().size());
  for (int64_t r = 0; r < rows; ++r) {
    const float s = qp.scale[static_cast<size_t>(r)];
    const float z = static_cast<float>(qp.zero_point[static_cast<size_t>(r)]);
    for (int64_t i = 0; i < cols; ++i) {
      const size_t idx = static_cast<size_t>(r * cols + i);
      const float fl = std::floor(w_fp.data()[idx] / s);
      const float sg = sigmoid_f(v.data()[idx]);
      const float h_raw = sg * (zeta - gamma) + gamma;
      const float h = std::min(1.0f, std::max(0.0f, h_raw));
      const float code = fl + z + h;
      const float code_cl = std::min(top, std::max(0.0f, code));
      out[idx] = s * (code_cl - z);
      const bool in_range = code >= 0.0f && code <= top;
      const bool h_open = h_raw > 0.0f && h_raw < 1.0f;
      node.saved[idx] =
          (in_range && h_open) ? s * (zeta - gamma) * sg * (1.0f - sg) : 0.0f;
    }
  }
  QuantParams qpc = qp;
  node.custom_forward = [qpc, zeta, gamma, rows, cols, top](const Node& n) {
    std::vector<float> y(n.inputs[0]->data.size());
    for (int64_t r = 0; r < rows; ++r) {
      const float s = qpc.scale[static_cast<size_t>(r)];
      const float z = static_cast<float>(qpc.zero_point[static_cast<size_t>(r)]);
      for (int64_t i = 0; i < cols; ++i) {
        const size_t idx = static_cast<size_t>(r * cols + i);
        const float fl = std::floor(n.inputs[0]->data[idx] / s);
        const float h = rect_sigmoid(n.inputs[1]->data[idx], zeta, gamma);
        const float code_cl = std::min(top, std::max(0.0f, fl + z + h));
        y[idx] = s * (code_cl - z);
      }
    }
    return y;
  };
  node.custom_backward = [](Node& n) {
    auto& vin = *n.inputs[1];
    if (!vin.requires_grad) return;
    vin.ensure_grad();
    const auto& dout = n.output->grad;
    for (size_t i = 0; i < dout.size(); ++i) vin.grad[i] += dout[i] * n.saved[i];
  };
  auto out_impl = std::make_shared<TensorImpl>();
  out_impl->shape = w_fp.shape();
  out_impl->data = std::move(out);
  node.output = out_impl;
  return record_custom(tape, std::move(node));
}

Tensor adaround_regularizer(const Tensor& v, float beta, float zeta, float gamma, Tape* tape) {
  Node node;
  node.op = Op::kCustom;
  node.name = "adaround_regularizer";
  node.inputs = {v.impl()};
  node.saved.resize(v.data().size());  // d(reg)/d(v) per element
  float total = 0.0f;
  for (size_t i = 0; i < v.data().size(); ++i) {
    const float sg = sigmoid_f(v.data()[i]);
    const float h_raw = sg * (zeta - gamma) + gamma;
    const float h = std::min(1.0f, std::max(0.0f, h_raw));
    const float u = std::abs(2.0f * h - 1.0f);
    total += 1.0f - std::pow(u, beta);
    float d = 0.0f;
    if (h_raw > 0.0f && h_raw < 1.0f && u > 0.0f) {
      const float sign = (2.0f * h - 1.0f) >= 0.0f ? 1.0f : -1.0f;
      const float dh = (zeta - gamma) * sg * (1.0f - sg);
      d = -beta * std::pow(u, beta - 1.0f) * 2.0f * sign * dh;
    }
    node.saved[i] = d;
  }
  node.custom_forward = [beta, zeta, gamma](const Node& n) {
    float acc = 0.0f;
    for (float vv : n.inputs[0]->data) {
      const float h = rect_sigmoid(vv, zeta, gamma);
      acc += 1.0f - std::pow(std::abs(2.0f * h - 1.0f), beta);
    }
    return std::vector<float>{acc};
  };
  node.custom_backward = [](Node& n) {
    auto& vin = *n.inputs[0];
    if (!vin.requires_grad) return;
    vin.ensure_grad();
    const float g = n.output->grad[0];
    for (size_t i = 0; i < vin.grad.size(); ++i) vin.grad[i] += g * n.saved[i];
  };
  auto out_impl = std::make_shared<TensorImpl>();
  out_impl->shape = Shape{1};
  out_impl->data = {total};
  node.output = out_impl;
  return record_custom(tape, std::move(node));
}

Tensor adaround_init_v(const Tensor& w_fp, const QuantParams& qp, float zeta, float gamma) {
  int64_t rows, cols;
  channel_view(w_fp.shape(), qp, &rows, &cols);
  Tensor v(w_fp.shape(), 0.0f);
  auto& vd = v.raw_data();
  for (int64_t r = 0; r < rows; ++r) {
    const float s = qp.scale[static_cast<size_t>(r)];
    for (int64_t i = 0; i < cols; ++i) {
      const size_t idx = static_cast<size_t>(r * cols + i);
      const float w = w_fp.data()[idx];
      float frac = w / s - std::floor(w / s);
      frac = std::min(0.99f, std::max(0.01f, frac));
      // invert h(v): sigmoid(v) = (frac - gamma) / (zeta - gamma)
      const float p = (frac - gamma) / (zeta - gamma);
      vd[idx] = -std::log(1.0f / p - 1.0f);
    }
  }
  return v;
}

Tensor adaround_finalize(const Tensor& w_fp, const Tensor& v, const QuantParams& qp, float zeta,
                         float gamma) {
  int64_t rows, cols;
  channel_view(w_fp.shape(), qp, &rows, &cols);
  const float top = static_cast<float>(qp.qmax());
  Tensor out(w_fp.shape(), 0.0f);
  auto& o = out.raw_data();
  for (int64_t r = 0; r < rows; ++r) {
    const float s = qp.scale[static_cast<size_t>(r)];
    const float z = static_cast<float>(qp.zero_point[static_cast<size_t>(r)]);
    for (int64_t i = 0; i < cols; ++i) {
      const size_t idx = static_cast<size_t>(r * cols + i);
      const float fl = std::floor(w_fp.data()[idx] / s);
      const float h = rect_sigmoid(v.data()[idx], zeta, gamma) >= 0.5f ? 1.0f : 0.0f;
      const float code = std::min(top, std::max(0.0f, fl + z + h));
      o[idx] = s * (code - z);
    }
  }
  return out;
}

}  // namespace tcaq
