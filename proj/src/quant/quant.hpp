#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace tcaq {

enum class QuantKind { kUniform, kLog2 };
enum class Granularity { kPerTensor, kPerChannel };

const char* quant_kind_name(QuantKind k);

// Affine / logarithmic quantizer parameters. Per-channel granularity keys on
// dim 0 of the tensor being quantized (output channels of a weight), with one
// scale and zero-point entry per channel.
struct QuantParams {
  QuantKind kind = QuantKind::kUniform;
  int bits = 8;
  Granularity granularity = Granularity::kPerTensor;
  std::vector<float> scale = {1.0f};
  std::vector<int32_t> zero_point = {0};

  int qmax() const { return (1 << bits) - 1; }
  // log2 codes live in [0, qmax]; exact zeros get a reserved sentinel one past
  // the top so softmax zeros never hit log(0)
  int log2_zero_code() const { return qmax() + 1; }
  void validate() const;
};

struct QuantizedTensor {
  Shape shape;
  std::vector<int32_t> codes;
};

QuantizedTensor quantize_uniform(const Tensor& x, const QuantParams& qp);
Tensor dequantize_uniform(const QuantizedTensor& q, const QuantParams& qp);
QuantizedTensor quantize_log2(const Tensor& x, const QuantParams& qp);
Tensor dequantize_log2(const QuantizedTensor& q, const QuantParams& qp);

// Min-max initialization. For uniform: s = (max-min)/(2^bits - 1),
// z = clip(round(-min/s)). For log2: s = max. Scale floor 1e-8 keeps
// degenerate constant inputs from producing zero scales.
QuantParams search_params_minmax(const Tensor& samples, int bits, QuantKind kind,
                                 Granularity granularity);

// Scans scale candidates beta * s_minmax for beta on a uniform grid over
// [0.2, 1.2] (the min-max candidate itself is always evaluated first) and
// returns the one minimizing fake-quantization MSE on the samples.
QuantParams search_params_mse(const Tensor& samples, int bits, QuantKind kind,
                              Granularity granularity, int grid = 100);

// quantize-then-dequantize; with a tape, gradients flow straight-through
// (identity inside the clip range, zero outside).
Tensor fake_quant(const Tensor& x, const QuantParams& qp, Tape* tape = nullptr);

double fake_quant_mse(const Tensor& samples, const QuantParams& qp);

// ---- learned-rounding support ------------------------------------------

// Soft-rounded weight: s*(clip(floor(w/s) + z + h(v), 0, 2^bits-1) - z) with
// h(v) = clamp(sigmoid(v)*(zeta-gamma)+gamma, 0, 1). Gradients reach v only.
Tensor adaround_soft_weight(const Tensor& w_fp, const Tensor& v, const QuantParams& qp,
                            float zeta, float gamma, Tape* tape);

// sum over elements of (1 - |2h-1|^beta); drives h toward {0,1}
Tensor adaround_regularizer(const Tensor& v, float beta, float zeta, float gamma, Tape* tape);

// v initialization such that h(v) equals the fractional part of w/s
Tensor adaround_init_v(const Tensor& w_fp, const QuantParams& qp, float zeta, float gamma);

// Hard rounding h = (h(v) >= 0.5), returning the dequantized weight tensor.
Tensor adaround_finalize(const Tensor& w_fp, const Tensor& v, const QuantParams& qp, float zeta,
                         float gamma);

}  // namespace tcaq
