#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/errors.hpp"
#include "core/rng.hpp"

namespace tcaq {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Round half to even. The process never changes the FP environment, so
// nearbyint implements banker's rounding on every supported platform.
inline float round_half_even(float x) { return std::nearbyintf(x); }

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // empty until backward touches this tensor

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  }
};

// Value-semantics handle over shared storage. Tensors are immutable after
// construction except for grad accumulation and explicit optimizer updates
// between tapes.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, float fill, bool requires_grad = false);
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  static Tensor scalar(float v) { return Tensor({1}, std::vector<float>{v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }
  const std::vector<float>& data() const { return impl_->data; }
  // for parameter updates and in-place initialization only; never call on a
  // tensor that a live tape references
  std::vector<float>& raw_data() { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<float>& grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0f); }

  float item() const;
  float at(int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }

  Tensor clone() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

enum class Op {
  kConv2d,
  kLinear,
  kMatmul,
  kAdd,
  kMul,
  kConcat,
  kReshape,
  kSoftmax,
  kSilu,
  kGroupNorm,
  kMean,
  kMseLoss,
  kSigmoid,
  kClamp,
  kScaleEmbedAdd,
  kCustom,
};

const char* op_name(Op op);
Op op_from_name(const std::string& name);

struct OpAttrs {
  int axis = 1;          // concat
  int groups = 1;        // group_norm
  float eps = 1e-5f;     // group_norm
  float lo = 0.0f;       // clamp
  float hi = 0.0f;       // clamp
  bool trans_a = false;  // matmul
  bool trans_b = false;  // matmul
  float scale = 1.0f;    // matmul result scaling
  Shape target_shape;    // reshape
};

struct Node {
  Op op = Op::kCustom;
  std::string name;  // custom op label, also used in error text
  OpAttrs attrs;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  std::vector<float> saved;  // op-specific intermediates

  // custom ops provide their own kernels
  std::function<std::vector<float>(const Node&)> custom_forward;
  std::function<void(Node&)> custom_backward;
};

// Records ops in execution order; node inputs always precede the node, so the
// recorded order is a valid topological order for backward.
class Tape {
 public:
  std::vector<Node>& nodes() { return nodes_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Re-runs every node's forward kernel on its recorded inputs and compares
  // against the recorded output bit for bit.
  bool replay_matches() const;

 private:
  std::vector<Node> nodes_;
};

// Generic dispatcher (also used by tape replay). Typed wrappers below are
// what the rest of the project calls.
Tensor forward_op(Op op, const std::vector<Tensor>& inputs, const OpAttrs& attrs, Tape* tape);

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape = nullptr);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape = nullptr);
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false,
              float scale = 1.0f, Tape* tape = nullptr);
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor concat(const std::vector<Tensor>& xs, int axis, Tape* tape = nullptr);
Tensor reshape(const Tensor& x, Shape shape, Tape* tape = nullptr);
Tensor softmax(const Tensor& x, Tape* tape = nullptr);
Tensor silu(const Tensor& x, Tape* tape = nullptr);
Tensor sigmoid(const Tensor& x, Tape* tape = nullptr);
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  Tape* tape = nullptr, float eps = 1e-5f);
Tensor mean(const Tensor& x, Tape* tape = nullptr);
Tensor mse_loss(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor clamp(const Tensor& x, float lo, float hi, Tape* tape = nullptr);
Tensor scale_embed_add(const Tensor& x, const Tensor& emb, Tape* tape = nullptr);

// Appends a fully-populated custom node (inputs, output, kernels already set)
// and propagates requires_grad.
Tensor record_custom(Tape* tape, Node node);

// Populates grad buffers of every requires_grad tensor reachable from loss.
// Unreachable leaves keep a zero (or absent) grad.
void backward(Tape& tape, const Tensor& loss);

// Max over elements of |analytic - central_difference| / (|analytic| + 1e-8).
// f must be scalar-valued; it receives a tape for the analytic pass and
// nullptr for the probe evaluations.
double finite_difference_check(const std::function<Tensor(const Tensor&, Tape*)>& f,
                               const Tensor& x0, double h);

// ---- non-differentiable tensor arithmetic (sampler math, metrics) ----

void check_finite(const char* what, const Tensor& t);
Tensor axpby(float a, const Tensor& x, float b, const Tensor& y);  // a*x + b*y
Tensor scale(const Tensor& x, float a);
Tensor clip_values(const Tensor& x, float lo, float hi);

}  // namespace tcaq
