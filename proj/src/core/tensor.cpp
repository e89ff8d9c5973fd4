#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace tcaq {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, float fill, bool requires_grad) {
  for (int d : shape)
    if (d < 0) throw ShapeError("tensor: negative dim in shape " + shape_str(shape));
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<size_t>(numel(impl_->shape)), fill);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad) {
  for (int d : shape)
    if (d < 0) throw ShapeError("tensor: negative dim in shape " + shape_str(shape));
  if (numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                     std::to_string(data.size()));
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::randn(Shape shape, Rng& rng, float stddev) {
  Tensor t(std::move(shape), 0.0f);
  for (auto& v : t.impl_->data) v = stddev * rng.normal();
  return t;
}

float Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kConv2d: return "conv2d";
    case Op::kLinear: return "linear";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kConcat: return "concat";
    case Op::kReshape: return "reshape";
    case Op::kSoftmax: return "softmax";
    case Op::kSilu: return "silu";
    case Op::kGroupNorm: return "group_norm";
    case Op::kMean: return "mean";
    case Op::kMseLoss: return "mse_loss";
    case Op::kSigmoid: return "sigmoid";
    case Op::kClamp: return "clamp";
    case Op::kScaleEmbedAdd: return "scale_embed_add";
    case Op::kCustom: return "custom";
  }
  return "?";
}

Op op_from_name(const std::string& name) {
  for (Op op : {Op::kConv2d, Op::kLinear, Op::kMatmul, Op::kAdd, Op::kMul, Op::kConcat,
                Op::kReshape, Op::kSoftmax, Op::kSilu, Op::kGroupNorm, Op::kMean, Op::kMseLoss,
                Op::kSigmoid, Op::kClamp, Op::kScaleEmbedAdd}) {
    if (name == op_name(op)) return op;
  }
  throw Error("unknown op: " + name);
}

namespace {

void check_finite_vec(const char* op, const std::vector<float>& v) {
  // exponent-all-ones detects inf and NaN; integer form vectorizes
  uint32_t bad = 0;
  for (float x : v) {
    uint32_t u;
    std::memcpy(&u, &x, 4);
    bad |= static_cast<uint32_t>(((u >> 23) & 0xffu) == 0xffu);
  }
  if (bad) throw NumericError(std::string(op) + ": non-finite input element");
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// Branchless cephes-style expf (~2e-7 relative error); vectorizes, unlike
// the libm call, and keeps results identical across runs.
inline float fast_exp(float x) {
  x = std::min(88.0f, std::max(-87.0f, x));
  // round to nearest via the magic-number trick (|arg| << 2^22 here)
  const float nf = (x * 1.44269504088896341f + 12582912.0f) - 12582912.0f;
  float r = x - nf * 0.693359375f;
  r -= nf * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float y = p * r * r + r + 1.0f;
  union {
    uint32_t u;
    float f;
  } s;
  s.u = static_cast<uint32_t>((static_cast<int32_t>(nf) + 127) << 23);
  return y * s.f;
}

float sigmoid_f(float x) { return 1.0f / (1.0f + fast_exp(-x)); }

// ---------------------------------------------------------------- kernels

struct KernelOut {
  Shape shape;
  std::vector<float> data;
};

// columns layout: [Ci*K*K, HW] per sample; same-padding, stride 1
void im2col(const float* x, int Ci, int H, int W, int K, float* col) {
  const int pad = K / 2, HW = H * W;
  for (int ci = 0; ci < Ci; ++ci) {
    const float* xp = x + static_cast<size_t>(ci) * HW;
    for (int ky = 0; ky < K; ++ky) {
      for (int kx = 0; kx < K; ++kx) {
        float* cp = col + (static_cast<size_t>(ci) * K * K + ky * K + kx) * HW;
        const int dy = ky - pad, dx = kx - pad;
        const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
        for (int y = 0; y < H; ++y) {
          const int sy = y + dy;
          float* row = cp + y * W;
          if (sy < 0 || sy >= H) {
            std::memset(row, 0, static_cast<size_t>(W) * 4);
            continue;
          }
          for (int xx = 0; xx < x0; ++xx) row[xx] = 0.0f;
          if (x1 > x0)
            std::memcpy(row + x0, xp + sy * W + x0 + dx, static_cast<size_t>(x1 - x0) * 4);
          for (int xx = x1; xx < W; ++xx) row[xx] = 0.0f;
        }
      }
    }
  }
}

// scatter-add of the columns gradient back onto the input gradient
void col2im_add(const float* col, int Ci, int H, int W, int K, float* dx) {
  const int pad = K / 2, HW = H * W;
  for (int ci = 0; ci < Ci; ++ci) {
    float* dxp = dx + static_cast<size_t>(ci) * HW;
    for (int ky = 0; ky < K; ++ky) {
      for (int kx = 0; kx < K; ++kx) {
        const float* cp = col + (static_cast<size_t>(ci) * K * K + ky * K + kx) * HW;
        const int dy = ky - pad, dx_ = kx - pad;
        for (int y = 0; y < H; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          for (int xx = 0; xx < W; ++xx) {
            const int sx = xx + dx_;
            if (sx < 0 || sx >= W) continue;
            dxp[sy * W + sx] += cp[y * W + xx];
          }
        }
      }
    }
  }
}

KernelOut conv2d_fwd(const Node& n) {
  const auto& x = *n.inputs[0];
  const auto& w = *n.inputs[1];
  const auto& b = *n.inputs[2];
  require(x.shape.size() == 4, "conv2d: input must be NCHW, got " + shape_str(x.shape));
  require(w.shape.size() == 4, "conv2d: weight must be OIHW, got " + shape_str(w.shape));
  const int N = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int Co = w.shape[0], K = w.shape[2];
  require(w.shape[1] == Ci, "conv2d: weight in-channels " + std::to_string(w.shape[1]) +
                                " != input channels " + std::to_string(Ci));
  require(w.shape[2] == w.shape[3] && (K % 2) == 1, "conv2d: kernel must be odd square");
  require(b.shape.size() == 1 && b.shape[0] == Co, "conv2d: bias must be [out_channels]");
  const int HW = H * W;
  const int CK = Ci * K * K;

  KernelOut out;
  out.shape = {N, Co, H, W};
  out.data.assign(static_cast<size_t>(N) * Co * HW, 0.0f);
#pragma omp parallel
  {
    std::vector<float> col(static_cast<size_t>(CK) * HW);
#pragma omp for schedule(static)
    for (int nn = 0; nn < N; ++nn) {
      im2col(&x.data[static_cast<size_t>(nn) * Ci * HW], Ci, H, W, K, col.data());
      // block over output channels so each column row is read once per block
      constexpr int kBlk = 8;
      for (int co0 = 0; co0 < Co; co0 += kBlk) {
        const int co1 = std::min(Co, co0 + kBlk);
        for (int co = co0; co < co1; ++co) {
          float* op = &out.data[(static_cast<size_t>(nn) * Co + co) * HW];
          const float bias = b.data[static_cast<size_t>(co)];
          for (int i = 0; i < HW; ++i) op[i] = bias;
        }
        for (int c = 0; c < CK; ++c) {
          const float* cp = &col[static_cast<size_t>(c) * HW];
          for (int co = co0; co < co1; ++co) {
            const float wv = w.data[static_cast<size_t>(co) * CK + c];
            float* op = &out.data[(static_cast<size_t>(nn) * Co + co) * HW];
            for (int i = 0; i < HW; ++i) op[i] += wv * cp[i];
          }
        }
      }
    }
  }
  return out;
}

void conv2d_bwd(Node& n) {
  auto& x = *n.inputs[0];
  auto& w = *n.inputs[1];
  auto& b = *n.inputs[2];
  const auto& dout = n.output->grad;
  const int N = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int Co = w.shape[0], K = w.shape[2];
  const int HW = H * W;
  const int CK = Ci * K * K;

  if (x.requires_grad) {
    x.ensure_grad();
#pragma omp parallel
    {
      std::vector<float> dcol(static_cast<size_t>(CK) * HW);
#pragma omp for schedule(static)
      for (int nn = 0; nn < N; ++nn) {
        // dcol = W^T * dout, then scatter back; block over column rows so a
        // block of dcol stays in L1 across the co sweep
        std::fill(dcol.begin(), dcol.end(), 0.0f);
        constexpr int kBlk = 8;
        for (int c0 = 0; c0 < CK; c0 += kBlk) {
          const int c1 = std::min(CK, c0 + kBlk);
          for (int co = 0; co < Co; ++co) {
            const float* dop = &dout[(static_cast<size_t>(nn) * Co + co) * HW];
            for (int c = c0; c < c1; ++c) {
              const float wv = w.data[static_cast<size_t>(co) * CK + c];
              float* dcp = &dcol[static_cast<size_t>(c) * HW];
              for (int i = 0; i < HW; ++i) dcp[i] += wv * dop[i];
            }
          }
        }
        col2im_add(dcol.data(), Ci, H, W, K, &x.grad[static_cast<size_t>(nn) * Ci * HW]);
      }
    }
  }
  if (w.requires_grad) {
    w.ensure_grad();
    // transposed columns [HW, CK] per sample turn the weight gradient into
    // contiguous axpy accumulation (per-element order stays nn, then pixel)
    std::vector<float> colT(static_cast<size_t>(N) * HW * CK);
#pragma omp parallel
    {
      std::vector<float> col(static_cast<size_t>(CK) * HW);
#pragma omp for schedule(static)
      for (int nn = 0; nn < N; ++nn) {
        im2col(&x.data[static_cast<size_t>(nn) * Ci * HW], Ci, H, W, K, col.data());
        float* dst = &colT[static_cast<size_t>(nn) * HW * CK];
        for (int c = 0; c < CK; ++c)
          for (int i = 0; i < HW; ++i)
            dst[static_cast<size_t>(i) * CK + c] = col[static_cast<size_t>(c) * HW + i];
      }
    }
#pragma omp parallel for schedule(static)
    for (int co = 0; co < Co; ++co) {
      float* dwp = &w.grad[static_cast<size_t>(co) * CK];
      for (int nn = 0; nn < N; ++nn) {
        const float* dop = &dout[(static_cast<size_t>(nn) * Co + co) * HW];
        const float* base = &colT[static_cast<size_t>(nn) * HW * CK];
        for (int i = 0; i < HW; ++i) {
          const float g = dop[i];
          const float* cp = base + static_cast<size_t>(i) * CK;
          for (int c = 0; c < CK; ++c) dwp[c] += g * cp[c];
        }
      }
    }
  }
  if (b.requires_grad) {
    b.ensure_grad();
    for (int co = 0; co < Co; ++co) {
      float acc = 0.0f;
      for (int nn = 0; nn < N; ++nn) {
        const float* dop = &dout[(static_cast<size_t>(nn) * Co + co) * HW];
        for (int i = 0; i < HW; ++i) acc += dop[i];
      }
      b.grad[static_cast<size_t>(co)] += acc;
    }
  }
}

// linear handles [N,I] x [O,I] -> [N,O] and token layout [N,C,T] x [O,C] -> [N,O,T]
KernelOut linear_fwd(const Node& n) {
  const auto& x = *n.inputs[0];
  const auto& w = *n.inputs[1];
  const auto& b = *n.inputs[2];
  require(w.shape.size() == 2, "linear: weight must be [out,in], got " + shape_str(w.shape));
  const int O = w.shape[0], I = w.shape[1];
  require(b.shape.size() == 1 && b.shape[0] == O, "linear: bias must be [out]");
  KernelOut out;
  if (x.shape.size() == 2) {
    const int N = x.shape[0];
    require(x.shape[1] == I, "linear: input features " + std::to_string(x.shape[1]) +
                                 " != weight in " + std::to_string(I));
    out.shape = {N, O};
    out.data.assign(static_cast<size_t>(N) * O, 0.0f);
    std::vector<float> wT(static_cast<size_t>(I) * O);
    for (int o = 0; o < O; ++o)
      for (int i = 0; i < I; ++i) wT[static_cast<size_t>(i) * O + o] = w.data[static_cast<size_t>(o) * I + i];
    for (int nn = 0; nn < N; ++nn) {
      const float* xp = &x.data[static_cast<size_t>(nn) * I];
      float* op = &out.data[static_cast<size_t>(nn) * O];
      for (int o = 0; o < O; ++o) op[o] = b.data[static_cast<size_t>(o)];
      for (int i = 0; i < I; ++i) {
        const float xv = xp[i];
        const float* wr = &wT[static_cast<size_t>(i) * O];
        for (int o = 0; o < O; ++o) op[o] += xv * wr[o];
      }
    }
  } else if (x.shape.size() == 3) {
    const int N = x.shape[0], T = x.shape[2];
    require(x.shape[1] == I, "linear: token-layout channels " + std::to_string(x.shape[1]) +
                                 " != weight in " + std::to_string(I));
    out.shape = {N, O, T};
    out.data.assign(static_cast<size_t>(N) * O * T, 0.0f);
#pragma omp parallel for collapse(2) schedule(static)
    for (int nn = 0; nn < N; ++nn) {
      for (int o = 0; o < O; ++o) {
        float* op = &out.data[(static_cast<size_t>(nn) * O + o) * T];
        const float bias = b.data[static_cast<size_t>(o)];
        for (int t = 0; t < T; ++t) op[t] = bias;
        const float* wp = &w.data[static_cast<size_t>(o) * I];
        for (int c = 0; c < I; ++c) {
          const float wv = wp[c];
          const float* xp = &x.data[(static_cast<size_t>(nn) * I + c) * T];
          for (int t = 0; t < T; ++t) op[t] += wv * xp[t];
        }
      }
    }
  } else {
    throw ShapeError("linear: input must be rank 2 or 3, got " + shape_str(x.shape));
  }
  return out;
}

void linear_bwd(Node& n) {
  auto& x = *n.inputs[0];
  auto& w = *n.inputs[1];
  auto& b = *n.inputs[2];
  const auto& dout = n.output->grad;
  const int O = w.shape[0], I = w.shape[1];
  if (x.shape.size() == 2) {
    const int N = x.shape[0];
    if (x.requires_grad) {
      x.ensure_grad();
      for (int nn = 0; nn < N; ++nn) {
        const float* dop = &dout[static_cast<size_t>(nn) * O];
        float* dxp = &x.grad[static_cast<size_t>(nn) * I];
        for (int o = 0; o < O; ++o) {
          const float* wp = &w.data[static_cast<size_t>(o) * I];
          const float g = dop[o];
          for (int i = 0; i < I; ++i) dxp[i] += g * wp[i];
        }
      }
    }
    if (w.requires_grad) {
      w.ensure_grad();
      for (int o = 0; o < O; ++o) {
        float* dwp = &w.grad[static_cast<size_t>(o) * I];
        for (int nn = 0; nn < N; ++nn) {
          const float g = dout[static_cast<size_t>(nn) * O + o];
          const float* xp = &x.data[static_cast<size_t>(nn) * I];
          for (int i = 0; i < I; ++i) dwp[i] += g * xp[i];
        }
      }
    }
    if (b.requires_grad) {
      b.ensure_grad();
      for (int o = 0; o < O; ++o) {
        float acc = 0.0f;
        for (int nn = 0; nn < N; ++nn) acc += dout[static_cast<size_t>(nn) * O + o];
        b.grad[static_cast<size_t>(o)] += acc;
      }
    }
  } else {
    const int N = x.shape[0], T = x.shape[2];
    if (x.requires_grad) {
      x.ensure_grad();
#pragma omp parallel for collapse(2) schedule(static)
      for (int nn = 0; nn < N; ++nn) {
        for (int c = 0; c < I; ++c) {
          float* dxp = &x.grad[(static_cast<size_t>(nn) * I + c) * T];
          for (int o = 0; o < O; ++o) {
            const float wv = w.data[static_cast<size_t>(o) * I + c];
            const float* dop = &dout[(static_cast<size_t>(nn) * O + o) * T];
            for (int t = 0; t < T; ++t) dxp[t] += wv * dop[t];
          }
        }
      }
    }
    if (w.requires_grad) {
      w.ensure_grad();
      // x transposed to [N,T,C] turns the (n,t) reduction into axpy rows
      std::vector<float> xT(static_cast<size_t>(N) * T * I);
      for (int nn = 0; nn < N; ++nn)
        for (int c = 0; c < I; ++c)
          for (int t = 0; t < T; ++t)
            xT[(static_cast<size_t>(nn) * T + t) * I + c] =
                x.data[(static_cast<size_t>(nn) * I + c) * T + t];
#pragma omp parallel for schedule(static)
      for (int o = 0; o < O; ++o) {
        float* dwp = &w.grad[static_cast<size_t>(o) * I];
        for (int nn = 0; nn < N; ++nn) {
          const float* dop = &dout[(static_cast<size_t>(nn) * O + o) * T];
          for (int t = 0; t < T; ++t) {
            const float g = dop[t];
            const float* xr = &xT[(static_cast<size_t>(nn) * T + t) * I];
            for (int c = 0; c < I; ++c) dwp[c] += g * xr[c];
          }
        }
      }
    }
    if (b.requires_grad) {
      b.ensure_grad();
      for (int o = 0; o < O; ++o) {
        float acc = 0.0f;
        for (int nn = 0; nn < N; ++nn) {
          const float* dop = &dout[(static_cast<size_t>(nn) * O + o) * T];
          for (int t = 0; t < T; ++t) acc += dop[t];
        }
        b.grad[static_cast<size_t>(o)] += acc;
      }
    }
  }
}

struct MatDims {
  int batch, M, K, N;
  int ar, ac, br, bc;  // stored row/col counts
};

MatDims matmul_dims(const Node& n) {
  const auto& a = *n.inputs[0];
  const auto& b = *n.inputs[1];
  require(a.shape.size() == b.shape.size() && (a.shape.size() == 2 || a.shape.size() == 3),
          "matmul: inputs must both be rank 2 or rank 3, got " + shape_str(a.shape) + " and " +
              shape_str(b.shape));
  MatDims d{};
  d.batch = a.shape.size() == 3 ? a.shape[0] : 1;
  if (a.shape.size() == 3)
    require(b.shape[0] == d.batch, "matmul: batch mismatch " + shape_str(a.shape) + " vs " +
                                       shape_str(b.shape));
  d.ar = a.shape[a.shape.size() - 2];
  d.ac = a.shape[a.shape.size() - 1];
  d.br = b.shape[b.shape.size() - 2];
  d.bc = b.shape[b.shape.size() - 1];
  d.M = n.attrs.trans_a ? d.ac : d.ar;
  d.K = n.attrs.trans_a ? d.ar : d.ac;
  const int kb = n.attrs.trans_b ? d.bc : d.br;
  d.N = n.attrs.trans_b ? d.br : d.bc;
  require(d.K == kb, "matmul: inner dims disagree, " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
  return d;
}

// contiguous row-major copy of the effective (possibly transposed) matrix
void stage_matrix(const float* src, int rows, int cols, bool trans, std::vector<float>& dst) {
  // effective matrix is (trans ? cols x rows : rows x cols)
  if (!trans) {
    dst.assign(src, src + static_cast<size_t>(rows) * cols);
    return;
  }
  dst.resize(static_cast<size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) dst[static_cast<size_t>(c) * rows + r] = src[r * cols + c];
}

KernelOut matmul_fwd(const Node& n) {
  const auto& a = *n.inputs[0];
  const auto& b = *n.inputs[1];
  const MatDims d = matmul_dims(n);
  const bool ta = n.attrs.trans_a, tb = n.attrs.trans_b;
  const float s = n.attrs.scale;
  KernelOut out;
  out.shape = a.shape.size() == 3 ? Shape{d.batch, d.M, d.N} : Shape{d.M, d.N};
  out.data.assign(static_cast<size_t>(d.batch) * d.M * d.N, 0.0f);
#pragma omp parallel
  {
    std::vector<float> abuf, bbuf;
#pragma omp for schedule(static)
    for (int bb = 0; bb < d.batch; ++bb) {
      stage_matrix(&a.data[static_cast<size_t>(bb) * d.ar * d.ac], d.ar, d.ac, ta, abuf);
      stage_matrix(&b.data[static_cast<size_t>(bb) * d.br * d.bc], d.br, d.bc, tb, bbuf);
      // abuf: [M,K] row-major, bbuf: [K,N] row-major
      for (int m = 0; m < d.M; ++m) {
        float* op = &out.data[(static_cast<size_t>(bb) * d.M + m) * d.N];
        for (int k = 0; k < d.K; ++k) {
          const float av = s * abuf[static_cast<size_t>(m) * d.K + k];
          const float* bp = &bbuf[static_cast<size_t>(k) * d.N];
          for (int nn = 0; nn < d.N; ++nn) op[nn] += av * bp[nn];
        }
      }
    }
  }
  return out;
}

void matmul_bwd(Node& n) {
  auto& a = *n.inputs[0];
  auto& b = *n.inputs[1];
  const auto& dout = n.output->grad;
  const MatDims d = matmul_dims(n);
  const bool ta = n.attrs.trans_a, tb = n.attrs.trans_b;
  const float s = n.attrs.scale;
  if (a.requires_grad) {
    a.ensure_grad();
#pragma omp parallel
    {
      std::vector<float> btbuf, dabuf;
#pragma omp for schedule(static)
      for (int bb = 0; bb < d.batch; ++bb) {
        float* dap = &a.grad[static_cast<size_t>(bb) * d.ar * d.ac];
        const float* dop = &dout[static_cast<size_t>(bb) * d.M * d.N];
        // b_eff^T laid out [N,K] row-major turns the reduction into axpy rows
        stage_matrix(&b.data[static_cast<size_t>(bb) * d.br * d.bc], d.br, d.bc, !tb, btbuf);
        dabuf.assign(static_cast<size_t>(d.M) * d.K, 0.0f);
        // d a_eff(m,:) = s * sum_n dout(m,n) * b_eff^T(n,:)
        for (int m = 0; m < d.M; ++m) {
          float* row = &dabuf[static_cast<size_t>(m) * d.K];
          const float* dr = dop + static_cast<size_t>(m) * d.N;
          for (int nn = 0; nn < d.N; ++nn) {
            const float g = s * dr[nn];
            const float* br = &btbuf[static_cast<size_t>(nn) * d.K];
            for (int k = 0; k < d.K; ++k) row[k] += g * br[k];
          }
        }
        for (int m = 0; m < d.M; ++m)
          for (int k = 0; k < d.K; ++k) {
            const float g = dabuf[static_cast<size_t>(m) * d.K + k];
            if (ta)
              dap[k * d.ac + m] += g;
            else
              dap[m * d.ac + k] += g;
          }
      }
    }
  }
  if (b.requires_grad) {
    b.ensure_grad();
#pragma omp parallel
    {
      std::vector<float> atbuf, dbuf;
#pragma omp for schedule(static)
      for (int bb = 0; bb < d.batch; ++bb) {
        const float* dop = &dout[static_cast<size_t>(bb) * d.M * d.N];
        float* dbp = &b.grad[static_cast<size_t>(bb) * d.br * d.bc];
        // a_eff^T laid out [K,M] row-major: stage a_eff then transpose flag flip
        stage_matrix(&a.data[static_cast<size_t>(bb) * d.ar * d.ac], d.ar, d.ac, !ta, atbuf);
        // d b_eff(k,n) = s * sum_m a_eff(m,k) dout(m,n); accumulate row-wise
        dbuf.assign(static_cast<size_t>(d.K) * d.N, 0.0f);
        for (int k = 0; k < d.K; ++k) {
          float* row = &dbuf[static_cast<size_t>(k) * d.N];
          const float* at = &atbuf[static_cast<size_t>(k) * d.M];
          for (int m = 0; m < d.M; ++m) {
            const float av = s * at[m];
            const float* dr = dop + static_cast<size_t>(m) * d.N;
            for (int nn = 0; nn < d.N; ++nn) row[nn] += av * dr[nn];
          }
        }
        for (int k = 0; k < d.K; ++k)
          for (int nn = 0; nn < d.N; ++nn) {
            const float g = dbuf[static_cast<size_t>(k) * d.N + nn];
            if (tb)
              dbp[nn * d.bc + k] += g;
            else
              dbp[k * d.bc + nn] += g;
          }
      }
    }
  }
}

bool channel_broadcast(const Shape& a, const Shape& b) {
  return b.size() == 1 && a.size() >= 2 && a[1] == b[0];
}

KernelOut mul_fwd(const Node& n) {
  const auto& a = *n.inputs[0];
  const auto& b = *n.inputs[1];
  KernelOut out;
  out.shape = a.shape;
  out.data.resize(a.data.size());
  if (a.shape == b.shape) {
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  } else if (channel_broadcast(a.shape, b.shape)) {
    const int N = a.shape[0], C = a.shape[1];
    const int64_t inner = numel(a.shape) / (static_cast<int64_t>(N) * C);
    for (int nn = 0; nn < N; ++nn)
      for (int c = 0; c < C; ++c) {
        const float s = b.data[static_cast<size_t>(c)];
        const size_t base = (static_cast<size_t>(nn) * C + c) * inner;
        for (int64_t i = 0; i < inner; ++i) out.data[base + i] = a.data[base + i] * s;
      }
  } else {
    throw ShapeError("mul: shapes " + shape_str(a.shape) + " and " + shape_str(b.shape) +
                     " are neither equal nor a per-channel broadcast");
  }
  return out;
}

void mul_bwd(Node& n) {
  auto& a = *n.inputs[0];
  auto& b = *n.inputs[1];
  const auto& dout = n.output->grad;
  if (a.shape == b.shape) {
    if (a.requires_grad) {
      a.ensure_grad();
      for (size_t i = 0; i < dout.size(); ++i) a.grad[i] += dout[i] * b.data[i];
    }
    if (b.requires_grad) {
      b.ensure_grad();
      for (size_t i = 0; i < dout.size(); ++i) b.grad[i] += dout[i] * a.data[i];
    }
  } else {
    const int N = a.shape[0], C = a.shape[1];
    const int64_t inner = numel(a.shape) / (static_cast<int64_t>(N) * C);
    if (a.requires_grad) {
      a.ensure_grad();
      for (int nn = 0; nn < N; ++nn)
        for (int c = 0; c < C; ++c) {
          const float s = b.data[static_cast<size_t>(c)];
          const size_t base = (static_cast<size_t>(nn) * C + c) * inner;
          for (int64_t i = 0; i < inner; ++i) a.grad[base + i] += dout[base + i] * s;
        }
    }
    if (b.requires_grad) {
      b.ensure_grad();
      for (int c = 0; c < C; ++c) {
        float acc = 0.0f;
        for (int nn = 0; nn < N; ++nn) {
          const size_t base = (static_cast<size_t>(nn) * C + c) * inner;
          for (int64_t i = 0; i < inner; ++i) acc += dout[base + i] * a.data[base + i];
        }
        b.grad[static_cast<size_t>(c)] += acc;
      }
    }
  }
}

KernelOut concat_fwd(const Node& n) {
  require(!n.inputs.empty(), "concat: needs at least one input");
  const int axis = n.attrs.axis;
  const Shape& s0 = n.inputs[0]->shape;
  require(axis >= 0 && axis < static_cast<int>(s0.size()), "concat: bad axis");
  Shape out_shape = s0;
  for (size_t i = 1; i < n.inputs.size(); ++i) {
    const Shape& si = n.inputs[i]->shape;
    require(si.size() == s0.size(), "concat: rank mismatch");
    for (size_t d = 0; d < si.size(); ++d)
      if (static_cast<int>(d) != axis)
        require(si[d] == s0[d], "concat: dim " + std::to_string(d) + " mismatch, " +
                                    shape_str(s0) + " vs " + shape_str(si));
    out_shape[static_cast<size_t>(axis)] += si[static_cast<size_t>(axis)];
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < s0.size(); ++d) inner *= s0[d];

  KernelOut out;
  out.shape = out_shape;
  out.data.resize(static_cast<size_t>(numel(out_shape)));
  const int64_t out_block = out_shape[static_cast<size_t>(axis)] * inner;
  int64_t offset = 0;
  for (const auto& in : n.inputs) {
    const int64_t in_block = in->shape[static_cast<size_t>(axis)] * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(&out.data[static_cast<size_t>(o * out_block + offset)],
                  &in->data[static_cast<size_t>(o * in_block)],
                  static_cast<size_t>(in_block) * sizeof(float));
    offset += in_block;
  }
  return out;
}

void concat_bwd(Node& n) {
  const int axis = n.attrs.axis;
  const Shape& s0 = n.inputs[0]->shape;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < s0.size(); ++d) inner *= s0[d];
  const int64_t out_block = n.output->shape[static_cast<size_t>(axis)] * inner;
  const auto& dout = n.output->grad;
  int64_t offset = 0;
  for (auto& in : n.inputs) {
    const int64_t in_block = in->shape[static_cast<size_t>(axis)] * inner;
    if (in->requires_grad) {
      in->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        const float* src = &dout[static_cast<size_t>(o * out_block + offset)];
        float* dst = &in->grad[static_cast<size_t>(o * in_block)];
        for (int64_t i = 0; i < in_block; ++i) dst[i] += src[i];
      }
    }
    offset += in_block;
  }
}

KernelOut softmax_fwd(const Node& n) {
  const auto& x = *n.inputs[0];
  require(!x.shape.empty(), "softmax: scalar input");
  const int last = x.shape.back();
  const int64_t rows = numel(x.shape) / last;
  KernelOut out;
  out.shape = x.shape;
  out.data.resize(x.data.size());
  for (int64_t r = 0; r < rows; ++r) {
    const float* xp = &x.data[static_cast<size_t>(r) * last];
    float* op = &out.data[static_cast<size_t>(r) * last];
    float mx = xp[0];
    for (int i = 1; i < last; ++i) mx = std::max(mx, xp[i]);
    float denom = 0.0f;
    for (int i = 0; i < last; ++i) {
      op[i] = fast_exp(xp[i] - mx);
      denom += op[i];
    }
    for (int i = 0; i < last; ++i) op[i] /= denom;
  }
  return out;
}

void softmax_bwd(Node& n) {
  auto& x = *n.inputs[0];
  if (!x.requires_grad) return;
  x.ensure_grad();
  const auto& y = n.output->data;
  const auto& dout = n.output->grad;
  const int last = x.shape.back();
  const int64_t rows = numel(x.shape) / last;
  for (int64_t r = 0; r < rows; ++r) {
    const float* yp = &y[static_cast<size_t>(r) * last];
    const float* dp = &dout[static_cast<size_t>(r) * last];
    float* gp = &x.grad[static_cast<size_t>(r) * last];
    float dot = 0.0f;
    for (int i = 0; i < last; ++i) dot += dp[i] * yp[i];
    for (int i = 0; i < last; ++i) gp[i] += yp[i] * (dp[i] - dot);
  }
}

KernelOut group_norm_fwd(const Node& n, std::vector<float>* saved) {
  const auto& x = *n.inputs[0];
  const auto& gamma = *n.inputs[1];
  const auto& beta = *n.inputs[2];
  require(x.shape.size() >= 2, "group_norm: input must be at least [N,C]");
  const int N = x.shape[0], C = x.shape[1];
  const int G = n.attrs.groups;
  require(G >= 1 && C % G == 0, "group_norm: groups " + std::to_string(G) +
                                    " must divide channels " + std::to_string(C));
  require(gamma.shape.size() == 1 && gamma.shape[0] == C, "group_norm: gamma must be [C]");
  require(beta.shape.size() == 1 && beta.shape[0] == C, "group_norm: beta must be [C]");
  const int64_t inner = numel(x.shape) / (static_cast<int64_t>(N) * C);
  const int cg = C / G;
  const int64_t gsz = cg * inner;
  const float eps = n.attrs.eps;

  KernelOut out;
  out.shape = x.shape;
  out.data.resize(x.data.size());
  if (saved) saved->assign(static_cast<size_t>(N) * G * 2, 0.0f);
  for (int nn = 0; nn < N; ++nn) {
    for (int g = 0; g < G; ++g) {
      const size_t base = (static_cast<size_t>(nn) * C + static_cast<size_t>(g) * cg) * inner;
      float mean_acc = 0.0f;
      for (int64_t i = 0; i < gsz; ++i) mean_acc += x.data[base + i];
      const float mu = mean_acc / static_cast<float>(gsz);
      float var_acc = 0.0f;
      for (int64_t i = 0; i < gsz; ++i) {
        const float d = x.data[base + i] - mu;
        var_acc += d * d;
      }
      const float inv_std = 1.0f / std::sqrt(var_acc / static_cast<float>(gsz) + eps);
      if (saved) {
        (*saved)[(static_cast<size_t>(nn) * G + g) * 2] = mu;
        (*saved)[(static_cast<size_t>(nn) * G + g) * 2 + 1] = inv_std;
      }
      for (int c = 0; c < cg; ++c) {
        const float gm = gamma.data[static_cast<size_t>(g * cg + c)];
        const float bt = beta.data[static_cast<size_t>(g * cg + c)];
        const size_t cbase = base + static_cast<size_t>(c) * inner;
        for (int64_t i = 0; i < inner; ++i)
          out.data[cbase + i] = gm * (x.data[cbase + i] - mu) * inv_std + bt;
      }
    }
  }
  return out;
}

void group_norm_bwd(Node& n) {
  auto& x = *n.inputs[0];
  auto& gamma = *n.inputs[1];
  auto& beta = *n.inputs[2];
  const auto& dout = n.output->grad;
  const int N = x.shape[0], C = x.shape[1];
  const int G = n.attrs.groups;
  const int64_t inner = numel(x.shape) / (static_cast<int64_t>(N) * C);
  const int cg = C / G;
  const int64_t gsz = cg * inner;

  if (gamma.requires_grad) gamma.ensure_grad();
  if (beta.requires_grad) beta.ensure_grad();
  if (x.requires_grad) x.ensure_grad();

  for (int nn = 0; nn < N; ++nn) {
    for (int g = 0; g < G; ++g) {
      const float mu = n.saved[(static_cast<size_t>(nn) * G + g) * 2];
      const float inv_std = n.saved[(static_cast<size_t>(nn) * G + g) * 2 + 1];
      const size_t base = (static_cast<size_t>(nn) * C + static_cast<size_t>(g) * cg) * inner;
      if (x.requires_grad) {
        float sum_dxh = 0.0f, sum_dxh_xh = 0.0f;
        for (int c = 0; c < cg; ++c) {
          const float gm = gamma.data[static_cast<size_t>(g * cg + c)];
          const size_t cbase = base + static_cast<size_t>(c) * inner;
          for (int64_t i = 0; i < inner; ++i) {
            const float xh = (x.data[cbase + i] - mu) * inv_std;
            const float dxh = dout[cbase + i] * gm;
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh;
          }
        }
        const float inv_m = 1.0f / static_cast<float>(gsz);
        for (int c = 0; c < cg; ++c) {
          const float gm = gamma.data[static_cast<size_t>(g * cg + c)];
          const size_t cbase = base + static_cast<size_t>(c) * inner;
          for (int64_t i = 0; i < inner; ++i) {
            const float xh = (x.data[cbase + i] - mu) * inv_std;
            const float dxh = dout[cbase + i] * gm;
            x.grad[cbase + i] += inv_std * (dxh - inv_m * sum_dxh - xh * inv_m * sum_dxh_xh);
          }
        }
      }
      if (gamma.requires_grad || beta.requires_grad) {
        for (int c = 0; c < cg; ++c) {
          const size_t cbase = base + static_cast<size_t>(c) * inner;
          float dg = 0.0f, db = 0.0f;
          for (int64_t i = 0; i < inner; ++i) {
            const float xh = (x.data[cbase + i] - mu) * inv_std;
            dg += dout[cbase + i] * xh;
            db += dout[cbase + i];
          }
          if (gamma.requires_grad) gamma.grad[static_cast<size_t>(g * cg + c)] += dg;
          if (beta.requires_grad) beta.grad[static_cast<size_t>(g * cg + c)] += db;
        }
      }
    }
  }
}

KernelOut scale_embed_add_fwd(const Node& n) {
  const auto& x = *n.inputs[0];
  const auto& e = *n.inputs[1];
  require(x.shape.size() >= 2 && e.shape.size() == 2, "scale_embed_add: expects x [N,C,...], emb [N,C]");
  require(x.shape[0] == e.shape[0] && x.shape[1] == e.shape[1],
          "scale_embed_add: shapes " + shape_str(x.shape) + " vs " + shape_str(e.shape));
  const int N = x.shape[0], C = x.shape[1];
  const int64_t inner = numel(x.shape) / (static_cast<int64_t>(N) * C);
  KernelOut out;
  out.shape = x.shape;
  out.data.resize(x.data.size());
  for (int nn = 0; nn < N; ++nn)
    for (int c = 0; c < C; ++c) {
      const float ev = e.data[static_cast<size_t>(nn) * C + c];
      const size_t base = (static_cast<size_t>(nn) * C + c) * inner;
      for (int64_t i = 0; i < inner; ++i) out.data[base + i] = x.data[base + i] + ev;
    }
  return out;
}

void scale_embed_add_bwd(Node& n) {
  auto& x = *n.inputs[0];
  auto& e = *n.inputs[1];
  const auto& dout = n.output->grad;
  const int N = x.shape[0], C = x.shape[1];
  const int64_t inner = numel(x.shape) / (static_cast<int64_t>(N) * C);
  if (x.requires_grad) {
    x.ensure_grad();
    for (size_t i = 0; i < dout.size(); ++i) x.grad[i] += dout[i];
  }
  if (e.requires_grad) {
    e.ensure_grad();
    for (int nn = 0; nn < N; ++nn)
      for (int c = 0; c < C; ++c) {
        const size_t base = (static_cast<size_t>(nn) * C + c) * inner;
        float acc = 0.0f;
        for (int64_t i = 0; i < inner; ++i) acc += dout[base + i];
        e.grad[static_cast<size_t>(nn) * C + c] += acc;
      }
  }
}

KernelOut run_forward(const Node& n, std::vector<float>* saved) {
  for (const auto& in : n.inputs) check_finite_vec(op_name(n.op), in->data);
  switch (n.op) {
    case Op::kConv2d: return conv2d_fwd(n);
    case Op::kLinear: return linear_fwd(n);
    case Op::kMatmul: return matmul_fwd(n);
    case Op::kAdd: {
      const auto& a = *n.inputs[0];
      const auto& b = *n.inputs[1];
      require(a.shape == b.shape, "add: shape mismatch " + shape_str(a.shape) + " vs " +
                                      shape_str(b.shape));
      KernelOut out{a.shape, std::vector<float>(a.data.size())};
      for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
      return out;
    }
    case Op::kMul: return mul_fwd(n);
    case Op::kConcat: return concat_fwd(n);
    case Op::kReshape: {
      const auto& x = *n.inputs[0];
      require(numel(n.attrs.target_shape) == numel(x.shape),
              "reshape: cannot view " + shape_str(x.shape) + " as " +
                  shape_str(n.attrs.target_shape));
      return KernelOut{n.attrs.target_shape, x.data};
    }
    case Op::kSoftmax: return softmax_fwd(n);
    case Op::kSilu: {
      const auto& x = *n.inputs[0];
      KernelOut out{x.shape, std::vector<float>(x.data.size())};
      for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] * sigmoid_f(x.data[i]);
      return out;
    }
    case Op::kSigmoid: {
      const auto& x = *n.inputs[0];
      KernelOut out{x.shape, std::vector<float>(x.data.size())};
      for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = sigmoid_f(x.data[i]);
      return out;
    }
    case Op::kGroupNorm: return group_norm_fwd(n, saved);
    case Op::kMean: {
      const auto& x = *n.inputs[0];
      float acc = 0.0f;
      for (float v : x.data) acc += v;
      return KernelOut{{1}, {acc / static_cast<float>(x.data.size())}};
    }
    case Op::kMseLoss: {
      const auto& a = *n.inputs[0];
      const auto& b = *n.inputs[1];
      require(a.shape == b.shape, "mse_loss: shape mismatch " + shape_str(a.shape) + " vs " +
                                      shape_str(b.shape));
      float acc = 0.0f;
      for (size_t i = 0; i < a.data.size(); ++i) {
        const float d = a.data[i] - b.data[i];
        acc += d * d;
      }
      return KernelOut{{1}, {acc / static_cast<float>(a.data.size())}};
    }
    case Op::kClamp: {
      const auto& x = *n.inputs[0];
      require(n.attrs.lo < n.attrs.hi, "clamp: lo must be < hi");
      KernelOut out{x.shape, std::vector<float>(x.data.size())};
      for (size_t i = 0; i < x.data.size(); ++i)
        out.data[i] = std::min(n.attrs.hi, std::max(n.attrs.lo, x.data[i]));
      return out;
    }
    case Op::kScaleEmbedAdd: return scale_embed_add_fwd(n);
    case Op::kCustom: {
      KernelOut out;
      out.data = n.custom_forward(n);
      out.shape = n.output ? n.output->shape : Shape{};
      return out;
    }
  }
  throw Error("run_forward: unhandled op");
}

void run_backward(Node& n) {
  switch (n.op) {
    case Op::kConv2d: conv2d_bwd(n); return;
    case Op::kLinear: linear_bwd(n); return;
    case Op::kMatmul: matmul_bwd(n); return;
    case Op::kAdd: {
      const auto& dout = n.output->grad;
      for (auto& in : n.inputs)
        if (in->requires_grad) {
          in->ensure_grad();
          for (size_t i = 0; i < dout.size(); ++i) in->grad[i] += dout[i];
        }
      return;
    }
    case Op::kMul: mul_bwd(n); return;
    case Op::kConcat: concat_bwd(n); return;
    case Op::kReshape: {
      auto& x = *n.inputs[0];
      if (x.requires_grad) {
        x.ensure_grad();
        const auto& dout = n.output->grad;
        for (size_t i = 0; i < dout.size(); ++i) x.grad[i] += dout[i];
      }
      return;
    }
    case Op::kSoftmax: softmax_bwd(n); return;
    case Op::kSilu: {
      auto& x = *n.inputs[0];
      if (!x.requires_grad) return;
      x.ensure_grad();
      const auto& dout = n.output->grad;
      for (size_t i = 0; i < dout.size(); ++i) {
        const float s = sigmoid_f(x.data[i]);
        x.grad[i] += dout[i] * s * (1.0f + x.data[i] * (1.0f - s));
      }
      return;
    }
    case Op::kSigmoid: {
      auto& x = *n.inputs[0];
      if (!x.requires_grad) return;
      x.ensure_grad();
      const auto& y = n.output->data;
      const auto& dout = n.output->grad;
      for (size_t i = 0; i < dout.size(); ++i) x.grad[i] += dout[i] * y[i] * (1.0f - y[i]);
      return;
    }
    case Op::kGroupNorm: group_norm_bwd(n); return;
    case Op::kMean: {
      auto& x = *n.inputs[0];
      if (!x.requires_grad) return;
      x.ensure_grad();
      const float g = n.output->grad[0] / static_cast<float>(x.data.size());
      for (auto& v : x.grad) v += g;
      return;
    }
    case Op::kMseLoss: {
      auto& a = *n.inputs[0];
      auto& b = *n.inputs[1];
      const float g = n.output->grad[0] * 2.0f / static_cast<float>(a.data.size());
      if (a.requires_grad) {
        a.ensure_grad();
        for (size_t i = 0; i < a.data.size(); ++i) a.grad[i] += g * (a.data[i] - b.data[i]);
      }
      if (b.requires_grad) {
        b.ensure_grad();
        for (size_t i = 0; i < a.data.size(); ++i) b.grad[i] -= g * (a.data[i] - b.data[i]);
      }
      return;
    }
    case Op::kClamp: {
      auto& x = *n.inputs[0];
      if (!x.requires_grad) return;
      x.ensure_grad();
      const auto& dout = n.output->grad;
      for (size_t i = 0; i < dout.size(); ++i)
        if (x.data[i] > n.attrs.lo && x.data[i] < n.attrs.hi) x.grad[i] += dout[i];
      return;
    }
    case Op::kScaleEmbedAdd: scale_embed_add_bwd(n); return;
    case Op::kCustom: n.custom_backward(n); return;
  }
}

}  // namespace

bool Tape::replay_matches() const {
  for (const auto& n : nodes_) {
    KernelOut re = run_forward(n, nullptr);
    if (re.data.size() != n.output->data.size()) return false;
    if (std::memcmp(re.data.data(), n.output->data.data(), re.data.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

Tensor forward_op(Op op, const std::vector<Tensor>& inputs, const OpAttrs& attrs, Tape* tape) {
  Node node;
  node.op = op;
  node.attrs = attrs;
  for (const auto& t : inputs) {
    if (!t.defined()) throw Error(std::string(op_name(op)) + ": undefined input tensor");
    node.inputs.push_back(t.impl());
  }
  KernelOut out = run_forward(node, &node.saved);

  Tensor result(std::move(out.shape), std::move(out.data));
  bool rg = false;
  for (const auto& t : inputs) rg = rg || t.requires_grad();
  result.set_requires_grad(rg);
  node.output = result.impl();
  if (tape) tape->nodes().push_back(std::move(node));
  return result;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
  return forward_op(Op::kConv2d, {x, w, b}, {}, tape);
}
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
  return forward_op(Op::kLinear, {x, w, b}, {}, tape);
}
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b, float scale,
              Tape* tape) {
  OpAttrs at;
  at.trans_a = trans_a;
  at.trans_b = trans_b;
  at.scale = scale;
  return forward_op(Op::kMatmul, {a, b}, at, tape);
}
Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  return forward_op(Op::kAdd, {a, b}, {}, tape);
}
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  return forward_op(Op::kMul, {a, b}, {}, tape);
}
Tensor concat(const std::vector<Tensor>& xs, int axis, Tape* tape) {
  OpAttrs at;
  at.axis = axis;
  return forward_op(Op::kConcat, xs, at, tape);
}
Tensor reshape(const Tensor& x, Shape shape, Tape* tape) {
  OpAttrs at;
  at.target_shape = std::move(shape);
  return forward_op(Op::kReshape, {x}, at, tape);
}
Tensor softmax(const Tensor& x, Tape* tape) { return forward_op(Op::kSoftmax, {x}, {}, tape); }
Tensor silu(const Tensor& x, Tape* tape) { return forward_op(Op::kSilu, {x}, {}, tape); }
Tensor sigmoid(const Tensor& x, Tape* tape) { return forward_op(Op::kSigmoid, {x}, {}, tape); }
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, Tape* tape,
                  float eps) {
  OpAttrs at;
  at.groups = groups;
  at.eps = eps;
  return forward_op(Op::kGroupNorm, {x, gamma, beta}, at, tape);
}
Tensor mean(const Tensor& x, Tape* tape) { return forward_op(Op::kMean, {x}, {}, tape); }
Tensor mse_loss(const Tensor& a, const Tensor& b, Tape* tape) {
  return forward_op(Op::kMseLoss, {a, b}, {}, tape);
}
Tensor clamp(const Tensor& x, float lo, float hi, Tape* tape) {
  OpAttrs at;
  at.lo = lo;
  at.hi = hi;
  return forward_op(Op::kClamp, {x}, at, tape);
}
Tensor scale_embed_add(const Tensor& x, const Tensor& emb, Tape* tape) {
  return forward_op(Op::kScaleEmbedAdd, {x, emb}, {}, tape);
}

Tensor record_custom(Tape* tape, Node node) {
  Tensor result(node.output->shape, node.output->data);
  bool rg = false;
  for (const auto& in : node.inputs) rg = rg || in->requires_grad;
  result.set_requires_grad(rg);
  node.output = result.impl();
  if (tape) tape->nodes().push_back(std::move(node));
  return result;
}

void backward(Tape& tape, const Tensor& loss) {
  if (loss.size() != 1)
    throw NumericError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0f;
  auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not on the path to the loss
    run_backward(*it);
  }
}

double finite_difference_check(const std::function<Tensor(const Tensor&, Tape*)>& f,
                               const Tensor& x0, double h) {
  if (!(h > 0.0 && h <= 0.1)) throw Error("finite_difference_check: h must be in (0, 0.1]");
  Tensor x = x0.clone();
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss = f(x, &tape);
  if (loss.size() != 1) throw NumericError("finite_difference_check: f must be scalar-valued");
  backward(tape, loss);
  std::vector<float> g(x.size(), 0.0f);
  if (x.has_grad()) g = x.grad();

  double worst = 0.0;
  for (int64_t i = 0; i < x0.size(); ++i) {
    Tensor xp = x0.clone();
    xp.raw_data()[static_cast<size_t>(i)] += static_cast<float>(h);
    Tensor xm = x0.clone();
    xm.raw_data()[static_cast<size_t>(i)] -= static_cast<float>(h);
    const double lp = f(xp, nullptr).item();
    const double lm = f(xm, nullptr).item();
    const double fd = (lp - lm) / (2.0 * h);
    const double analytic = g[static_cast<size_t>(i)];
    worst = std::max(worst, std::abs(analytic - fd) / (std::abs(analytic) + 1e-8));
  }
  return worst;
}

void check_finite(const char* what, const Tensor& t) {
  for (float v : t.data())
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
}

Tensor axpby(float a, const Tensor& x, float b, const Tensor& y) {
  if (x.shape() != y.shape())
    throw ShapeError("axpby: shape mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  Tensor out(x.shape(), 0.0f);
  auto& o = out.raw_data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = a * x.data()[i] + b * y.data()[i];
  return out;
}

Tensor scale(const Tensor& x, float a) {
  Tensor out(x.shape(), 0.0f);
  auto& o = out.raw_data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = a * x.data()[i];
  return out;
}

Tensor clip_values(const Tensor& x, float lo, float hi) {
  Tensor out(x.shape(), 0.0f);
  auto& o = out.raw_data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = std::min(hi, std::max(lo, x.data()[i]));
  return out;
}

}  // namespace tcaq
