#include "metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tcaq {

LayerError layer_error(const Tensor& fp_acts, const Tensor& q_acts) {
  if (fp_acts.shape() != q_acts.shape())
    throw ShapeError("layer_error: shape mismatch " + shape_str(fp_acts.shape()) + " vs " +
                     shape_str(q_acts.shape()));
  double err = 0.0, sig = 0.0;
  for (int64_t i = 0; i < fp_acts.size(); ++i) {
    const double d = static_cast<double>(q_acts.at(i)) - fp_acts.at(i);
    err += d * d;
    sig += static_cast<double>(fp_acts.at(i)) * fp_acts.at(i);
  }
  LayerError out;
  out.mse = err / static_cast<double>(fp_acts.size());
  if (err == 0.0)
    out.sqnr_db = std::numeric_limits<double>::infinity();
  else if (sig == 0.0)
    out.sqnr_db = -std::numeric_limits<double>::infinity();
  else
    out.sqnr_db = 10.0 * std::log10(sig / err);
  return out;
}

void eigh_symmetric(std::vector<double>& a, int n, std::vector<double>& evals) {
  auto at = [&](int r, int c) -> double& { return a[static_cast<size_t>(r) * n + c]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int r = 0; r < n; ++r)
      for (int c = r + 1; c < n; ++c) off += at(r, c) * at(r, c);
    if (off < 1e-22) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  evals.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) evals[static_cast<size_t>(i)] = at(i, i);
}

namespace {

struct Moments {
  int n = 0, d = 0;
  std::vector<double> mean;
  std::vector<double> cov;  // d*d, 1/n estimator
};

Moments compute_moments(const Tensor& samples, bool full_cov) {
  const Shape& s = samples.shape();
  if (s.empty() || s[0] < 1) throw Error("fmd: empty sample batch");
  Moments m;
  m.n = s[0];
  m.d = static_cast<int>(numel(s) / s[0]);
  m.mean.assign(static_cast<size_t>(m.d), 0.0);
  for (int i = 0; i < m.n; ++i)
    for (int j = 0; j < m.d; ++j)
      m.mean[static_cast<size_t>(j)] += samples.at(static_cast<int64_t>(i) * m.d + j);
  for (auto& v : m.mean) v /= m.n;
  if (full_cov) {
    m.cov.assign(static_cast<size_t>(m.d) * m.d, 0.0);
    std::vector<double> centered(static_cast<size_t>(m.d));
    for (int i = 0; i < m.n; ++i) {
      for (int j = 0; j < m.d; ++j)
        centered[static_cast<size_t>(j)] =
            samples.at(static_cast<int64_t>(i) * m.d + j) - m.mean[static_cast<size_t>(j)];
      for (int r = 0; r < m.d; ++r)
        for (int c = r; c < m.d; ++c)
          m.cov[static_cast<size_t>(r) * m.d + c] += centered[static_cast<size_t>(r)] *
                                                     centered[static_cast<size_t>(c)];
    }
    for (int r = 0; r < m.d; ++r)
      for (int c = r; c < m.d; ++c) {
        m.cov[static_cast<size_t>(r) * m.d + c] /= m.n;
        m.cov[static_cast<size_t>(c) * m.d + r] = m.cov[static_cast<size_t>(r) * m.d + c];
      }
  } else {
    m.cov.assign(static_cast<size_t>(m.d), 0.0);  // diagonal only
    for (int i = 0; i < m.n; ++i)
      for (int j = 0; j < m.d; ++j) {
        const double c = samples.at(static_cast<int64_t>(i) * m.d + j) -
                         m.mean[static_cast<size_t>(j)];
        m.cov[static_cast<size_t>(j)] += c * c;
      }
    for (auto& v : m.cov) v /= m.n;
  }
  return m;
}

// V diag(sqrt(max(lambda,0))) V^T of a symmetric PSD matrix
std::vector<double> sqrt_psd(const std::vector<double>& a_in, int n) {
  // Jacobi with eigenvector accumulation
  std::vector<double> a = a_in;
  std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;
  auto at = [&](int r, int c) -> double& { return a[static_cast<size_t>(r) * n + c]; };
  auto vt = [&](int r, int c) -> double& { return v[static_cast<size_t>(r) * n + c]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int r = 0; r < n; ++r)
      for (int c = r + 1; c < n; ++c) off += at(r, c) * at(r, c);
    if (off < 1e-22) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = vt(k, p), vkq = vt(k, q);
          vt(k, p) = c * vkp - s * vkq;
          vt(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
  for (int k = 0; k < n; ++k) {
    const double lam = std::sqrt(std::max(0.0, at(k, k)));
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        out[static_cast<size_t>(r) * n + c] += lam * vt(r, k) * vt(c, k);
  }
  return out;
}

std::vector<double> matmul_sq(const std::vector<double>& a, const std::vector<double>& b, int n) {
  std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
  for (int r = 0; r < n; ++r)
    for (int k = 0; k < n; ++k) {
      const double av = a[static_cast<size_t>(r) * n + k];
      for (int c = 0; c < n; ++c) out[static_cast<size_t>(r) * n + c] += av * b[static_cast<size_t>(k) * n + c];
    }
  return out;
}

}  // namespace

double fmd(const Tensor& samples_a, const Tensor& samples_b) {
  Moments ma = compute_moments(samples_a, true);
  Moments mb = compute_moments(samples_b, true);
  if (ma.d != mb.d) throw ShapeError("fmd: sample dimensionality mismatch");
  const int d = ma.d;
  if (ma.n < d + 1 || mb.n < d + 1)
    throw Error("fmd: need at least dim+1 = " + std::to_string(d + 1) +
                " samples per side, got " + std::to_string(ma.n) + " and " +
                std::to_string(mb.n));
  for (int i = 0; i < d; ++i) {
    ma.cov[static_cast<size_t>(i) * d + i] += 1e-6;
    mb.cov[static_cast<size_t>(i) * d + i] += 1e-6;
  }
  double mean_term = 0.0;
  for (int i = 0; i < d; ++i) {
    const double dm = ma.mean[static_cast<size_t>(i)] - mb.mean[static_cast<size_t>(i)];
    mean_term += dm * dm;
  }
  double tr_a = 0.0, tr_b = 0.0;
  for (int i = 0; i < d; ++i) {
    tr_a += ma.cov[static_cast<size_t>(i) * d + i];
    tr_b += mb.cov[static_cast<size_t>(i) * d + i];
  }
  // tr sqrt(Sa Sb) = tr sqrt(sqrt(Sa) Sb sqrt(Sa)) with a symmetric argument
  std::vector<double> root_a = sqrt_psd(ma.cov, d);
  std::vector<double> inner = matmul_sq(matmul_sq(root_a, mb.cov, d), root_a, d);
  // symmetrize against roundoff before the eigen-decomposition
  for (int r = 0; r < d; ++r)
    for (int c = r + 1; c < d; ++c) {
      const double m = 0.5 * (inner[static_cast<size_t>(r) * d + c] +
                              inner[static_cast<size_t>(c) * d + r]);
      inner[static_cast<size_t>(r) * d + c] = m;
      inner[static_cast<size_t>(c) * d + r] = m;
    }
  std::vector<double> evals;
  eigh_symmetric(inner, d, evals);
  double tr_sqrt = 0.0;
  for (double l : evals) tr_sqrt += std::sqrt(std::max(0.0, l));
  return mean_term + tr_a + tr_b - 2.0 * tr_sqrt;
}

double diagonal_moment_distance(const Tensor& samples_a, const Tensor& samples_b) {
  Moments ma = compute_moments(samples_a, false);
  Moments mb = compute_moments(samples_b, false);
  if (ma.d != mb.d)
    throw ShapeError("diagonal_moment_distance: sample dimensionality mismatch");
  double acc = 0.0;
  for (int i = 0; i < ma.d; ++i) {
    const double dm = ma.mean[static_cast<size_t>(i)] - mb.mean[static_cast<size_t>(i)];
    const double sa = std::sqrt(ma.cov[static_cast<size_t>(i)]);
    const double sb = std::sqrt(mb.cov[static_cast<size_t>(i)]);
    acc += dm * dm + (sa - sb) * (sa - sb);
  }
  return acc;
}

}  // namespace tcaq
