#include "daq/powerlaw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tcaq {

const char* alt_family_name(AltFamily f) {
  return f == AltFamily::kExponential ? "exponential" : "lognormal";
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// first index with v[i] >= x_min
size_t tail_begin(const std::vector<float>& sorted, double x_min) {
  return static_cast<size_t>(
      std::lower_bound(sorted.begin(), sorted.end(), static_cast<float>(x_min)) -
      sorted.begin());
}

}  // namespace

PowerLawFit fit_power_law(std::vector<float> samples, int min_tail) {
  for (float v : samples)
    if (!(v > 0.0f)) throw Error("fit_power_law: samples must be strictly positive");
  if (static_cast<int>(samples.size()) < min_tail)
    throw InsufficientTailError("fit_power_law: insufficient tail (" +
                                std::to_string(samples.size()) + " samples)");
  std::sort(samples.begin(), samples.end());
  const size_t n = samples.size();

  double best_ks = std::numeric_limits<double>::max();
  double best_xmin = 0.0, best_alpha = 0.0;
  size_t best_begin = 0;
  double last_candidate = -1.0;
  for (int qi = 0; qi < 20; ++qi) {
    const double q = 0.50 + 0.45 * static_cast<double>(qi) / 19.0;
    const double x_min = samples[static_cast<size_t>(q * static_cast<double>(n - 1))];
    if (x_min == last_candidate) continue;  // duplicate quantile value
    last_candidate = x_min;
    const size_t begin = tail_begin(samples, x_min);
    const size_t n_t = n - begin;
    if (static_cast<int>(n_t) < min_tail) continue;
    double log_sum = 0.0;
    for (size_t i = begin; i < n; ++i) log_sum += std::log(samples[i] / x_min);
    if (!(log_sum > 0.0)) continue;  // degenerate (all tail values equal)
    const double alpha = 1.0 + static_cast<double>(n_t) / log_sum;
    // two-sided KS distance between the empirical tail and the model CDF
    double ks = 0.0;
    for (size_t i = begin; i < n; ++i) {
      const double f_model = 1.0 - std::pow(samples[i] / x_min, -(alpha - 1.0));
      const double hi = static_cast<double>(i - begin + 1) / static_cast<double>(n_t);
      const double lo = static_cast<double>(i - begin) / static_cast<double>(n_t);
      ks = std::max(ks, std::max(std::abs(hi - f_model), std::abs(f_model - lo)));
    }
    if (ks < best_ks) {
      best_ks = ks;
      best_xmin = x_min;
      best_alpha = alpha;
      best_begin = begin;
    }
  }
  if (best_xmin == 0.0)
    throw InsufficientTailError("fit_power_law: no usable cutoff (degenerate sample)");

  PowerLawFit fit;
  fit.alpha = best_alpha;
  fit.x_min = best_xmin;
  fit.c = std::pow(best_xmin, best_alpha - 1.0);
  fit.n_tail = static_cast<int>(samples.size() - best_begin);
  double ll = 0.0;
  for (size_t i = best_begin; i < samples.size(); ++i)
    ll += std::log(best_alpha - 1.0) - std::log(best_xmin) -
          best_alpha * std::log(samples[i] / best_xmin);
  fit.loglik = ll;
  if (!std::isfinite(fit.loglik)) throw Error("fit_power_law: non-finite log-likelihood");
  return fit;
}

double fit_alternative(const std::vector<float>& samples, AltFamily family, double x_min) {
  std::vector<float> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const size_t begin = tail_begin(sorted, x_min);
  const size_t n_t = sorted.size() - begin;
  if (n_t < 2) throw Error("fit_alternative: tail too small");

  if (family == AltFamily::kExponential) {
    double mean = 0.0;
    for (size_t i = begin; i < sorted.size(); ++i) mean += sorted[i];
    mean /= static_cast<double>(n_t);
    const double rate_inv = mean - x_min;
    if (!(rate_inv > 0.0)) throw Error("fit_alternative: degenerate exponential tail");
    const double lambda = 1.0 / rate_inv;
    double ll = 0.0;
    for (size_t i = begin; i < sorted.size(); ++i)
      ll += std::log(lambda) - lambda * (sorted[i] - x_min);
    return ll;
  }

  // log-normal: MLE of ln x on the tail, density renormalized over [x_min, inf)
  double mu = 0.0;
  for (size_t i = begin; i < sorted.size(); ++i) mu += std::log(sorted[i]);
  mu /= static_cast<double>(n_t);
  double var = 0.0;
  for (size_t i = begin; i < sorted.size(); ++i) {
    const double d = std::log(sorted[i]) - mu;
    var += d * d;
  }
  var /= static_cast<double>(n_t);
  if (!(var > 0.0)) throw Error("fit_alternative: lognormal sigma is zero");
  const double sigma = std::sqrt(var);
  const double tail_mass = 1.0 - normal_cdf((std::log(x_min) - mu) / sigma);
  const double renorm = std::log(std::max(tail_mass, 1e-300));
  double ll = 0.0;
  for (size_t i = begin; i < sorted.size(); ++i) {
    const double lx = std::log(sorted[i]);
    ll += -lx - std::log(sigma) - 0.5 * std::log(2.0 * 3.14159265358979323846) -
          (lx - mu) * (lx - mu) / (2.0 * var) - renorm;
  }
  return ll;
}

double likelihood_ratio(const PowerLawFit& fit, const std::vector<double>& alt_logliks) {
  if (alt_logliks.empty()) throw Error("likelihood_ratio: no alternatives");
  double best_alt = alt_logliks[0];
  for (double ll : alt_logliks) best_alt = std::max(best_alt, ll);
  return (fit.loglik - best_alt) / static_cast<double>(fit.n_tail);
}

}  // namespace tcaq
