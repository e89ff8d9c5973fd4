#pragma once

#include <string>
#include <vector>

#include "core/errors.hpp"

namespace tcaq {

// Raised when a tail is too small or degenerate to fit; callers fall back to
// the uniform quantizer.
struct InsufficientTailError : Error {
  using Error::Error;
};

// Continuous power law p(x) = (alpha-1)/x_min * (x/x_min)^-alpha on
// [x_min, inf). alpha is the density exponent; the survival function is
// c * x^-(alpha-1) with c = x_min^(alpha-1).
struct PowerLawFit {
  double alpha = 0.0;
  double x_min = 0.0;
  double c = 0.0;
  double loglik = 0.0;
  int n_tail = 0;
};

enum class AltFamily { kExponential, kLogNormal };
const char* alt_family_name(AltFamily f);

// MLE fit with the cutoff chosen by Kolmogorov-Smirnov distance over a
// 20-point quantile grid between the 50th and 95th percentiles. Needs at
// least `min_tail` samples above the cutoff.
PowerLawFit fit_power_law(std::vector<float> samples, int min_tail = 50);

// Log-likelihood of an alternative family fitted on exactly the tail
// {x >= x_min} of the given samples (so likelihoods are comparable):
// exponential shifted at x_min, or log-normal renormalized over [x_min, inf).
double fit_alternative(const std::vector<float>& samples, AltFamily family, double x_min);

// per-sample normalized log-likelihood difference, power law minus the best
// alternative; positive means the power law wins
double likelihood_ratio(const PowerLawFit& fit, const std::vector<double>& alt_logliks);

}  // namespace tcaq
