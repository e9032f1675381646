#pragma once

#include <algorithm>
#include <cmath>

#include "errors.hpp"

// Continuous quantal response over a utility value u in [-1, 1]:
//
//   p(u | lambda) = lambda * exp(lambda * (1 + u)) / (exp(2 * lambda) - 1),   lambda != 0
//   p(u | 0)      = 1/2
//
// Positive lambda favors high utility, negative lambda low utility, and the
// density integrates to one over [-1, 1] for every lambda.

namespace brsim {

namespace detail {

inline void check_lambda(double lambda) {
  if (!std::isfinite(lambda)) throw DomainError("rationality parameter must be finite");
}

}  // namespace detail

inline double component_density(double u, double lambda) {
  if (std::isnan(u) || u < -1.0 || u > 1.0) throw DomainError("component_density: u outside [-1, 1]");
  detail::check_lambda(lambda);
  if (lambda == 0.0) return 0.5;
  // Factor out the dominant exponential so |lambda| up to a few hundred stays finite.
  if (lambda > 0.0) return lambda * std::exp(lambda * (u - 1.0)) / -std::expm1(-2.0 * lambda);
  return lambda * std::exp(lambda * (u + 1.0)) / std::expm1(2.0 * lambda);
}

/// CDF of the density truncated and renormalized to [u_lo, u_hi].
inline double component_cdf(double u, double lambda, double u_lo = -1.0, double u_hi = 1.0) {
  detail::check_lambda(lambda);
  if (!(u_lo < u_hi)) throw DomainError("component_cdf: empty interval");
  if (u <= u_lo) return 0.0;
  if (u >= u_hi) return 1.0;
  const double width = u_hi - u_lo;
  if (lambda == 0.0) return (u - u_lo) / width;
  if (lambda > 0.0) {
    return std::exp(lambda * (u - u_hi)) * std::expm1(-lambda * (u - u_lo)) / std::expm1(-lambda * width);
  }
  return std::expm1(lambda * (u - u_lo)) / std::expm1(lambda * width);
}

inline double component_cdf_inverse(double p, double lambda, double u_lo = -1.0, double u_hi = 1.0) {
  if (std::isnan(p) || p < 0.0 || p > 1.0) throw DomainError("component_cdf_inverse: p outside [0, 1]");
  detail::check_lambda(lambda);
  if (std::isnan(u_lo) || std::isnan(u_hi) || u_lo < -1.0 || u_hi > 1.0 || !(u_lo < u_hi)) {
    throw DomainError("component_cdf_inverse: need -1 <= u_lo < u_hi <= 1");
  }
  if (p == 0.0) return u_lo;
  if (p == 1.0) return u_hi;
  const double width = u_hi - u_lo;
  double u;
  if (lambda == 0.0) {
    u = u_lo + p * width;
  } else if (lambda > 0.0) {
    u = u_hi + std::log(p + (1.0 - p) * std::exp(-lambda * width)) / lambda;
  } else {
    u = u_lo + std::log1p(p * std::expm1(lambda * width)) / lambda;
  }
  return std::clamp(u, u_lo, u_hi);
}

}  // namespace brsim
