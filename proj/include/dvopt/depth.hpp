#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dvopt/image.hpp"

namespace dvopt {

// Depth is parameterized through an unconstrained per-pixel logit l with
// z = softplus(l) = log(1 + exp(l)), which keeps depth strictly positive.

inline double softplus(double l) {
  if (l > 30.0) {
    return l + std::exp(-l);  // log1p(exp(-l)) to first order
  }
  if (l < -30.0) {
    double z = std::exp(l);
    // exp underflows to zero for very negative inputs; keep positivity.
    return z > 0.0 ? z : std::numeric_limits<double>::denorm_min();
  }
  return std::log1p(std::exp(l));
}

// d softplus / d l, the logistic function.
inline double softplus_deriv(double l) {
  if (l >= 0.0) {
    return 1.0 / (1.0 + std::exp(-l));
  }
  const double e = std::exp(l);
  return e / (1.0 + e);
}

// Inverse of softplus for z > 0.
inline double softplus_inverse(double z) {
  if (!(z > 0.0)) {
    throw std::invalid_argument("softplus_inverse: input must be positive");
  }
  if (z > 30.0) {
    return z - std::exp(-z);
  }
  return std::log(std::expm1(z));
}

// Elementwise softplus over a logit grid. Rejects non-finite logits.
inline ImageGrid depth_from_logits(const ImageGrid& logits) {
  ImageGrid depth(logits.width, logits.height, logits.channels);
  for (size_t i = 0; i < logits.data.size(); ++i) {
    const double l = logits.data[i];
    if (!std::isfinite(l)) {
      throw std::invalid_argument("depth_from_logits: non-finite logit at index " +
                                  std::to_string(i));
    }
    depth.data[i] = softplus(l);
  }
  return depth;
}

// Elementwise logistic, the derivative grid matching depth_from_logits.
inline ImageGrid depth_logit_deriv(const ImageGrid& logits) {
  ImageGrid d(logits.width, logits.height, logits.channels);
  for (size_t i = 0; i < logits.data.size(); ++i) {
    d.data[i] = softplus_deriv(logits.data[i]);
  }
  return d;
}

}  // namespace dvopt
