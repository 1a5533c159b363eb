#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvopt {

// Bias-corrected Adam on a flat parameter vector.
struct AdamState {
  std::vector<double> m;  // first-moment accumulator
  std::vector<double> v;  // second-moment accumulator
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lr = 1e-3;
  double eps = 1e-8;

  static AdamState init(size_t n, double lr = 1e-3, double beta1 = 0.9,
                        double beta2 = 0.999, double eps = 1e-8) {
    AdamState s;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    return s;
  }
};

// One Adam update in place. The name labels the parameter group in error
// messages when a non-finite gradient is rejected.
inline void adam_step(std::vector<double>& params,
                      const std::vector<double>& grads, AdamState& state,
                      const std::string& name = "params") {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size()) {
    throw std::invalid_argument("adam_step: size mismatch for " + name);
  }
  for (size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw std::invalid_argument("adam_step: non-finite gradient in " + name +
                                  " at index " + std::to_string(i));
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

}  // namespace dvopt
