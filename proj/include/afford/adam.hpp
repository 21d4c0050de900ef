#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "afford/tensor.hpp"

namespace afford {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Per-tensor Adam state. Moments are kept in 64-bit so the recurrence matches
// the textbook one exactly; parameters themselves stay 32-bit.
struct AdamState {
  long step = 0;
  std::vector<double> m, v;

  static AdamState for_shape(const Tensor& params) {
    AdamState s;
    s.m.assign(params.data.size(), 0.0);
    s.v.assign(params.data.size(), 0.0);
    return s;
  }
};

// One bias-corrected Adam update, in place.
inline void adam_step(AdamState& state, Tensor& params, const Tensor& grads,
                      const AdamConfig& cfg) {
  require(params.same_shape(grads), "adam_step: params " + Tensor::shape_str(params.shape) +
                                        " vs grads " + Tensor::shape_str(grads.shape));
  require(state.m.size() == params.data.size(), "adam_step: state size mismatch");
  state.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.data.size(); ++i) {
    const double g = grads.data[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params.data[i] = static_cast<float>(static_cast<double>(params.data[i]) -
                                        cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
  }
}

}  // namespace afford
