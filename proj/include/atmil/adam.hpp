#pragma once

#include <cmath>
#include <vector>

#include "atmil/errors.hpp"
#include "atmil/params.hpp"
#include "atmil/tensor.hpp"

namespace atmil {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment buffers parallel to the ParamSet's canonical order.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long t = 0;
  AdamConfig cfg;

  static AdamState init(const ParamSet& params, AdamConfig cfg = {}) {
    AdamState s;
    s.cfg = cfg;
    s.m.reserve(static_cast<size_t>(params.count()));
    s.v.reserve(static_cast<size_t>(params.count()));
    for (int i = 0; i < params.count(); ++i) {
      s.m.push_back(Tensor::zeros(params.entry(i).value.shape));
      s.v.push_back(Tensor::zeros(params.entry(i).value.shape));
    }
    return s;
  }
};

/// Standard bias-corrected update; one gradient tensor per parameter.
inline void adam_step(ParamSet& params, const std::vector<Tensor>& grads, AdamState& state,
                      double lr) {
  if (grads.size() != static_cast<size_t>(params.count()))
    throw UsageError("adam_step: gradient list does not match parameter set");
  for (int i = 0; i < params.count(); ++i) {
    const Tensor& g = grads[static_cast<size_t>(i)];
    if (g.data.size() != static_cast<size_t>(params.entry(i).value.size()))
      throw UsageError("adam_step: missing gradient for '" + params.entry(i).name + "'");
    if (!all_finite(g.data))
      throw NumericError("adam_step: non-finite gradient for '" + params.entry(i).name + "'");
  }
  ++state.t;
  double c1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.t));
  double c2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.t));
  for (int i = 0; i < params.count(); ++i) {
    Tensor& theta = params.entry(i).value;
    Tensor& m = state.m[static_cast<size_t>(i)];
    Tensor& v = state.v[static_cast<size_t>(i)];
    const Tensor& g = grads[static_cast<size_t>(i)];
    for (int64_t j = 0; j < theta.size(); ++j) {
      m[j] = state.cfg.beta1 * m[j] + (1.0 - state.cfg.beta1) * g[j];
      v[j] = state.cfg.beta2 * v[j] + (1.0 - state.cfg.beta2) * g[j] * g[j];
      double m_hat = m[j] / c1;
      double v_hat = v[j] / c2;
      theta[j] -= lr * m_hat / (std::sqrt(v_hat) + state.cfg.epsilon);
    }
  }
}

/// Step decay: base rate through epoch `decay_after`, divided by `factor`
/// strictly afterwards. Epochs are 1-based.
inline double lr_schedule(int epoch, double base_lr, int decay_after, double factor) {
  if (epoch < 1) throw UsageError("lr_schedule: epochs are 1-based");
  return epoch <= decay_after ? base_lr : base_lr / factor;
}

}  // namespace atmil
