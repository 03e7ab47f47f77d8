#pragma once

#include <cmath>
#include <map>
#include <string>

#include "trasend/params.hpp"
#include "trasend/tensor.hpp"

namespace trasend {

template <typename S>
struct AdamConfig {
  S alpha = S(1e-3);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
};

/// First/second-moment estimates per parameter plus the shared step counter.
template <typename S>
struct AdamState {
  struct Moments {
    Tensor<S> m, v;
  };
  std::map<std::string, Moments> moments;
  int64_t step = 0;
};

// One bias-corrected Adam update over every trainable parameter present in
// `grads`. A non-finite gradient aborts the step before touching anything.
template <typename S>
void adam_step(ParamTable<S>& params, const GradMap<S>& grads, AdamState<S>& state,
               const AdamConfig<S>& cfg) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) {
      throw NumericError("non-finite gradient for parameter " + name);
    }
  }
  state.step += 1;
  const S t = S(state.step);
  const S bc1 = S(1) - std::pow(cfg.beta1, t);
  const S bc2 = S(1) - std::pow(cfg.beta2, t);
  for (const auto& [name, g] : grads) {
    Parameter<S>& p = params.at(name);
    if (!p.trainable) continue;
    if (!p.value.same_shape(g)) {
      throw ShapeError("adam_step: gradient " + g.shape_str() + " vs parameter " +
                       p.value.shape_str() + " (" + name + ")");
    }
    auto& mom = state.moments[name];
    if (!mom.m.defined()) {
      mom.m = Tensor<S>::zeros(p.value.shape());
      mom.v = Tensor<S>::zeros(p.value.shape());
    }
    S* theta = p.value.data();
    S* m = mom.m.data();
    S* v = mom.v.data();
    const S* gp = g.data();
    const int64_t n = p.value.numel();
    for (int64_t i = 0; i < n; ++i) {
      m[i] = cfg.beta1 * m[i] + (S(1) - cfg.beta1) * gp[i];
      v[i] = cfg.beta2 * v[i] + (S(1) - cfg.beta2) * gp[i] * gp[i];
      const S mhat = m[i] / bc1;
      const S vhat = v[i] / bc2;
      theta[i] -= cfg.alpha * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace trasend
