#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "trasend/tape.hpp"
#include "trasend/tensor.hpp"

namespace trasend {

/// Verifies reverse-mode gradients against central finite differences.
///
/// The function under test is a builder: given a tape and leaf handles for
/// each input tensor, it records the forward graph and returns a scalar. The
/// analytic gradient comes from one backward sweep; the numeric one from
/// 2 * numel re-evaluations on scratch tapes.
template <typename S, typename Builder>
S gradcheck(Builder&& build, std::vector<Tensor<S>> point, S eps = S(1e-5)) {
  auto eval = [&](const std::vector<Tensor<S>>& xs) -> S {
    GradTape<S> tape;
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(tape.leaf(x, false));
    Var out = build(tape, vars);
    const Tensor<S>& v = tape.val(out);
    if (v.numel() != 1) throw ContractError("gradcheck requires a scalar-valued function");
    return v[0];
  };

  // Analytic pass.
  std::vector<Tensor<S>> analytic;
  {
    GradTape<S> tape;
    std::vector<Var> vars;
    vars.reserve(point.size());
    for (const auto& x : point) vars.push_back(tape.leaf(x, true));
    Var out = build(tape, vars);
    tape.backward(out);
    for (Var v : vars) analytic.push_back(tape.grad_or_zeros(v));
  }

  S worst = S(0);
  for (size_t k = 0; k < point.size(); ++k) {
    for (int64_t i = 0; i < point[k].numel(); ++i) {
      const S orig = point[k][i];
      point[k][i] = orig + eps;
      const S up = eval(point);
      point[k][i] = orig - eps;
      const S down = eval(point);
      point[k][i] = orig;
      const S numeric = (up - down) / (S(2) * eps);
      const S a = analytic[k][i];
      const S rel = std::abs(a - numeric) / std::max(S(1), std::abs(a));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace trasend
