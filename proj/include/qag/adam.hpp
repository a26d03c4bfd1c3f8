#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "qag/error.hpp"
#include "qag/tensor.hpp"

namespace qag {

// Adam with bias correction. Moments are zero-initialized and keyed by
// parameter order; t increments by exactly one per step.
template <typename S>
struct AdamStateT {
  S lr = S(1e-3);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
  long t = 0;
  std::vector<std::vector<S>> m;
  std::vector<std::vector<S>> v;

  bool initialized() const { return !m.empty(); }
};

template <typename S>
void adam_init(AdamStateT<S>& state, const std::vector<TensorT<S>*>& params) {
  state.t = 0;
  state.m.clear();
  state.v.clear();
  for (const auto* p : params) {
    state.m.emplace_back(p->numel(), S(0));
    state.v.emplace_back(p->numel(), S(0));
  }
}

// One update over params using their accumulated .grad buffers.
template <typename S>
void adam_step(const std::vector<TensorT<S>*>& params, AdamStateT<S>& state) {
  if (!state.initialized()) adam_init(state, params);
  if (state.m.size() != params.size())
    throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) + " params, got " +
                     std::to_string(params.size()));
  state.t += 1;
  const S bc1 = S(1) - std::pow(state.beta1, S(state.t));
  const S bc2 = S(1) - std::pow(state.beta2, S(state.t));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    TensorT<S>& p = *params[pi];
    if (state.m[pi].size() != p.numel())
      throw ShapeError("adam_step: param " + std::to_string(pi) + " size changed: state " +
                       std::to_string(state.m[pi].size()) + " vs param " + std::to_string(p.numel()));
    const auto& g = p.grad();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    auto& w = p.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (S(1) - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (S(1) - state.beta2) * g[i] * g[i];
      const S mhat = m[i] / bc1;
      const S vhat = v[i] / bc2;
      w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace qag
