#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pointresnet/error.hpp"
#include "pointresnet/tensor.hpp"

namespace pointresnet {

template <class T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<T>> m;  // one buffer per parameter, same size
  std::vector<std::vector<T>> v;

  /// Zeroed moments shaped like `params`.
  void reset(const std::vector<Tensor<T>>& params) {
    t = 0;
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.size(), T(0));
      v.emplace_back(p.size(), T(0));
    }
  }
};

namespace detail {

template <class T>
void check_adam_shapes(const std::vector<Tensor<T>>& params, AdamState<T>& state, double lr) {
  if (!(lr > 0)) throw InvalidArgument("adam_step: learning rate must be positive");
  if (state.m.empty() && state.t == 0) state.reset(params);
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: optimizer holds " + std::to_string(state.m.size()) + " moment buffers for " +
                     std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].size() != params[i].size() || state.v[i].size() != params[i].size())
      throw ShapeError("adam_step: moment buffer " + std::to_string(i) + " does not match parameter shape " +
                       to_string(params[i].shape()));
}

/// `grad(i)` yields a pointer to parameter i's gradient or null for zero.
template <class T, class GradOf>
void adam_apply(const std::vector<Tensor<T>>& params, AdamState<T>& state, double lr, GradOf grad) {
  ++state.t;
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(state.beta1, static_cast<double>(state.t))));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(state.beta2, static_cast<double>(state.t))));
  const T step = static_cast<T>(lr), eps = static_cast<T>(state.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i];
    auto theta = p.values_mut();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const T* g = grad(i);
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const T gj = g ? g[j] : T(0);
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      const T mhat = m[j] * c1, vhat = v[j] * c2;
      theta[j] -= step * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace detail

/// One Adam update with bias correction:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2,
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
/// Moments are allocated on the first call.
template <class T>
void adam_step(const std::vector<Tensor<T>>& params, const std::vector<std::vector<T>>& grads,
               AdamState<T>& state, double lr) {
  if (grads.size() != params.size())
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (grads[i].size() != params[i].size())
      throw ShapeError("adam_step: gradient " + std::to_string(i) + " has " + std::to_string(grads[i].size()) +
                       " values for parameter shape " + to_string(params[i].shape()));
  detail::check_adam_shapes(params, state, lr);
  detail::adam_apply(params, state, lr, [&](std::size_t i) { return grads[i].data(); });
}

/// Same update reading each parameter's accumulated tape gradient; a
/// parameter without one sees a zero gradient.
template <class T>
void adam_step(const std::vector<Tensor<T>>& params, AdamState<T>& state, double lr) {
  detail::check_adam_shapes(params, state, lr);
  detail::adam_apply(params, state, lr, [&](std::size_t i) -> const T* {
    return params[i].has_grad() ? params[i].grad().data() : nullptr;
  });
}

}  // namespace pointresnet
