#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pointresnet/ops.hpp"

namespace pointresnet {

/// Mean over prediction rows of -log softmax(logits)[target], evaluated as
/// logsumexp(x) - x[target].
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  const std::size_t k = logits.extent(-1);
  const std::size_t rows = logits.size() / k;
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(rows) + " prediction rows but " +
                     std::to_string(targets.size()) + " targets");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= k) {
      throw InvalidArgument("cross_entropy: target " + std::to_string(targets[r]) +
                            " at position " + std::to_string(r) + " outside [0, " +
                            std::to_string(k) + ")");
    }
  }
  const T* x = logits.values().data();
  std::vector<T> lse(rows);
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x + r * k;
    const T mx = *std::max_element(row, row + k);
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    lse[r] = mx + std::log(z);
    total += static_cast<double>(lse[r] - row[targets[r]]);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(rows)));
  detail::check_finite(out, "cross_entropy");
  if (Tape<T>* tape = detail::recording_tape<T>({&logits})) {
    TensorNode<T>* xn = &logits.node();
    TensorNode<T>* on = &out.node();
    std::vector<int> t(targets.begin(), targets.end());
    detail::record<T>(tape, {&logits}, out, [xn, on, t = std::move(t), lse = std::move(lse), k, rows] {
      T* gx = detail::grad_target(xn);
      const T g = on->grad[0] / static_cast<T>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xn->data.data() + r * k;
        for (std::size_t j = 0; j < k; ++j) {
          const T p = std::exp(row[j] - lse[r]);
          gx[r * k + j] += g * (p - (static_cast<int>(j) == t[r] ? T(1) : T(0)));
        }
      }
    });
  }
  return out;
}

/// Batch mean of ||I - A A^T||_F^2 for A[b, d, d].
template <class T>
Tensor<T> orthogonality_reg(const Tensor<T>& a) {
  if (a.rank() != 3 || a.extent(1) != a.extent(2)) {
    throw ShapeError("orthogonality_reg expects square matrices [b, d, d], got " +
                     to_string(a.shape()));
  }
  const std::size_t b = a.extent(0), d = a.extent(1);
  Tensor<T> diff = sub(eye<T>(d), matmul(a, transpose(a)));
  return scale(sum(mul(diff, diff)), T(1) / static_cast<T>(b));
}

template <class T>
struct LossBreakdown {
  T cross_entropy = 0;
  T regularizer = 0;
  T alpha = 0;
  T total = 0;
};

template <class T>
struct TotalLoss {
  Tensor<T> value;
  LossBreakdown<T> parts;
};

/// total = H + alpha * L_reg.
template <class T>
TotalLoss<T> total_loss(const Tensor<T>& cross_entropy_value, const Tensor<T>& regularizer,
                        double alpha) {
  if (!(alpha >= 0.0)) throw InvalidArgument("regularizer weight alpha must be >= 0");
  const T a = static_cast<T>(alpha);
  TotalLoss<T> out;
  out.value = add(cross_entropy_value, scale(regularizer, a));
  out.parts = {cross_entropy_value.item(), regularizer.item(), a, out.value.item()};
  return out;
}

}  // namespace pointresnet
