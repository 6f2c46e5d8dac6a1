#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pointresnet/kernels.hpp"
#include "pointresnet/tensor.hpp"

// Differentiable primitives. Each op computes its output eagerly and, when a
// tape is active and some input requires a gradient, records a backward rule
// that accumulates into the inputs' gradient buffers.

namespace pointresnet {

namespace detail {

inline Shape leading(const Shape& s, std::size_t drop) {
  return Shape(s.begin(), s.end() - static_cast<std::ptrdiff_t>(drop));
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

/// Flat offsets of each broadcast batch index into the two operands.
struct BatchPlan {
  Shape batch;
  std::vector<std::size_t> a_index, b_index;
};

inline BatchPlan plan_batches(const Shape& a, const Shape& b, const Shape& full_a,
                              const Shape& full_b) {
  const std::size_t r = std::max(a.size(), b.size());
  BatchPlan plan;
  plan.batch.assign(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i + a.size() >= r ? a[i + a.size() - r] : 1;
    const std::size_t eb = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("matmul batch extents not broadcast-compatible: " + to_string(full_a) +
                       " x " + to_string(full_b));
    }
    plan.batch[i] = std::max(ea, eb);
  }
  const std::size_t total = element_count(plan.batch);
  plan.a_index.resize(total);
  plan.b_index.resize(total);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t ao = 0, bo = 0;
    for (std::size_t i = 0; i < r; ++i) {
      if (i + a.size() >= r) {
        const std::size_t e = a[i + a.size() - r];
        ao = ao * e + (e == 1 ? 0 : idx[i]);
      }
      if (i + b.size() >= r) {
        const std::size_t e = b[i + b.size() - r];
        bo = bo * e + (e == 1 ? 0 : idx[i]);
      }
    }
    plan.a_index[flat] = ao;
    plan.b_index[flat] = bo;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < plan.batch[i]) break;
      idx[i] = 0;
    }
  }
  return plan;
}

enum class BinaryKind { add, sub, mul };

template <class T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* name) {
  const Tensor<T>* big = &a;
  if (b.size() > a.size() || (b.size() == a.size() && b.rank() > a.rank())) big = &b;
  const Tensor<T>* small = big == &a ? &b : &a;
  if (!is_suffix(small->shape(), big->shape())) {
    throw ShapeError(std::string(name) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " are not suffix-broadcastable");
  }
  Tensor<T> out(big->shape());
  const std::size_t n = out.size(), na = a.size(), nb = b.size();
  const T* pa = a.values().data();
  const T* pb = b.values().data();
  T* po = out.values_mut().data();
  switch (kind) {
    case BinaryKind::add:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i % na] + pb[i % nb];
      break;
    case BinaryKind::sub:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i % na] - pb[i % nb];
      break;
    case BinaryKind::mul:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i % na] * pb[i % nb];
      break;
  }
  check_finite(out, name);
  if (Tape<T>* tape = recording_tape<T>({&a, &b})) {
    TensorNode<T>* an = &a.node();
    TensorNode<T>* bn = &b.node();
    TensorNode<T>* on = &out.node();
    record<T>(tape, {&a, &b}, out, [an, bn, on, kind] {
      const std::size_t n = on->data.size(), na = an->data.size(), nb = bn->data.size();
      const T* g = on->grad.data();
      if (T* ga = grad_target(an)) {
        switch (kind) {
          case BinaryKind::add:
          case BinaryKind::sub:
            for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i];
            break;
          case BinaryKind::mul:
            for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i] * bn->data[i % nb];
            break;
        }
      }
      if (T* gb = grad_target(bn)) {
        switch (kind) {
          case BinaryKind::add:
            for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i];
            break;
          case BinaryKind::sub:
            for (std::size_t i = 0; i < n; ++i) gb[i % nb] -= g[i];
            break;
          case BinaryKind::mul:
            for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i] * an->data[i % na];
            break;
        }
      }
    });
  }
  return out;
}

}  // namespace detail

/// Matrix product over the last two axes with broadcast batch axes.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.extent(-1) != b.extent(-2)) {
    throw ShapeError("matmul shape mismatch: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const std::size_t p = a.extent(-2), q = a.extent(-1), r = b.extent(-1);

  if (b.rank() == 2) {
    // Weight-style right operand: every leading axis of `a` folds into one GEMM.
    const std::size_t m = a.size() / q;
    Shape out_shape = detail::leading(a.shape(), 1);
    out_shape.push_back(r);
    Tensor<T> out(out_shape);
    kernels::gemm<T>(m, r, q, a.values().data(), b.values().data(), out.values_mut().data(),
                     false);
    detail::check_finite(out, "matmul");
    if (Tape<T>* tape = detail::recording_tape<T>({&a, &b})) {
      TensorNode<T>* an = &a.node();
      TensorNode<T>* bn = &b.node();
      TensorNode<T>* on = &out.node();
      detail::record<T>(tape, {&a, &b}, out, [an, bn, on, m, q, r] {
        const T* g = on->grad.data();
        if (an->requires_grad) {
          const auto bt = kernels::transposed(q, r, bn->data.data());
          kernels::gemm<T>(m, q, r, g, bt.data(), detail::grad_target(an), true);
        }
        if (bn->requires_grad) {
          const auto at = kernels::transposed(m, q, an->data.data());
          kernels::gemm<T>(q, r, m, at.data(), g, detail::grad_target(bn), true);
        }
      });
    }
    return out;
  }

  const detail::BatchPlan plan = detail::plan_batches(
      detail::leading(a.shape(), 2), detail::leading(b.shape(), 2), a.shape(), b.shape());
  Shape out_shape = plan.batch;
  out_shape.push_back(p);
  out_shape.push_back(r);
  Tensor<T> out(out_shape);
  const std::size_t batches = plan.a_index.size();
  for (std::size_t i = 0; i < batches; ++i) {
    kernels::gemm<T>(p, r, q, a.values().data() + plan.a_index[i] * p * q,
                     b.values().data() + plan.b_index[i] * q * r,
                     out.values_mut().data() + i * p * r, false);
  }
  detail::check_finite(out, "matmul");
  if (Tape<T>* tape = detail::recording_tape<T>({&a, &b})) {
    TensorNode<T>* an = &a.node();
    TensorNode<T>* bn = &b.node();
    TensorNode<T>* on = &out.node();
    detail::record<T>(tape, {&a, &b}, out, [an, bn, on, plan, p, q, r] {
      const T* g = on->grad.data();
      for (std::size_t i = 0; i < plan.a_index.size(); ++i) {
        const T* gi = g + i * p * r;
        const T* ai = an->data.data() + plan.a_index[i] * p * q;
        const T* bi = bn->data.data() + plan.b_index[i] * q * r;
        if (an->requires_grad) {
          const auto bt = kernels::transposed(q, r, bi);
          kernels::gemm<T>(p, q, r, gi, bt.data(),
                           detail::grad_target(an) + plan.a_index[i] * p * q, true);
        }
        if (bn->requires_grad) {
          const auto at = kernels::transposed(p, q, ai);
          kernels::gemm<T>(q, r, p, at.data(), gi,
                           detail::grad_target(bn) + plan.b_index[i] * q * r, true);
        }
      }
    });
  }
  return out;
}

/// Swaps the last two axes.
template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + to_string(x.shape()));
  const std::size_t rows = x.extent(-2), cols = x.extent(-1);
  Shape s = x.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  Tensor<T> out(s);
  const std::size_t batches = x.size() / (rows * cols);
  for (std::size_t i = 0; i < batches; ++i) {
    kernels::transpose(rows, cols, x.values().data() + i * rows * cols,
                       out.values_mut().data() + i * rows * cols);
  }
  if (Tape<T>* tape = detail::recording_tape<T>({&x})) {
    TensorNode<T>* xn = &x.node();
    TensorNode<T>* on = &out.node();
    detail::record<T>(tape, {&x}, out, [xn, on, rows, cols, batches] {
      T* gx = detail::grad_target(xn);
      const T* g = on->grad.data();
      for (std::size_t b = 0; b < batches; ++b) {
        const T* gb = g + b * rows * cols;
        T* gxb = gx + b * rows * cols;
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) gxb[i * cols + j] += gb[j * rows + i];
      }
    });
  }
  return out;
}

/// Elementwise a + b; the smaller operand's shape must be a suffix of the larger's.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::add, "add");
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::sub, "sub");
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::mul, "mul");
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.values_mut()[i] = x[i] * factor;
  detail::check_finite(out, "scale");
  if (Tape<T>* tape = detail::recording_tape<T>({&x})) {
    TensorNode<T>* xn = &x.node();
    TensorNode<T>* on = &out.node();
    detail::record<T>(tape, {&x}, out, [xn, on, factor] {
      T* gx = detail::grad_target(xn);
      for (std::size_t i = 0; i < on->grad.size(); ++i) gx[i] += on->grad[i] * factor;
    });
  }
  return out;
}

/// Sum of all entries as a one-element tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (T v : x.values()) acc += static_cast<double>(v);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  detail::check_finite(out, "sum");
  if (Tape<T>* tape = detail::recording_tape<T>({&x})) {
    TensorNode<T>* xn = &x.node();
    TensorNode<T>* on = &out.node();
    detail::record<T>(tape, {&x}, out, [xn, on] {
      T* gx = detail::grad_target(xn);
      const T g = on->grad[0];
      for (std::size_t i = 0; i < xn->data.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// max(x, 0); the subgradient at 0 is 0.
template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* px = x.values().data();
  T* po = out.values_mut().data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  detail::check_finite(out, "relu");
  if (Tape<T>* tape = detail::recording_tape<T>({&x})) {
    TensorNode<T>* xn = &x.node();
    TensorNode<T>* on = &out.node();
    detail::record<T>(tape, {&x}, out, [xn, on] {
      T* gx = detail::grad_target(xn);
      const T* g = on->grad.data();
      const T* v = xn->data.data();
#ifdef POINTRESNET_CORRUPT_BACKWARD
      // Fault injection for negative-control builds of the gradient checker.
      for (std::size_t i = 0; i < xn->data.size(); ++i)
        if (v[i] > T(0)) gx[i] += T(0.5) * g[i];
#else
      for (std::size_t i = 0; i < xn->data.size(); ++i)
        if (v[i] > T(0)) gx[i] += g[i];
#endif
    });
  }
  return out;
}

template <class T>
struct MaxPoolResult {
  Tensor<T> values;                 // [.., d]
  std::vector<std::size_t> argmax;  // point index per output entry
};

/// Channelwise maximum over the point axis (second to last). Ties go to the
/// first occurrence, which is also where the gradient is routed.
template <class T>
MaxPoolResult<T> reduce_max(const Tensor<T>& x) {
  if (x.rank() < 2) {
    throw DegenerateInputError("reduce_max needs a [.., n, d] tensor, got " +
                               to_string(x.shape()));
  }
  const std::size_t n = x.extent(-2), d = x.extent(-1);
  const std::size_t groups = x.size() / (n * d);
  Shape s = detail::leading(x.shape(), 2);
  s.push_back(d);
  MaxPoolResult<T> result{Tensor<T>(s), std::vector<std::size_t>(groups * d, 0)};
  T* po = result.values.values_mut().data();
  const T* px = x.values().data();
  for (std::size_t g = 0; g < groups; ++g) {
    const T* base = px + g * n * d;
    T* out = po + g * d;
    std::size_t* arg = result.argmax.data() + g * d;
    std::copy(base, base + d, out);
    for (std::size_t i = 1; i < n; ++i) {
      const T* row = base + i * d;
      for (std::size_t c = 0; c < d; ++c) {
        if (row[c] > out[c]) {
          out[c] = row[c];
          arg[c] = i;
        }
      }
    }
  }
  detail::check_finite(result.values, "reduce_max");
  if (Tape<T>* tape = detail::recording_tape<T>({&x})) {
    TensorNode<T>* xn = &x.node();
    TensorNode<T>* on = &result.values.node();
    detail::record<T>(tape, {&x}, result.values,
                      [xn, on, arg = result.argmax, n, d, groups] {
                        T* gx = detail::grad_target(xn);
                        const T* g = on->grad.data();
                        for (std::size_t gi = 0; gi < groups; ++gi)
                          for (std::size_t c = 0; c < d; ++c)
                            gx[gi * n * d + arg[gi * d + c] * d + c] += g[gi * d + c];
                      });
  }
  return result;
}

/// Softmax over the last axis, stabilized by subtracting the row maximum.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t k = x.extent(-1);
  const std::size_t rows = x.size() / k;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.values().data() + r * k;
    T* o = out.values_mut().data() + r * k;
    const T mx = *std::max_element(in, in + k);
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < k; ++j) o[j] /= z;
  }
  detail::check_finite(out, "softmax_rows");
  if (Tape<T>* tape = detail::recording_tape<T>({&x})) {
    TensorNode<T>* xn = &x.node();
    TensorNode<T>* on = &out.node();
    detail::record<T>(tape, {&x}, out, [xn, on, k, rows] {
      T* gx = detail::grad_target(xn);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* s = on->data.data() + r * k;
        const T* g = on->grad.data() + r * k;
        T dot = 0;
        for (std::size_t j = 0; j < k; ++j) dot += g[j] * s[j];
        for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += s[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (element_count(shape) != x.size()) {
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
  if (Tape<T>* tape = detail::recording_tape<T>({&x})) {
    TensorNode<T>* xn = &x.node();
    TensorNode<T>* on = &out.node();
    detail::record<T>(tape, {&x}, out, [xn, on] {
      T* gx = detail::grad_target(xn);
      for (std::size_t i = 0; i < on->grad.size(); ++i) gx[i] += on->grad[i];
    });
  }
  return out;
}

/// Concatenates along the last axis; all leading extents must agree.
template <class T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || detail::leading(a.shape(), 1) != detail::leading(b.shape(), 1)) {
    throw ShapeError("concat_last: leading extents differ: " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::size_t ca = a.extent(-1), cb = b.extent(-1), rows = a.size() / ca;
  Shape s = a.shape();
  s.back() = ca + cb;
  Tensor<T> out(s);
  T* po = out.values_mut().data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.values().data() + r * ca, ca, po + r * (ca + cb));
    std::copy_n(b.values().data() + r * cb, cb, po + r * (ca + cb) + ca);
  }
  if (Tape<T>* tape = detail::recording_tape<T>({&a, &b})) {
    TensorNode<T>* an = &a.node();
    TensorNode<T>* bn = &b.node();
    TensorNode<T>* on = &out.node();
    detail::record<T>(tape, {&a, &b}, out, [an, bn, on, ca, cb, rows] {
      const T* g = on->grad.data();
      if (T* ga = detail::grad_target(an))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < ca; ++j) ga[r * ca + j] += g[r * (ca + cb) + j];
      if (T* gb = detail::grad_target(bn))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < cb; ++j) gb[r * cb + j] += g[r * (ca + cb) + ca + j];
    });
  }
  return out;
}

/// Tiles a per-sample vector [.., c] across n points: [.., n, c].
template <class T>
Tensor<T> expand_points(const Tensor<T>& x, std::size_t n) {
  if (n == 0) throw ShapeError("expand_points: zero point count");
  const std::size_t c = x.extent(-1), groups = x.size() / c;
  Shape s = detail::leading(x.shape(), 1);
  s.push_back(n);
  s.push_back(c);
  Tensor<T> out(s);
  T* po = out.values_mut().data();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(x.values().data() + g * c, c, po + (g * n + i) * c);
  if (Tape<T>* tape = detail::recording_tape<T>({&x})) {
    TensorNode<T>* xn = &x.node();
    TensorNode<T>* on = &out.node();
    detail::record<T>(tape, {&x}, out, [xn, on, n, c, groups] {
      T* gx = detail::grad_target(xn);
      const T* g = on->grad.data();
      for (std::size_t gi = 0; gi < groups; ++gi)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) gx[gi * c + j] += g[(gi * n + i) * c + j];
    });
  }
  return out;
}

template <class T>
Tensor<T> eye(std::size_t d) {
  Tensor<T> out(Shape{d, d});
  for (std::size_t i = 0; i < d; ++i) out.values_mut()[i * d + i] = T(1);
  return out;
}

}  // namespace pointresnet
