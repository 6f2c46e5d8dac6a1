#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "pointresnet/random.hpp"
#include "pointresnet/tensor.hpp"

namespace pointresnet {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-3;
  /// Denominator floor of the relative error, so gradients that are zero
  /// analytically and numerically compare as equal.
  double abs_floor = 1e-6;
  /// Coordinates probed per tensor; 0 probes every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
  double max_rel_error = 0;
  double analytic = 0;
  double numeric = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0;

  double max_rel_error() const {
    double m = 0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  bool passed() const { return max_rel_error() < tolerance; }

  const GradCheckEntry* worst() const {
    const GradCheckEntry* w = nullptr;
    for (const auto& e : entries)
      if (!w || e.max_rel_error > w->max_rel_error) w = &e;
    return w;
  }

  std::string summary() const {
    std::ostringstream os;
    os << (passed() ? "pass" : "FAIL") << " max_rel_error=" << max_rel_error()
       << " tol=" << tolerance;
    if (const auto* w = worst()) {
      os << " worst=" << w->name << "[" << w->worst_index << "] analytic=" << w->analytic
         << " numeric=" << w->numeric;
    }
    return os.str();
  }
};

template <class T>
struct NamedInput {
  std::string name;
  Tensor<T> tensor;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares tape gradients of the scalar `f()` against central differences
/// (f(x+h e) - f(x-h e)) / 2h. `f` must read the current values of `inputs`.
template <class T, class F>
GradCheckReport grad_check(F&& f, std::vector<NamedInput<T>> inputs,
                           const GradCheckOptions& opt = {}) {
  for (auto& in : inputs) {
    in.tensor.set_requires_grad(true);
    in.tensor.zero_grad();
  }
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    Tensor<T> root = f();
    if (!std::isfinite(static_cast<double>(root.item())))
      throw NonFiniteError("grad_check: non-finite function value");
    tape.backward(root);
  }

  auto evaluate = [&] {
    NoGradScope<T> no_grad;
    const double v = static_cast<double>(f().item());
    if (!std::isfinite(v)) throw NonFiniteError("grad_check: non-finite function value");
    return v;
  };

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  Rng rng(opt.seed);
  for (auto& in : inputs) {
    GradCheckEntry entry;
    entry.name = in.name;
    const std::size_t n = in.tensor.size();
    std::vector<T> analytic(n, T(0));
    if (in.tensor.has_grad()) std::copy(in.tensor.grad().begin(), in.tensor.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (opt.max_coords_per_tensor != 0 && n > opt.max_coords_per_tensor) {
      for (std::size_t i = 0; i < opt.max_coords_per_tensor; ++i)
        std::swap(coords[i], coords[i + rng.below(n - i)]);
      coords.resize(opt.max_coords_per_tensor);
    }

    auto data = in.tensor.values_mut();
    for (std::size_t idx : coords) {
      const T saved = data[idx];
      data[idx] = static_cast<T>(saved + opt.step);
      const double plus = evaluate();
      data[idx] = static_cast<T>(saved - opt.step);
      const double minus = evaluate();
      data[idx] = saved;
      const double numeric = (plus - minus) / (2 * opt.step);
      const double err = relative_error(static_cast<double>(analytic[idx]), numeric, opt.abs_floor);
      ++entry.checked;
      if (entry.checked == 1 || err > entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = idx;
        entry.analytic = static_cast<double>(analytic[idx]);
        entry.numeric = numeric;
      }
    }
    report.entries.push_back(entry);
  }
  return report;
}

/// Single-input convenience form: `f` maps x to a scalar.
template <class T, class F>
GradCheckReport grad_check(F&& f, Tensor<T> x, double step, double tolerance) {
  GradCheckOptions opt;
  opt.step = step;
  opt.tolerance = tolerance;
  return grad_check<T>([&] { return f(x); }, {NamedInput<T>{"x", x}}, opt);
}

}  // namespace pointresnet
