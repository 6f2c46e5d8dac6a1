#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pointresnet/ops.hpp"
#include "pointresnet/random.hpp"
#include "pointresnet/tensor.hpp"

namespace pointresnet {

enum class Mode { train, eval };

enum class TensorRole { parameter, buffer };

/// A named handle into a module's state; shares storage with the module.
template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  TensorRole role;
};

template <class T>
using TensorList = std::vector<NamedTensor<T>>;

/// Glorot/Xavier uniform fill: U(-sqrt(6/(fan_in+fan_out)), +sqrt(...)).
template <class T>
void glorot_uniform(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (T& v : w.values_mut()) v = static_cast<T>(rng.uniform(-limit, limit));
}

// ---------------------------------------------------------------------------
// Batch normalization primitives
// ---------------------------------------------------------------------------

namespace detail {

inline void check_channels(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(want) +
                     " channels, got " + std::to_string(got));
  }
}

}  // namespace detail

/// Normalizes x[.., c] with statistics pooled over every non-channel position,
/// then applies gamma/beta. Biased batch mean/variance are written to the
/// optional outputs.
template <class T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           double eps, std::vector<double>* batch_mean = nullptr,
                           std::vector<double>* batch_var = nullptr) {
  const std::size_t c = x.extent(-1);
  detail::check_channels(gamma.size(), c, "batch_norm");
  detail::check_channels(beta.size(), c, "batch_norm");
  const std::size_t rows = x.size() / c;
  const T* px = x.values().data();

  std::vector<double> mu(c, 0.0), var(c, 0.0), inv_std(c);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) mu[j] += px[r * c + j];
  for (auto& m : mu) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const double d = px[r * c + j] - mu[j];
      var[j] += d * d;
    }
  for (std::size_t j = 0; j < c; ++j) {
    var[j] /= static_cast<double>(rows);
    inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  }

  Tensor<T> out(x.shape());
  T* po = out.values_mut().data();
  const T* pg = gamma.values().data();
  const T* pb = beta.values().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j)
      po[r * c + j] = static_cast<T>((px[r * c + j] - mu[j]) * inv_std[j]) * pg[j] + pb[j];
  detail::check_finite(out, "batch_norm_train");

  if (Tape<T>* tape = detail::recording_tape<T>({&x, &gamma, &beta})) {
    TensorNode<T>* xn = &x.node();
    TensorNode<T>* gn = &gamma.node();
    TensorNode<T>* bn = &beta.node();
    TensorNode<T>* on = &out.node();
    detail::record<T>(tape, {&x, &gamma, &beta}, out, [xn, gn, bn, on, mu, inv_std, rows, c] {
      const T* g = on->grad.data();
      const T* xv = xn->data.data();
      std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          const double xhat = (xv[r * c + j] - mu[j]) * inv_std[j];
          sum_g[j] += g[r * c + j];
          sum_gx[j] += g[r * c + j] * xhat;
        }
      if (T* gb = detail::grad_target(bn))
        for (std::size_t j = 0; j < c; ++j) gb[j] += static_cast<T>(sum_g[j]);
      if (T* gg = detail::grad_target(gn))
        for (std::size_t j = 0; j < c; ++j) gg[j] += static_cast<T>(sum_gx[j]);
      if (T* gx = detail::grad_target(xn)) {
        const double m = static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const double xhat = (xv[r * c + j] - mu[j]) * inv_std[j];
            const double k = static_cast<double>(gn->data[j]) * inv_std[j] / m;
            gx[r * c + j] += static_cast<T>(k * (m * g[r * c + j] - sum_g[j] - xhat * sum_gx[j]));
          }
      }
    });
  }
  if (batch_mean) *batch_mean = std::move(mu);
  if (batch_var) *batch_var = std::move(var);
  return out;
}

/// Normalizes x[.., c] with fixed statistics. Each row is transformed
/// independently of every other row.
template <class T>
Tensor<T> batch_norm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const Tensor<T>& running_mean, const Tensor<T>& running_var,
                          double eps) {
  const std::size_t c = x.extent(-1);
  detail::check_channels(gamma.size(), c, "batch_norm");
  detail::check_channels(running_mean.size(), c, "batch_norm");
  const std::size_t rows = x.size() / c;
  std::vector<T> inv_std(c), mean(c);
  for (std::size_t j = 0; j < c; ++j) {
    mean[j] = running_mean[j];
    inv_std[j] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[j]) + eps));
  }
  Tensor<T> out(x.shape());
  const T* px = x.values().data();
  T* po = out.values_mut().data();
  const T* pg = gamma.values().data();
  const T* pb = beta.values().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j)
      po[r * c + j] = (px[r * c + j] - mean[j]) * inv_std[j] * pg[j] + pb[j];
  detail::check_finite(out, "batch_norm_eval");

  if (Tape<T>* tape = detail::recording_tape<T>({&x, &gamma, &beta})) {
    TensorNode<T>* xn = &x.node();
    TensorNode<T>* gn = &gamma.node();
    TensorNode<T>* bn = &beta.node();
    TensorNode<T>* on = &out.node();
    detail::record<T>(tape, {&x, &gamma, &beta}, out, [xn, gn, bn, on, mean, inv_std, rows, c] {
      const T* g = on->grad.data();
      const T* xv = xn->data.data();
      T* gx = detail::grad_target(xn);
      T* gg = detail::grad_target(gn);
      T* gb = detail::grad_target(bn);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          const T gr = g[r * c + j];
          if (gx) gx[r * c + j] += gr * inv_std[j] * gn->data[j];
          if (gg) gg[j] += gr * (xv[r * c + j] - mean[j]) * inv_std[j];
          if (gb) gb[j] += gr;
        }
    });
  }
  return out;
}

/// Per-channel batch normalization with an exponential moving average of the
/// batch statistics for use in eval mode.
template <class T>
class BatchNorm {
 public:
  explicit BatchNorm(std::size_t channels, double ema_decay = 0.5, double epsilon = 1e-5)
      : gamma_(Shape{channels}, T(1)),
        beta_(Shape{channels}, T(0)),
        running_mean_(Shape{channels}, T(0)),
        running_var_(Shape{channels}, T(1)),
        ema_decay_(ema_decay),
        epsilon_(epsilon) {
    gamma_.set_requires_grad(true);
    beta_.set_requires_grad(true);
  }

  /// Train mode also folds the batch statistics into the running ones:
  /// running <- decay * running + (1 - decay) * batch.
  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    detail::check_channels(x.extent(-1), channels(), "batch_norm");
    if (mode == Mode::eval)
      return batch_norm_eval(x, gamma_, beta_, running_mean_, running_var_, epsilon_);
    std::vector<double> mu, var;
    Tensor<T> out = batch_norm_train(x, gamma_, beta_, epsilon_, &mu, &var);
    auto rm = running_mean_.values_mut();
    auto rv = running_var_.values_mut();
    for (std::size_t j = 0; j < channels(); ++j) {
      rm[j] = static_cast<T>(ema_decay_ * rm[j] + (1.0 - ema_decay_) * mu[j]);
      rv[j] = static_cast<T>(ema_decay_ * rv[j] + (1.0 - ema_decay_) * var[j]);
    }
    return out;
  }

  std::size_t channels() const { return gamma_.size(); }
  double ema_decay() const { return ema_decay_; }
  void set_ema_decay(double decay) {
    if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("batch-norm decay must be in (0, 1)");
    ema_decay_ = decay;
  }
  double epsilon() const { return epsilon_; }

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

  void append_tensors(const std::string& prefix, TensorList<T>& out) const {
    out.push_back({prefix + ".gamma", gamma_, TensorRole::parameter});
    out.push_back({prefix + ".beta", beta_, TensorRole::parameter});
    out.push_back({prefix + ".running_mean", running_mean_, TensorRole::buffer});
    out.push_back({prefix + ".running_var", running_var_, TensorRole::buffer});
  }

 private:
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
  double ema_decay_;
  double epsilon_;
};

// ---------------------------------------------------------------------------
// Affine layers
// ---------------------------------------------------------------------------

struct LayerOptions {
  bool batch_norm = true;
  bool activation = true;
  bool bias = true;
};

/// Affine map over the last axis, optionally followed by batch norm and ReLU.
/// Applied to [b, n, c] it is a shared (pointwise) MLP layer; applied to
/// [b, c] it is a dense layer.
template <class T>
class Linear {
 public:
  Linear(std::size_t in, std::size_t out, LayerOptions opt, Rng& rng)
      : weight_(Shape{in, out}), opt_(opt) {
    glorot_uniform(weight_, in, out, rng);
    weight_.set_requires_grad(true);
    if (opt.bias) {
      bias_ = Tensor<T>(Shape{out}, T(0));
      bias_.set_requires_grad(true);
    }
    if (opt.batch_norm) bn_.emplace(out);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> h = forward_preactivation(x, mode);
    return opt_.activation ? relu(h) : h;
  }

  /// Affine map and batch norm, without the activation.
  Tensor<T> forward_preactivation(const Tensor<T>& x, Mode mode) {
    if (x.extent(-1) != in_width()) {
      throw ShapeError("layer expects " + std::to_string(in_width()) +
                       " input channels, got shape " + to_string(x.shape()));
    }
    Tensor<T> h = matmul(x, weight_);
    if (bias_.defined()) h = add(h, bias_);
    if (bn_) h = bn_->forward(h, mode);
    return h;
  }

  std::size_t in_width() const { return weight_.extent(0); }
  std::size_t out_width() const { return weight_.extent(1); }
  bool has_activation() const { return opt_.activation; }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  BatchNorm<T>* batch_norm() { return bn_ ? &*bn_ : nullptr; }

  void append_tensors(const std::string& prefix, TensorList<T>& out) const {
    out.push_back({prefix + ".weight", weight_, TensorRole::parameter});
    if (bias_.defined()) out.push_back({prefix + ".bias", bias_, TensorRole::parameter});
    if (bn_) bn_->append_tensors(prefix + ".bn", out);
  }

  void set_bn_decay(double decay) {
    if (bn_) bn_->set_ema_decay(decay);
  }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
  std::optional<BatchNorm<T>> bn_;
  LayerOptions opt_;
};

template <class T>
using SharedMLPLayer = Linear<T>;
template <class T>
using DenseLayer = Linear<T>;

/// Inverted dropout: train mode zeroes entries with probability p and scales
/// survivors by 1/(1-p); eval mode is the identity.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("dropout probability must be in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return x;
  if (!rng) throw ConfigError("train-mode dropout needs a random source");
  Tensor<T> mask(x.shape());
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (T& m : mask.values_mut()) m = rng->bernoulli(p) ? T(0) : keep;
  return mul(x, mask);
}

// ---------------------------------------------------------------------------
// Transformation network
// ---------------------------------------------------------------------------

template <class T>
struct TNetOutput {
  Tensor<T> transformed;  // [b, n, d]
  Tensor<T> matrix;       // [b, d, d]
};

/// Predicts a d x d matrix per sample (shared MLP encoder, max-pool, dense
/// head) and right-multiplies the input points by it. The final layer starts
/// at zero weight and identity bias, so a fresh network predicts I exactly.
template <class T>
class TNet {
 public:
  TNet(std::size_t dim, const std::vector<std::size_t>& encoder_widths,
       const std::vector<std::size_t>& head_widths, Rng& rng)
      : dim_(dim) {
    std::size_t w = dim;
    for (std::size_t out : encoder_widths) {
      encoder_.emplace_back(w, out, LayerOptions{}, rng);
      w = out;
    }
    for (std::size_t out : head_widths) {
      head_.emplace_back(w, out, LayerOptions{}, rng);
      w = out;
    }
    out_.emplace(w, dim * dim, LayerOptions{false, false, true}, rng);
    std::fill(out_->weight().values_mut().begin(), out_->weight().values_mut().end(), T(0));
    auto b = out_->bias().values_mut();
    for (std::size_t i = 0; i < dim; ++i) b[i * dim + i] = T(1);
  }

  TNetOutput<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.rank() != 3 || x.extent(-1) != dim_) {
      throw ShapeError("transform net of dimension " + std::to_string(dim_) +
                       " got input of shape " + to_string(x.shape()));
    }
    const std::size_t b = x.extent(0);
    Tensor<T> h = x;
    for (auto& layer : encoder_) h = layer.forward(h, mode);
    h = reduce_max(h).values;
    for (auto& layer : head_) h = layer.forward(h, mode);
    h = out_->forward(h, mode);
    Tensor<T> matrix = reshape(h, Shape{b, dim_, dim_});
    return {matmul(x, matrix), matrix};
  }

  std::size_t dim() const { return dim_; }
  Linear<T>& output_layer() { return *out_; }

  void append_tensors(const std::string& prefix, TensorList<T>& out) const {
    for (std::size_t i = 0; i < encoder_.size(); ++i)
      encoder_[i].append_tensors(prefix + ".encoder." + std::to_string(i), out);
    for (std::size_t i = 0; i < head_.size(); ++i)
      head_[i].append_tensors(prefix + ".head." + std::to_string(i), out);
    out_->append_tensors(prefix + ".out", out);
  }

  void set_bn_decay(double decay) {
    for (auto& l : encoder_) l.set_bn_decay(decay);
    for (auto& l : head_) l.set_bn_decay(decay);
  }

 private:
  std::size_t dim_;
  std::vector<Linear<T>> encoder_;
  std::vector<Linear<T>> head_;
  std::optional<Linear<T>> out_;
};

// ---------------------------------------------------------------------------
// Residual block
// ---------------------------------------------------------------------------

/// B(y) = ReLU(F(y) + skip(y)). F is a stack of shared MLP layers whose last
/// activation is deferred until after the addition; skip is the identity when
/// widths match and a bias-free pointwise projection otherwise.
template <class T>
class ResBlock {
 public:
  ResBlock(std::size_t in, const std::vector<std::size_t>& widths, Rng& rng) : in_width_(in) {
    if (widths.empty()) throw ConfigError("residual block needs at least one layer");
    std::size_t w = in;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const bool last = i + 1 == widths.size();
      layers_.emplace_back(w, widths[i], LayerOptions{true, !last, true}, rng);
      w = widths[i];
    }
    if (w != in) projection_.emplace(in, w, LayerOptions{false, false, false}, rng);
  }

  Tensor<T> forward(const Tensor<T>& y, Mode mode) {
    if (y.extent(-1) != in_width_) {
      throw ShapeError("residual block expects width " + std::to_string(in_width_) +
                       ", got shape " + to_string(y.shape()));
    }
    Tensor<T> h = y;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) h = layers_[i].forward(h, mode);
    h = layers_.back().forward_preactivation(h, mode);
    Tensor<T> skip = projection_ ? projection_->forward(y, mode) : y;
    return relu(add(h, skip));
  }

  std::size_t in_width() const { return in_width_; }
  std::size_t out_width() const { return layers_.back().out_width(); }
  bool has_projection() const { return projection_.has_value(); }
  std::vector<Linear<T>>& layers() { return layers_; }
  Linear<T>* projection() { return projection_ ? &*projection_ : nullptr; }

  void append_tensors(const std::string& prefix, TensorList<T>& out) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].append_tensors(prefix + ".layers." + std::to_string(i), out);
    if (projection_) projection_->append_tensors(prefix + ".projection", out);
  }

  void set_bn_decay(double decay) {
    for (auto& l : layers_) l.set_bn_decay(decay);
  }

 private:
  std::size_t in_width_;
  std::vector<Linear<T>> layers_;
  std::optional<Linear<T>> projection_;
};

}  // namespace pointresnet
