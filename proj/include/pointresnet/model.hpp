#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pointresnet/nn.hpp"

namespace pointresnet {

enum class Task { classification, segmentation };

inline const char* to_string(Task task) {
  return task == Task::classification ? "cls" : "seg";
}

inline Task parse_task(std::string_view s) {
  if (s == "cls" || s == "classification") return Task::classification;
  if (s == "seg" || s == "segmentation") return Task::segmentation;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected cls or seg)");
}

/// Declarative description of a network variant.
struct ModelConfig {
  std::string preset_name = "custom";
  std::size_t n_points = 1024;
  std::vector<std::size_t> stem_widths;             // before the input transform
  std::vector<std::size_t> stage1_widths{64, 64, 64};
  std::size_t post_ft_width = 64;                   // residual MLP after the feature transform
  std::vector<std::size_t> block3_widths{128, 128, 128};
  std::vector<std::size_t> block4_widths{512, 1024, 1024};
  std::vector<std::size_t> tail_widths;             // plain MLPs before the global max-pool
  std::vector<std::size_t> cls_head_widths{512, 256, 128, 64};
  std::vector<std::size_t> seg_head_widths{512, 256, 128};
  std::vector<std::size_t> tnet_encoder_widths{64, 128, 1024};
  std::vector<std::size_t> tnet_head_widths{512, 256};
  std::size_t num_classes = 40;
  std::size_t num_parts = 50;
  double dropout_p = 0.3;
  std::size_t dropout_layers = 2;  // leading hidden dense layers followed by dropout
  bool input_transform = true;
  bool feature_transform = true;
  /// Multiplier on the Glorot draw of the final logits layer. Small logits
  /// keep the step-0 loss at ln k; 1 gives plain Glorot.
  double logit_init_scale = 0.1;

  std::size_t shared_mlp_layer_count() const {
    return stem_widths.size() + stage1_widths.size() + 1 + block3_widths.size() +
           block4_widths.size() + tail_widths.size();
  }
  std::size_t residual_block_count() const { return 4; }
  std::size_t feature_transform_dim() const { return stage1_widths.back(); }
  std::size_t global_feature_width() const {
    return tail_widths.empty() ? block4_widths.back() : tail_widths.back();
  }
  std::size_t input_transform_dim() const {
    return stem_widths.empty() ? 3 : stem_widths.back();
  }

  void validate(Task task) const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw ConfigError("invalid model config field '" + field + "': " + why);
    };
    auto widths = [&](const std::vector<std::size_t>& w, const char* field, bool allow_empty) {
      if (!allow_empty && w.empty()) fail(field, "must not be empty");
      for (std::size_t v : w)
        if (v == 0) fail(field, "widths must be positive");
    };
    if (n_points == 0) fail("n_points", "must be positive");
    widths(stem_widths, "stem_widths", true);
    widths(stage1_widths, "stage1_widths", false);
    if (stage1_widths.size() < 2) fail("stage1_widths", "needs at least two layers (residual skip)");
    if (post_ft_width == 0) fail("post_ft_width", "must be positive");
    widths(block3_widths, "block3_widths", false);
    widths(block4_widths, "block4_widths", false);
    widths(tail_widths, "tail_widths", true);
    widths(tnet_encoder_widths, "tnet_encoder_widths", false);
    widths(tnet_head_widths, "tnet_head_widths", true);
    if (task == Task::classification) {
      widths(cls_head_widths, "cls_head_widths", true);
      if (num_classes == 0) fail("num_classes", "must be positive");
      if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p", "must be in [0, 1)");
      if (!(logit_init_scale > 0.0) || !std::isfinite(logit_init_scale)) fail("logit_init_scale", "must be positive");
    } else {
      widths(seg_head_widths, "seg_head_widths", true);
      if (num_parts == 0) fail("num_parts", "must be positive");
    }
  }
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"pointresnet10", "pointresnet11", "pointresnet15"};
  return names;
}

/// Named ablation variants.
inline ModelConfig preset(std::string_view name) {
  ModelConfig c;
  c.preset_name = std::string(name);
  if (name == "pointresnet10") return c;
  if (name == "pointresnet11" || name == "pointresnet15") {
    c.n_points = 2048;
    c.stem_widths = {64};
    if (name == "pointresnet15") {
      c.stage1_widths = {64, 64, 64, 64};
      c.tail_widths = {512, 512, 512, 1024};
    }
    return c;
  }
  std::string valid;
  for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + std::string(name) + "'; valid presets: " + valid);
}

/// Reduced-width config with the full graph topology, for gradient checks.
inline ModelConfig toy_config(std::size_t num_classes = 3, std::size_t num_parts = 3) {
  ModelConfig c;
  c.preset_name = "toy";
  c.n_points = 32;
  c.stage1_widths = {8, 8, 8};
  c.post_ft_width = 8;
  c.block3_widths = {12, 12, 12};
  c.block4_widths = {12, 16, 16};
  c.cls_head_widths = {16, 12, 8, 6};
  c.seg_head_widths = {16, 12, 8};
  c.tnet_encoder_widths = {8, 12, 16};
  c.tnet_head_widths = {12, 8};
  c.num_classes = num_classes;
  c.num_parts = num_parts;
  return c;
}

template <class T>
struct ModelOutput {
  Tensor<T> logits;             // [b, k] or [b, n, m]
  Tensor<T> feature_transform;  // [b, d, d]; the regularized alignment matrix
  Tensor<T> input_transform;    // [b, d_in, d_in]; undefined when disabled
  Tensor<T> global_feature;     // [b, global width]
  Tensor<T> local_feature;      // [b, n, post_ft_width]
};

/// The assembled network:
/// [stem] -> input transform -> MLP + ResBlock 1 -> feature transform ->
/// ResBlock 2 -> ResBlock 3 -> ResBlock 4 -> [tail] -> max-pool -> head.
template <class T>
class Model {
 public:
  Model(ModelConfig config, Task task, Rng& rng) : config_(std::move(config)), task_(task) {
    config_.validate(task_);
    const auto& c = config_;
    std::size_t w = 3;
    for (std::size_t out : c.stem_widths) {
      stem_.emplace_back(w, out, LayerOptions{}, rng);
      w = out;
    }
    tnet_in_.emplace(w, c.tnet_encoder_widths, c.tnet_head_widths, rng);
    stage1_.emplace(w, c.stage1_widths.front(), LayerOptions{}, rng);
    w = c.stage1_widths.front();
    block1_.emplace(w, std::vector<std::size_t>(c.stage1_widths.begin() + 1, c.stage1_widths.end()),
                    rng);
    w = block1_->out_width();
    tnet_feat_.emplace(w, c.tnet_encoder_widths, c.tnet_head_widths, rng);
    block2_.emplace(w, std::vector<std::size_t>{c.post_ft_width}, rng);
    block3_.emplace(c.post_ft_width, c.block3_widths, rng);
    block4_.emplace(block3_->out_width(), c.block4_widths, rng);
    w = block4_->out_width();
    for (std::size_t out : c.tail_widths) {
      tail_.emplace_back(w, out, LayerOptions{}, rng);
      w = out;
    }
    if (task_ == Task::classification) {
      for (std::size_t out : c.cls_head_widths) {
        head_.emplace_back(w, out, LayerOptions{}, rng);
        w = out;
      }
      head_.emplace_back(w, c.num_classes, LayerOptions{false, false, true}, rng);
    } else {
      w += c.post_ft_width;
      for (std::size_t out : c.seg_head_widths) {
        head_.emplace_back(w, out, LayerOptions{}, rng);
        w = out;
      }
      head_.emplace_back(w, c.num_parts, LayerOptions{false, false, true}, rng);
    }
    for (T& v : head_.back().weight().values_mut()) v = static_cast<T>(v * c.logit_init_scale);
  }

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// `rng` drives dropout and is only required in train mode.
  ModelOutput<T> forward(const Tensor<T>& points, Mode mode, Rng* rng = nullptr) {
    if (points.rank() != 3 || points.extent(2) != 3) {
      throw ShapeError("model expects points of shape [b, n, 3], got " + to_string(points.shape()));
    }
    if (points.extent(1) != config_.n_points) {
      throw ShapeError("model expects " + std::to_string(config_.n_points) +
                       " points per sample, got " + std::to_string(points.extent(1)));
    }
    for (T v : points.values())
      if (!std::isfinite(static_cast<double>(v))) throw NonFiniteError("non-finite input coordinate");

    const std::size_t b = points.extent(0), n = points.extent(1);
    ModelOutput<T> out;
    Tensor<T> h = points;
    for (auto& layer : stem_) h = layer.forward(h, mode);
    if (config_.input_transform) {
      auto t = tnet_in_->forward(h, mode);
      h = t.transformed;
      out.input_transform = t.matrix;
    }
    h = stage1_->forward(h, mode);
    h = block1_->forward(h, mode);
    if (config_.feature_transform) {
      auto t = tnet_feat_->forward(h, mode);
      h = t.transformed;
      out.feature_transform = t.matrix;
    } else {
      out.feature_transform = identity_batch(b, config_.feature_transform_dim());
    }
    h = block2_->forward(h, mode);
    out.local_feature = h;
    h = block3_->forward(h, mode);
    h = block4_->forward(h, mode);
    for (auto& layer : tail_) h = layer.forward(h, mode);
    out.global_feature = reduce_max(h).values;

    if (task_ == Task::classification) {
      Tensor<T> g = out.global_feature;
      for (std::size_t i = 0; i < head_.size(); ++i) {
        g = head_[i].forward(g, mode);
        if (i + 1 < head_.size() && i < config_.dropout_layers)
          g = dropout(g, config_.dropout_p, mode, rng);
      }
      out.logits = g;
    } else {
      Tensor<T> f = concat_last(out.local_feature, expand_points(out.global_feature, n));
      for (auto& layer : head_) f = layer.forward(f, mode);
      out.logits = f;
    }
    return out;
  }

  const ModelConfig& config() const { return config_; }
  Task task() const { return task_; }

  /// Width of the per-point feature entering the segmentation head.
  std::size_t fused_feature_width() const {
    return config_.post_ft_width + config_.global_feature_width();
  }
  std::size_t head_layer_count() const { return head_.size(); }

  TensorList<T> named_tensors() const {
    TensorList<T> out;
    for (std::size_t i = 0; i < stem_.size(); ++i) stem_[i].append_tensors("stem." + std::to_string(i), out);
    tnet_in_->append_tensors("input_transform", out);
    stage1_->append_tensors("stage1", out);
    block1_->append_tensors("block1", out);
    tnet_feat_->append_tensors("feature_transform", out);
    block2_->append_tensors("block2", out);
    block3_->append_tensors("block3", out);
    block4_->append_tensors("block4", out);
    for (std::size_t i = 0; i < tail_.size(); ++i) tail_[i].append_tensors("tail." + std::to_string(i), out);
    const std::string head = task_ == Task::classification ? "cls_head." : "seg_head.";
    for (std::size_t i = 0; i < head_.size(); ++i) head_[i].append_tensors(head + std::to_string(i), out);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& nt : named_tensors())
      if (nt.role == TensorRole::parameter) out.push_back(nt.tensor);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto p : parameters()) p.zero_grad();
  }

  void set_bn_decay(double decay) {
    for (auto& l : stem_) l.set_bn_decay(decay);
    tnet_in_->set_bn_decay(decay);
    stage1_->set_bn_decay(decay);
    block1_->set_bn_decay(decay);
    tnet_feat_->set_bn_decay(decay);
    block2_->set_bn_decay(decay);
    block3_->set_bn_decay(decay);
    block4_->set_bn_decay(decay);
    for (auto& l : tail_) l.set_bn_decay(decay);
    for (auto& l : head_) l.set_bn_decay(decay);
  }

  TNet<T>& input_tnet() { return *tnet_in_; }
  TNet<T>& feature_tnet() { return *tnet_feat_; }
  ResBlock<T>& block(std::size_t i) {
    switch (i) {
      case 1: return *block1_;
      case 2: return *block2_;
      case 3: return *block3_;
      case 4: return *block4_;
    }
    throw ConfigError("residual blocks are numbered 1..4");
  }
  std::vector<Linear<T>>& head() { return head_; }

 private:
  static Tensor<T> identity_batch(std::size_t b, std::size_t d) {
    Tensor<T> m(Shape{b, d, d});
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t i = 0; i < d; ++i) m.values_mut()[(s * d + i) * d + i] = T(1);
    return m;
  }

  ModelConfig config_;
  Task task_;
  std::vector<Linear<T>> stem_;
  std::optional<TNet<T>> tnet_in_;
  std::optional<Linear<T>> stage1_;
  std::optional<ResBlock<T>> block1_;
  std::optional<TNet<T>> tnet_feat_;
  std::optional<ResBlock<T>> block2_, block3_, block4_;
  std::vector<Linear<T>> tail_;
  std::vector<Linear<T>> head_;
};

template <class T>
Model<T> build_model(const ModelConfig& config, Task task, Rng& rng) {
  return Model<T>(config, task, rng);
}

template <class T>
ModelOutput<T> forward_classification(Model<T>& model, const Tensor<T>& points, Mode mode,
                                      Rng* rng = nullptr) {
  if (model.task() != Task::classification) throw ConfigError("model was built for segmentation");
  return model.forward(points, mode, rng);
}

template <class T>
ModelOutput<T> forward_segmentation(Model<T>& model, const Tensor<T>& points, Mode mode,
                                    Rng* rng = nullptr) {
  if (model.task() != Task::segmentation) throw ConfigError("model was built for classification");
  return model.forward(points, mode, rng);
}

}  // namespace pointresnet
