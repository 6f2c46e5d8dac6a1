#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "pointresnet/data/dataset.hpp"
#include "pointresnet/data/text.hpp"
#include "pointresnet/error.hpp"
#include "pointresnet/model.hpp"

namespace pointresnet {

inline std::size_t default_epochs(Task task) { return task == Task::classification ? 250 : 200; }

struct TrainPlan {
  Task task = Task::classification;
  std::size_t epochs = 250;
  double base_lr = 0.001;
  double lr_decay = 0.8;
  std::size_t lr_decay_interval = 20;
  double min_lr = 1e-5;
  double bn_decay = 0.5;
  std::size_t batch_size = 32;
  double alpha = 0.001;
  std::uint64_t seed = 0;

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw ConfigError("invalid training plan field '" + field + "': " + why);
    };
    if (epochs == 0) fail("epochs", "must be positive");
    if (!(base_lr > 0) || !std::isfinite(base_lr)) fail("lr", "must be positive");
    if (!(lr_decay > 0 && lr_decay <= 1)) fail("lr_decay", "must be in (0, 1]");
    if (lr_decay_interval == 0) fail("lr_decay_interval", "must be positive");
    if (!(min_lr > 0)) fail("min_lr", "must be positive");
    if (!(bn_decay > 0 && bn_decay < 1)) fail("bn_decay", "must be in (0, 1)");
    if (batch_size == 0) fail("batch_size", "must be positive");
    if (!(alpha >= 0) || !std::isfinite(alpha)) fail("alpha", "must be >= 0");
  }
};

inline TrainPlan default_plan(Task task) {
  TrainPlan p;
  p.task = task;
  p.epochs = default_epochs(task);
  return p;
}

/// Step decay: base_lr * decay^floor(epoch / interval), never below min_lr.
/// `epoch` counts from 0.
inline double lr_schedule(const TrainPlan& plan, std::size_t epoch) {
  const double k = static_cast<double>(epoch / plan.lr_decay_interval);
  return std::max(plan.min_lr, plan.base_lr * std::pow(plan.lr_decay, k));
}

// ---------------------------------------------------------------------------
// key = value configuration

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// `key = value` lines; '#' starts a comment.
inline std::vector<ConfigEntry> parse_config_text(std::string_view content) {
  std::vector<ConfigEntry> out;
  std::size_t number = 0, pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++number;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto trim = [](std::string_view s) {
      while (!s.empty() && text::is_space(s.front())) s.remove_prefix(1);
      while (!s.empty() && text::is_space(s.back())) s.remove_suffix(1);
      return s;
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ParseError(ParseErrorKind::missing_field, number, "expected 'key = value'");
    ConfigEntry e{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), number};
    if (e.key.empty()) throw ParseError(ParseErrorKind::missing_field, number, "empty key");
    out.push_back(std::move(e));
  }
  return out;
}

namespace detail {

inline std::size_t to_count(const std::string& key, const std::string& v) {
  long long n;
  if (!text::parse_long(v, n) || n < 0) throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
  return static_cast<std::size_t>(n);
}

inline double to_real(const std::string& key, const std::string& v) {
  double d;
  if (!text::parse_double(v, d)) throw ConfigError(key + ": '" + v + "' is not a number");
  return d;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

/// "64,64,64" or "64 64 64"; "" or "none" is the empty list.
inline std::vector<std::size_t> to_widths(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty() || v == "none") return out;
  std::string s = v;
  std::replace(s.begin(), s.end(), ',', ' ');
  for (auto tok : text::split(s)) out.push_back(to_count(key, std::string(tok)));
  return out;
}

}  // namespace detail

/// Config keys understood by apply_setting; `preset` and `task` are handled
/// by the caller since they select defaults for everything else.
inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "preset", "task", "n_points", "stem_widths", "stage1_widths", "post_ft_width", "block3_widths",
      "block4_widths", "tail_widths", "cls_head_widths", "seg_head_widths", "tnet_encoder_widths",
      "tnet_head_widths", "dropout_p", "dropout_layers", "input_transform", "feature_transform",
      "logit_init_scale", "epochs", "lr", "lr_decay", "lr_decay_interval", "min_lr", "bn_decay",
      "batch_size", "alpha", "seed"};
  return keys;
}

inline void apply_setting(ModelConfig& c, TrainPlan& p, const std::string& key, const std::string& v) {
  using namespace detail;
  if (key == "n_points") c.n_points = to_count(key, v);
  else if (key == "stem_widths") c.stem_widths = to_widths(key, v);
  else if (key == "stage1_widths") c.stage1_widths = to_widths(key, v);
  else if (key == "post_ft_width") c.post_ft_width = to_count(key, v);
  else if (key == "block3_widths") c.block3_widths = to_widths(key, v);
  else if (key == "block4_widths") c.block4_widths = to_widths(key, v);
  else if (key == "tail_widths") c.tail_widths = to_widths(key, v);
  else if (key == "cls_head_widths") c.cls_head_widths = to_widths(key, v);
  else if (key == "seg_head_widths") c.seg_head_widths = to_widths(key, v);
  else if (key == "tnet_encoder_widths") c.tnet_encoder_widths = to_widths(key, v);
  else if (key == "tnet_head_widths") c.tnet_head_widths = to_widths(key, v);
  else if (key == "dropout_p") c.dropout_p = to_real(key, v);
  else if (key == "dropout_layers") c.dropout_layers = to_count(key, v);
  else if (key == "input_transform") c.input_transform = to_bool(key, v);
  else if (key == "feature_transform") c.feature_transform = to_bool(key, v);
  else if (key == "logit_init_scale") c.logit_init_scale = to_real(key, v);
  else if (key == "epochs") p.epochs = to_count(key, v);
  else if (key == "lr") p.base_lr = to_real(key, v);
  else if (key == "lr_decay") p.lr_decay = to_real(key, v);
  else if (key == "lr_decay_interval") p.lr_decay_interval = to_count(key, v);
  else if (key == "min_lr") p.min_lr = to_real(key, v);
  else if (key == "bn_decay") p.bn_decay = to_real(key, v);
  else if (key == "batch_size") p.batch_size = to_count(key, v);
  else if (key == "alpha") p.alpha = to_real(key, v);
  else if (key == "seed") p.seed = static_cast<std::uint64_t>(to_count(key, v));
  else if (key == "preset" || key == "task") {
  } else {
    std::string valid;
    for (const auto& k : config_keys()) valid += (valid.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid);
  }
}

/// Resolves settings in precedence order: preset and task select defaults,
/// then `file` entries, then `overrides` (command-line flags) apply.
struct ResolvedSettings {
  ModelConfig model;
  TrainPlan plan;
};

inline ResolvedSettings resolve_settings(const std::vector<ConfigEntry>& file,
                                         const std::vector<ConfigEntry>& overrides) {
  std::string preset_name = "pointresnet10", task_name = "cls";
  bool epochs_given = false;
  for (const auto* list : {&file, &overrides})
    for (const auto& e : *list) {
      if (e.key == "preset") preset_name = e.value;
      if (e.key == "task") task_name = e.value;
      if (e.key == "epochs") epochs_given = true;
    }
  ResolvedSettings r;
  const Task task = parse_task(task_name);
  r.model = preset(preset_name);
  r.plan = default_plan(task);
  for (const auto* list : {&file, &overrides})
    for (const auto& e : *list) {
      try {
        apply_setting(r.model, r.plan, e.key, e.value);
      } catch (const ConfigError& err) {
        throw ConfigError(e.line ? "config line " + std::to_string(e.line) + ": " + err.what() : err.what());
      }
    }
  if (!epochs_given) r.plan.epochs = default_epochs(task);
  return r;
}

// ---------------------------------------------------------------------------
// JSON forms (checkpoint metadata)

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"preset", c.preset_name},
          {"n_points", c.n_points},
          {"stem_widths", c.stem_widths},
          {"stage1_widths", c.stage1_widths},
          {"post_ft_width", c.post_ft_width},
          {"block3_widths", c.block3_widths},
          {"block4_widths", c.block4_widths},
          {"tail_widths", c.tail_widths},
          {"cls_head_widths", c.cls_head_widths},
          {"seg_head_widths", c.seg_head_widths},
          {"tnet_encoder_widths", c.tnet_encoder_widths},
          {"tnet_head_widths", c.tnet_head_widths},
          {"num_classes", c.num_classes},
          {"num_parts", c.num_parts},
          {"dropout_p", c.dropout_p},
          {"dropout_layers", c.dropout_layers},
          {"input_transform", c.input_transform},
          {"feature_transform", c.feature_transform},
          {"logit_init_scale", c.logit_init_scale}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.preset_name = j.at("preset").get<std::string>();
  j.at("n_points").get_to(c.n_points);
  j.at("stem_widths").get_to(c.stem_widths);
  j.at("stage1_widths").get_to(c.stage1_widths);
  j.at("post_ft_width").get_to(c.post_ft_width);
  j.at("block3_widths").get_to(c.block3_widths);
  j.at("block4_widths").get_to(c.block4_widths);
  j.at("tail_widths").get_to(c.tail_widths);
  j.at("cls_head_widths").get_to(c.cls_head_widths);
  j.at("seg_head_widths").get_to(c.seg_head_widths);
  j.at("tnet_encoder_widths").get_to(c.tnet_encoder_widths);
  j.at("tnet_head_widths").get_to(c.tnet_head_widths);
  j.at("num_classes").get_to(c.num_classes);
  j.at("num_parts").get_to(c.num_parts);
  j.at("dropout_p").get_to(c.dropout_p);
  j.at("dropout_layers").get_to(c.dropout_layers);
  j.at("input_transform").get_to(c.input_transform);
  j.at("feature_transform").get_to(c.feature_transform);
  j.at("logit_init_scale").get_to(c.logit_init_scale);
  return c;
}

inline nlohmann::json to_json(const TrainPlan& p) {
  return {{"task", to_string(p.task)},   {"epochs", p.epochs},
          {"lr", p.base_lr},             {"lr_decay", p.lr_decay},
          {"lr_decay_interval", p.lr_decay_interval}, {"min_lr", p.min_lr},
          {"bn_decay", p.bn_decay},      {"batch_size", p.batch_size},
          {"alpha", p.alpha},            {"seed", p.seed}};
}

inline TrainPlan train_plan_from_json(const nlohmann::json& j) {
  TrainPlan p;
  p.task = parse_task(j.at("task").get<std::string>());
  j.at("epochs").get_to(p.epochs);
  j.at("lr").get_to(p.base_lr);
  j.at("lr_decay").get_to(p.lr_decay);
  j.at("lr_decay_interval").get_to(p.lr_decay_interval);
  j.at("min_lr").get_to(p.min_lr);
  j.at("bn_decay").get_to(p.bn_decay);
  j.at("batch_size").get_to(p.batch_size);
  j.at("alpha").get_to(p.alpha);
  j.at("seed").get_to(p.seed);
  return p;
}

inline nlohmann::json to_json(const DatasetInfo& d) {
  return {{"class_names", d.class_names}, {"part_counts", d.part_counts}, {"label_base", d.label_base}};
}

inline DatasetInfo dataset_info_from_json(const nlohmann::json& j) {
  DatasetInfo d;
  j.at("class_names").get_to(d.class_names);
  j.at("part_counts").get_to(d.part_counts);
  j.at("label_base").get_to(d.label_base);
  return d;
}

}  // namespace pointresnet
