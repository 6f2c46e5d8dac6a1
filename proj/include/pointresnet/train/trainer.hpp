#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pointresnet/data/dataset.hpp"
#include "pointresnet/loss.hpp"
#include "pointresnet/metrics.hpp"
#include "pointresnet/model.hpp"
#include "pointresnet/train/checkpoint.hpp"
#include "pointresnet/train/optimizer.hpp"
#include "pointresnet/train/plan.hpp"

namespace pointresnet {

// Independent random streams derived from the run seed.
inline constexpr std::uint64_t init_stream = 1;
inline constexpr std::uint64_t dropout_stream = 2;
inline constexpr std::uint64_t shuffle_stream = 3;

struct EpochSummary {
  std::size_t epoch = 0;  // 1-based count of completed epochs
  double lr = 0;
  double cross_entropy = 0;
  double regularizer = 0;
  double total = 0;
  double train_acc = 0;
  std::optional<double> eval_acc;
};

inline const char* log_header() { return "epoch,lr,H,L_reg,total,train_acc,eval_acc"; }

/// One log line; numbers use the shortest text that reads back exactly.
inline std::string format_log_line(const EpochSummary& s) {
  std::string line = std::to_string(s.epoch);
  for (double v : {s.lr, s.cross_entropy, s.regularizer, s.total, s.train_acc}) line += "," + format_number(v);
  line += ",";
  if (s.eval_acc) line += format_number(*s.eval_acc);
  return line;
}

/// Argmax of each row of `logits` ([rows, k]) restricted to [lo, lo + count).
inline int argmax_range(const float* row, std::size_t lo, std::size_t count) {
  std::size_t best = lo;
  for (std::size_t j = lo + 1; j < lo + count; ++j)
    if (row[j] > row[best]) best = j;
  return static_cast<int>(best);
}

/// Per-sample classes or per-point global part indices; segmentation
/// decisions are restricted to the parts of each sample's category.
inline std::vector<int> decide(const Tensor<float>& logits, const Batch<float>& batch, const DatasetInfo& info,
                               Task task) {
  const std::size_t k = logits.extent(-1);
  const float* x = logits.values().data();
  std::vector<int> out;
  if (task == Task::classification) {
    for (std::size_t s = 0; s < batch.size(); ++s) out.push_back(argmax_range(x + s * k, 0, k));
    return out;
  }
  const std::size_t n = logits.extent(1);
  const auto offsets = info.part_offsets();
  for (std::size_t s = 0; s < batch.size(); ++s) {
    std::size_t lo = 0, count = k;
    const int label = batch.labels[s];
    if (info.has_parts() && label >= 0 && static_cast<std::size_t>(label) < offsets.size()) {
      lo = offsets[static_cast<std::size_t>(label)];
      count = info.part_counts[static_cast<std::size_t>(label)];
    }
    for (std::size_t p = 0; p < n; ++p) out.push_back(argmax_range(x + (s * n + p) * k, lo, count));
  }
  return out;
}

inline std::span<const int> targets_for(const Batch<float>& b, Task task) {
  if (task == Task::segmentation) {
    if (b.part_targets.empty()) throw ConfigError("segmentation batch carries no part labels");
    return b.part_targets;
  }
  return b.labels;
}

/// One pass over `train` in the (seed, epoch) order: forward, total loss,
/// backward and an Adam step per batch. Aborts on a non-finite loss.
inline EpochSummary train_epoch(Model<float>& model, const std::vector<PointCloudSample>& train,
                                const DatasetInfo& info, const TrainPlan& plan, AdamState<float>& adam,
                                std::size_t epoch, Rng& rng) {
  model.set_bn_decay(plan.bn_decay);
  const double lr = lr_schedule(plan, epoch);
  BatchIterator<float> it(train, info, plan.batch_size, derive_seed(plan.seed, shuffle_stream), epoch);
  const auto params = model.parameters();
  double sum_h = 0, sum_l = 0, sum_t = 0, weight = 0;
  std::size_t correct = 0, decisions = 0, batch_id = 0;
  Batch<float> batch;
  while (it.next(batch)) {
    const auto targets = targets_for(batch, plan.task);
    Tape<float> tape;
    TapeScope<float> scope(tape);
    auto out = model.forward(batch.points, Mode::train, &rng);
    auto h = cross_entropy(out.logits, targets);
    auto reg = orthogonality_reg(out.feature_transform);
    auto loss = total_loss(h, reg, plan.alpha);
    if (!std::isfinite(loss.parts.total) || !std::isfinite(loss.parts.cross_entropy) ||
        !std::isfinite(loss.parts.regularizer)) {
      throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batch_id) + ": H=" + format_number(loss.parts.cross_entropy) +
                           " L_reg=" + format_number(loss.parts.regularizer) +
                           " total=" + format_number(loss.parts.total));
    }
    model.zero_grad();
    tape.backward(loss.value);
    adam_step(params, adam, lr);

    const double w = static_cast<double>(batch.size());
    sum_h += w * loss.parts.cross_entropy;
    sum_l += w * loss.parts.regularizer;
    sum_t += w * loss.parts.total;
    weight += w;
    const auto pred = decide(out.logits, batch, info, plan.task);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == targets[i];
    decisions += pred.size();
    ++batch_id;
  }
  EpochSummary s;
  s.epoch = epoch + 1;
  s.lr = lr;
  s.cross_entropy = sum_h / weight;
  s.regularizer = sum_l / weight;
  s.total = sum_t / weight;
  s.train_acc = static_cast<double>(correct) / static_cast<double>(decisions);
  return s;
}

struct Evaluation {
  Metrics metrics;
  std::vector<int> classes;                // classification: one per sample
  std::vector<std::vector<int>> parts;     // segmentation: global part index per point
};

/// Eval-mode forward over `samples` in order; touches neither parameters
/// nor batch-norm statistics.
inline Evaluation evaluate(Model<float>& model, const std::vector<PointCloudSample>& samples,
                           const DatasetInfo& info, Task task, std::size_t batch_size = 32) {
  if (samples.empty()) throw DegenerateInputError("evaluate: no samples");
  NoGradScope<float> no_grad;
  BatchIterator<float> it(samples, info, batch_size, 0, 0, false);
  Evaluation ev;
  std::vector<int> targets;
  std::vector<std::vector<int>> part_targets;
  Batch<float> batch;
  while (it.next(batch)) {
    auto out = model.forward(batch.points, Mode::eval);
    auto pred = decide(out.logits, batch, info, task);
    if (task == Task::classification) {
      ev.classes.insert(ev.classes.end(), pred.begin(), pred.end());
      targets.insert(targets.end(), batch.labels.begin(), batch.labels.end());
    } else {
      const std::size_t n = batch.points.extent(1);
      const auto t = targets_for(batch, task);
      for (std::size_t s = 0; s < batch.size(); ++s) {
        ev.parts.emplace_back(pred.begin() + static_cast<std::ptrdiff_t>(s * n),
                              pred.begin() + static_cast<std::ptrdiff_t>((s + 1) * n));
        part_targets.emplace_back(t.begin() + static_cast<std::ptrdiff_t>(s * n),
                                  t.begin() + static_cast<std::ptrdiff_t>((s + 1) * n));
      }
    }
  }
  ev.metrics = task == Task::classification
                   ? metrics_classification(ev.classes, targets, info.num_classes())
                   : metrics_segmentation(ev.parts, part_targets);
  return ev;
}

/// Owns model, optimizer and random state for one training run.
class Trainer {
 public:
  /// Fresh run; class and part counts come from the dataset.
  Trainer(ModelConfig config, TrainPlan plan, const Dataset& data) : plan_(plan), data_(&data) {
    plan_.validate();
    config.num_classes = data.info.num_classes();
    if (plan.task == Task::segmentation) {
      if (!data.info.has_parts()) throw ConfigError("segmentation needs a dataset with part labels");
      config.num_parts = data.info.num_parts();
    }
    config.validate(plan.task);
    Rng init(derive_seed(plan.seed, init_stream));
    model_.emplace(config, plan.task, init);
    model_->set_bn_decay(plan_.bn_decay);
    rng_ = Rng(derive_seed(plan.seed, dropout_stream));
  }

  /// Continues from `c`; `plan.epochs` may extend the original run.
  Trainer(const Checkpoint& c, const Dataset& data, std::optional<std::size_t> epochs = std::nullopt)
      : plan_(c.plan), data_(&data) {
    if (epochs) plan_.epochs = *epochs;
    plan_.validate();
    if (c.dataset.class_names != data.info.class_names || c.dataset.part_counts != data.info.part_counts)
      throw CheckpointError(CheckpointErrorKind::mismatch, "checkpoint was trained on a different class/part layout");
    Rng init(derive_seed(plan_.seed, init_stream));
    model_.emplace(c.config, c.task, init);
    restore_model_arrays(c, *model_, &adam_);
    model_->set_bn_decay(plan_.bn_decay);
    rng_.restore(c.rng_state);
    epoch_ = c.epoch;
    best_eval_acc_ = c.best_eval_acc;
    best_epoch_ = c.best_epoch;
  }

  bool done() const { return epoch_ >= plan_.epochs; }
  std::size_t epoch() const { return epoch_; }
  const TrainPlan& plan() const { return plan_; }
  Model<float>& model() { return *model_; }
  const AdamState<float>& optimizer() const { return adam_; }
  double best_eval_acc() const { return best_eval_acc_; }
  std::size_t best_epoch() const { return best_epoch_; }

  /// Trains one epoch, then evaluates the test split when there is one.
  EpochSummary run_epoch() {
    EpochSummary s = train_epoch(*model_, data_->train, data_->info, plan_, adam_, epoch_, rng_);
    ++epoch_;
    if (!data_->test.empty()) {
      s.eval_acc = evaluate(*model_, data_->test, data_->info, plan_.task, plan_.batch_size).metrics.eval_acc;
      if (*s.eval_acc > best_eval_acc_) {
        best_eval_acc_ = *s.eval_acc;
        best_epoch_ = epoch_;
      }
    }
    return s;
  }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.config = model_->config();
    c.task = plan_.task;
    c.plan = plan_;
    c.dataset = data_->info;
    c.epoch = epoch_;
    c.rng_state = rng_.state();
    c.adam_step = adam_.t;
    c.adam_beta1 = adam_.beta1;
    c.adam_beta2 = adam_.beta2;
    c.adam_epsilon = adam_.epsilon;
    c.best_eval_acc = best_eval_acc_;
    c.best_epoch = best_epoch_;
    append_model_arrays(c, *model_, adam_);
    return c;
  }

 private:
  TrainPlan plan_;
  const Dataset* data_;
  std::optional<Model<float>> model_;
  AdamState<float> adam_;
  Rng rng_;
  std::size_t epoch_ = 0;
  double best_eval_acc_ = -1;
  std::size_t best_epoch_ = 0;
};

struct RunOptions {
  std::string out_dir;                 // empty: keep nothing on disk
  bool save_checkpoints = true;
  /// Called after each epoch; returning false stops the run early.
  std::function<bool(const EpochSummary&, Trainer&)> on_epoch;
};

inline std::string log_path(const std::string& out_dir) { return (std::filesystem::path(out_dir) / "log.csv").string(); }
inline std::string last_checkpoint_path(const std::string& out_dir) {
  return (std::filesystem::path(out_dir) / "last.ckpt").string();
}
inline std::string best_checkpoint_path(const std::string& out_dir) {
  return (std::filesystem::path(out_dir) / "best.ckpt").string();
}

/// Keeps the first `epochs` data lines of an existing log so a resumed run
/// continues it exactly where the checkpoint left off.
inline void truncate_log(const std::string& path, std::size_t epochs) {
  std::ifstream in(path);
  std::string line, kept;
  std::size_t n = 0;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      kept += line + "\n";
      continue;
    }
    if (n++ >= epochs) break;
    kept += line + "\n";
  }
  in.close();
  if (n < epochs) throw ConfigError("log " + path + " has fewer lines than the checkpoint's " + std::to_string(epochs) + " epochs");
  text::write_file(path, kept);
}

/// Runs epochs until the plan is complete or `on_epoch` asks to stop,
/// appending to log.csv and refreshing last.ckpt / best.ckpt.
inline std::vector<EpochSummary> run_training(Trainer& trainer, const RunOptions& opt = {}) {
  namespace fs = std::filesystem;
  std::vector<EpochSummary> history;
  const bool files = !opt.out_dir.empty();
  if (files) {
    fs::create_directories(opt.out_dir);
    const std::string log = log_path(opt.out_dir);
    if (trainer.epoch() == 0) text::write_file(log, std::string(log_header()) + "\n");
    else truncate_log(log, trainer.epoch());
  }
  while (!trainer.done()) {
    const double best_before = trainer.best_eval_acc();
    EpochSummary s = trainer.run_epoch();
    history.push_back(s);
    if (files) {
      std::ofstream log(log_path(opt.out_dir), std::ios::app);
      log << format_log_line(s) << "\n";
      if (!log) throw ConfigError("cannot append to " + log_path(opt.out_dir));
      if (opt.save_checkpoints) {
        const Checkpoint c = trainer.checkpoint();
        save_checkpoint(last_checkpoint_path(opt.out_dir), c);
        if (trainer.best_eval_acc() > best_before) save_checkpoint(best_checkpoint_path(opt.out_dir), c);
      }
    }
    if (opt.on_epoch && !opt.on_epoch(s, trainer)) break;
  }
  return history;
}

}  // namespace pointresnet
