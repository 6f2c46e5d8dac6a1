#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "pointresnet/train/trainer.hpp"

using namespace pointresnet;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / (std::string("pointresnet_train_") +
                                         ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string str(const std::string& rel = "") const { return (path_ / rel).string(); }

 private:
  fs::path path_;
};

ModelConfig small_config() {
  auto c = toy_config();
  c.n_points = 64;
  return c;
}

TrainPlan small_plan(Task task, std::size_t epochs, std::uint64_t seed = 1) {
  TrainPlan p = default_plan(task);
  p.epochs = epochs;
  p.batch_size = 8;
  p.seed = seed;
  return p;
}

const Dataset& shapes() {
  static const Dataset d = make_synthetic_dataset(
      {ShapeKind::sphere, ShapeKind::cube, ShapeKind::cylinder}, 6, 3, 64, 11);
  return d;
}

std::vector<std::vector<float>> snapshot(const Model<float>& m) {
  std::vector<std::vector<float>> out;
  for (const auto& nt : m.named_tensors()) out.emplace_back(nt.tensor.values().begin(), nt.tensor.values().end());
  return out;
}

std::string slurp(const std::string& path) { return text::read_file(path); }

}  // namespace

// --- Adam ------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParametersAndCountsStep) {
  Tensor<float> p(Shape{3}, {1, -2, 3});
  AdamState<float> st;
  adam_step<float>({p}, {{0, 0, 0}}, st, 0.001);
  EXPECT_EQ(st.t, 1u);
  EXPECT_EQ(p[0], 1.0f);
  EXPECT_EQ(p[1], -2.0f);
  adam_step<float>({p}, st, 0.001);  // no tape gradient at all
  EXPECT_EQ(st.t, 2u);
  EXPECT_EQ(p[2], 3.0f);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor<double> p(Shape{1}, 0.0);
  AdamState<double> st;
  adam_step<double>({p}, {{1.0}}, st, 0.001);
  EXPECT_NEAR(p[0], -0.001, 1e-6);
  EXPECT_NEAR(st.m[0][0], 0.1, 1e-15);
  EXPECT_NEAR(st.v[0][0], 0.001, 1e-15);
}

TEST(Adam, MatchesClosedFormRecurrence) {
  Tensor<double> p(Shape{1}, 0.5);
  AdamState<double> st;
  double m = 0, v = 0, theta = 0.5;
  const double grads[] = {0.3, -1.2, 0.7, 2.0, -0.1};
  for (int t = 1; t <= 5; ++t) {
    const double g = grads[t - 1];
    adam_step<double>({p}, {{g}}, st, 0.01);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    theta -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p[0], theta, 1e-12);
  }
}

TEST(Adam, IdenticalHistoriesUpdateIdentically) {
  Tensor<float> a(Shape{2}, {0.25f, 0.25f}), b(Shape{1}, 0.25f);
  AdamState<float> st;
  for (int i = 0; i < 4; ++i) adam_step<float>({a, b}, {{0.5f * i, 0.5f * i}, {0.5f * i}}, st, 0.01);
  EXPECT_EQ(a[0], a[1]);
  EXPECT_EQ(a[0], b[0]);
}

TEST(Adam, ShapeMismatch) {
  Tensor<float> p(Shape{3}, 0.0f);
  AdamState<float> st;
  EXPECT_THROW(adam_step<float>({p}, {{1, 2}}, st, 0.001), ShapeError);
  EXPECT_THROW(adam_step<float>({p}, {}, st, 0.001), ShapeError);
  adam_step<float>({p}, st, 0.001);
  Tensor<float> q(Shape{4}, 0.0f);
  EXPECT_THROW(adam_step<float>({q}, st, 0.001), ShapeError);
  EXPECT_THROW(adam_step<float>({p}, st, 0.0), InvalidArgument);
}

// --- schedule and plan -----------------------------------------------------

TEST(LrSchedule, StepDecayAndClamp) {
  TrainPlan p;
  EXPECT_DOUBLE_EQ(lr_schedule(p, 0), 0.001);
  EXPECT_DOUBLE_EQ(lr_schedule(p, 19), 0.001);
  EXPECT_NEAR(lr_schedule(p, 20), 0.0008, 1e-15);
  EXPECT_NEAR(lr_schedule(p, 45), 0.001 * 0.64, 1e-15);
  EXPECT_EQ(lr_schedule(p, 100000), 1e-5);
  double prev = lr_schedule(p, 0);
  for (std::size_t e = 1; e < 2000; ++e) {
    const double lr = lr_schedule(p, e);
    EXPECT_LE(lr, prev);
    EXPECT_GE(lr, p.min_lr);
    prev = lr;
  }
}

TEST(Plan, DefaultsAndValidation) {
  auto cls = default_plan(Task::classification), seg = default_plan(Task::segmentation);
  EXPECT_EQ(cls.epochs, 250u);
  EXPECT_EQ(seg.epochs, 200u);
  EXPECT_EQ(cls.base_lr, 0.001);
  EXPECT_EQ(cls.lr_decay, 0.8);
  EXPECT_EQ(cls.bn_decay, 0.5);
  EXPECT_EQ(cls.batch_size, 32u);
  EXPECT_EQ(cls.alpha, 0.001);
  cls.validate();
  auto bad = cls;
  bad.lr_decay = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cls;
  bad.min_lr = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cls;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Config, FileThenFlagsPrecedence) {
  auto file = parse_config_text("# run\npreset = pointresnet11\nlr = 0.002\nstage1_widths = 32, 32, 32\n\nepochs=7\n");
  ASSERT_EQ(file.size(), 4u);
  EXPECT_EQ(file[1].line, 3u);
  auto r = resolve_settings(file, {{"lr", "0.003", 0}, {"task", "seg", 0}});
  EXPECT_EQ(r.model.n_points, 2048u);
  EXPECT_EQ(r.model.stage1_widths, (std::vector<std::size_t>{32, 32, 32}));
  EXPECT_EQ(r.plan.base_lr, 0.003);
  EXPECT_EQ(r.plan.epochs, 7u);
  EXPECT_EQ(r.plan.task, Task::segmentation);
  EXPECT_EQ(resolve_settings({}, {{"task", "seg", 0}}).plan.epochs, 200u);
  EXPECT_EQ(resolve_settings({}, {{"task", "cls", 0}}).plan.epochs, 250u);
  EXPECT_EQ(resolve_settings({}, {}).model.n_points, 1024u);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config_text("lr 0.1\n"), ParseError);
  try {
    resolve_settings(parse_config_text("\nlearning_rate = 0.1\n"), {});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
  EXPECT_THROW(resolve_settings({{"batch_size", "-1", 1}}, {}), ConfigError);
  EXPECT_THROW(resolve_settings({{"feature_transform", "maybe", 1}}, {}), ConfigError);
  EXPECT_THROW(resolve_settings({{"preset", "pointresnet99", 1}}, {}), ConfigError);
  EXPECT_THROW(resolve_settings({{"task", "detect", 1}}, {}), ConfigError);
}

// --- training loop ---------------------------------------------------------

TEST(TrainEpoch, StepZeroLossAndDeterminism) {
  std::vector<EpochSummary> runs[2];
  for (auto& run : runs) {
    Trainer t(small_config(), small_plan(Task::classification, 3), shapes());
    while (!t.done()) run.push_back(t.run_epoch());
  }
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(format_log_line(runs[0][e]), format_log_line(runs[1][e]));
  EXPECT_NEAR(runs[0][0].cross_entropy, std::log(3.0), 0.1);
}

TEST(TrainEpoch, AlphaZeroMakesTotalEqualH) {
  auto plan = small_plan(Task::classification, 2);
  plan.alpha = 0;
  Trainer t(small_config(), plan, shapes());
  while (!t.done()) {
    auto s = t.run_epoch();
    EXPECT_EQ(s.total, s.cross_entropy);
  }
}

TEST(TrainEpoch, NonFiniteLossAborts) {
  Trainer t(small_config(), small_plan(Task::classification, 1), shapes());
  Tensor<float> w = t.model().head().back().weight();
  w.values_mut()[0] = std::numeric_limits<float>::infinity();
  try {
    t.run_epoch();
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_TRUE(msg.find("batch 0") != std::string::npos || msg.find("non-finite") != std::string::npos) << msg;
  }
}

TEST(TrainEpoch, SegmentationRuns) {
  auto d = make_synthetic_dataset({ShapeKind::sphere}, 8, 2, 64, 3);
  Trainer t(small_config(), small_plan(Task::segmentation, 2), d);
  EXPECT_EQ(t.model().config().num_parts, 2u);
  auto s = t.run_epoch();
  EXPECT_GT(s.train_acc, 0.0);
  ASSERT_TRUE(s.eval_acc.has_value());
}

TEST(TrainEpoch, LossDecreasesOnSyntheticShapes) {
  const auto d = make_synthetic_dataset({ShapeKind::sphere, ShapeKind::cube, ShapeKind::cylinder}, 20, 0, 64, 21);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Trainer t(small_config(), small_plan(Task::classification, 50, seed), d);
    auto history = run_training(t);
    ASSERT_EQ(history.size(), 50u);
    EXPECT_LT(history.back().cross_entropy, history.front().cross_entropy) << "seed " << seed;
  }
}

TEST(Evaluate, PureAndRepeatable) {
  Trainer t(small_config(), small_plan(Task::classification, 1), shapes());
  t.run_epoch();
  const auto before = snapshot(t.model());
  auto a = evaluate(t.model(), shapes().test, shapes().info, Task::classification);
  auto b = evaluate(t.model(), shapes().test, shapes().info, Task::classification);
  EXPECT_EQ(snapshot(t.model()), before);
  EXPECT_EQ(a.classes, b.classes);
  EXPECT_EQ(a.metrics.eval_acc, b.metrics.eval_acc);
  EXPECT_EQ(a.metrics.confusion, b.metrics.confusion);
  EXPECT_THROW(evaluate(t.model(), {}, shapes().info, Task::classification), DegenerateInputError);
}

TEST(Evaluate, SegmentationDecisionsStayInsideTheCategory) {
  auto d = make_synthetic_dataset({ShapeKind::sphere, ShapeKind::cylinder}, 3, 2, 64, 4);
  Trainer t(small_config(), small_plan(Task::segmentation, 1), d);
  t.run_epoch();
  auto ev = evaluate(t.model(), d.test, d.info, Task::segmentation);
  const auto offsets = d.info.part_offsets();
  for (std::size_t s = 0; s < d.test.size(); ++s) {
    const auto c = static_cast<std::size_t>(*d.test[s].class_label);
    for (int p : ev.parts[s]) {
      EXPECT_GE(p, static_cast<int>(offsets[c]));
      EXPECT_LT(p, static_cast<int>(offsets[c] + d.info.part_counts[c]));
    }
  }
}

// --- checkpoints -----------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitwise) {
  Trainer t(small_config(), small_plan(Task::classification, 2), shapes());
  t.run_epoch();
  const Checkpoint c = t.checkpoint();
  const std::string bytes = serialize_checkpoint(c);
  EXPECT_EQ(bytes.substr(0, 8), "PRNCKPT1");
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.epoch, 1u);
  EXPECT_EQ(back.rng_state, c.rng_state);

  Trainer resumed(back, shapes());
  EXPECT_EQ(snapshot(resumed.model()), snapshot(t.model()));
  EXPECT_EQ(resumed.optimizer().m, t.optimizer().m);
  EXPECT_EQ(resumed.optimizer().v, t.optimizer().v);
  EXPECT_EQ(resumed.optimizer().t, t.optimizer().t);

  TempDir dir;
  save_checkpoint(dir.str("a.ckpt"), c);
  EXPECT_EQ(slurp(dir.str("a.ckpt")), bytes);
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(dir.str("a.ckpt"))), bytes);
}

TEST(Checkpoint, DistinctErrors) {
  Trainer t(small_config(), small_plan(Task::classification, 1), shapes());
  const std::string bytes = serialize_checkpoint(t.checkpoint());
  auto kind = [](const std::string& b) {
    try {
      deserialize_checkpoint(b);
    } catch (const CheckpointError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "expected a CheckpointError";
    return CheckpointErrorKind::io;
  };
  EXPECT_EQ(kind("GARBAGE!" + bytes.substr(8)), CheckpointErrorKind::bad_magic);
  EXPECT_EQ(kind("PRNCKPT2" + bytes.substr(8)), CheckpointErrorKind::version_mismatch);
  EXPECT_EQ(kind(bytes.substr(0, bytes.size() - 6)), CheckpointErrorKind::truncated);
  EXPECT_EQ(kind(bytes + "x"), CheckpointErrorKind::malformed);
  std::string broken = bytes;
  broken[17] = '!';
  EXPECT_EQ(kind(broken), CheckpointErrorKind::malformed);
  std::string old = bytes;
  const auto pos = old.find("\"format_version\":1");
  ASSERT_NE(pos, std::string::npos);
  old[pos + 17] = '7';
  EXPECT_EQ(kind(old), CheckpointErrorKind::version_mismatch);
  for (std::size_t cut = 0; cut < bytes.size(); cut += 97) EXPECT_NE(kind(bytes.substr(0, cut)), CheckpointErrorKind::io);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), CheckpointError);
}

TEST(Checkpoint, ShapeMismatchIsReported) {
  Trainer t(small_config(), small_plan(Task::classification, 1), shapes());
  Checkpoint c = t.checkpoint();
  Model<float> other([] {
    auto cfg = small_config();
    cfg.post_ft_width = 6;
    cfg.num_classes = 3;
    return cfg;
  }(), Task::classification, *std::make_unique<Rng>(0));
  try {
    restore_model_arrays(c, other, nullptr);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointErrorKind::mismatch);
  }
  auto d = make_synthetic_dataset({ShapeKind::sphere}, 2, 0, 64, 1);
  EXPECT_THROW(Trainer(c, d), CheckpointError);
}

// --- runs on disk ----------------------------------------------------------

TEST(RunTraining, IdenticalSeedsGiveIdenticalLogs) {
  TempDir a, b;
  for (auto* dir : {&a, &b}) {
    Trainer t(small_config(), small_plan(Task::classification, 4), shapes());
    run_training(t, {dir->str(), true, {}});
  }
  const std::string la = slurp(a.str("log.csv"));
  EXPECT_EQ(la, slurp(b.str("log.csv")));
  EXPECT_EQ(std::count(la.begin(), la.end(), '\n'), 5);
  EXPECT_EQ(la.substr(0, la.find('\n')), "epoch,lr,H,L_reg,total,train_acc,eval_acc");
  EXPECT_TRUE(fs::exists(a.str("last.ckpt")));
  EXPECT_TRUE(fs::exists(a.str("best.ckpt")));
}

TEST(RunTraining, ResumeMatchesStraightThrough) {
  TempDir straight, split;
  {
    Trainer t(small_config(), small_plan(Task::classification, 10), shapes());
    run_training(t, {straight.str(), true, {}});
  }
  {
    Trainer t(small_config(), small_plan(Task::classification, 10), shapes());
    run_training(t, {split.str(), true, [](const EpochSummary& s, Trainer&) { return s.epoch < 5; }});
  }
  // Drop anything the interrupted run may have written past its checkpoint.
  {
    std::ofstream log(split.str("log.csv"), std::ios::app);
    log << "junk line from a crashed epoch\n";
  }
  Checkpoint c = load_checkpoint(split.str("last.ckpt"));
  EXPECT_EQ(c.epoch, 5u);
  Trainer resumed(c, shapes());
  run_training(resumed, {split.str(), true, {}});
  EXPECT_EQ(slurp(split.str("log.csv")), slurp(straight.str("log.csv")));
  EXPECT_EQ(slurp(split.str("last.ckpt")), slurp(straight.str("last.ckpt")));
}
