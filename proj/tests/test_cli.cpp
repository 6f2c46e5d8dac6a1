#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "pointresnet/cli.hpp"

using namespace pointresnet;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "pointresnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

bool contains(const std::string& s, const std::string& what) { return s.find(what) != std::string::npos; }

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "pointresnet_cli_test";
    fs::remove_all(dir_);
    auto r = run({"synth", "--out", data(), "--count", "3", "--test-count", "1", "--points", "48", "--seed", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
    text::write_file(path("tiny.cfg"),
                     "# tiny network for fast runs\n"
                     "n_points = 48\nstage1_widths = 8,8,8\npost_ft_width = 8\nblock3_widths = 8,8\n"
                     "block4_widths = 16\ntnet_encoder_widths = 8,16\ntnet_head_widths = 8\n"
                     "cls_head_widths = 16,8\nseg_head_widths = 16,8\nbatch_size = 4\nepochs = 9\n");
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string data() { return (dir_ / "data").string(); }
  static std::string path(const std::string& rel) { return (dir_ / rel).string(); }
  static fs::path dir_;
};

fs::path CliTest::dir_;

}  // namespace

TEST_F(CliTest, SynthWritesManifestAndSamples) {
  const std::string m = text::read_file(data() + "/manifest.csv");
  EXPECT_TRUE(contains(m, "#part sphere 2"));
  EXPECT_TRUE(contains(m, "cylinder/test_0.pts,cylinder,test"));
  EXPECT_EQ(parse_pts(text::read_file(data() + "/cube/train_2.pts")).size(), 48u);
  EXPECT_EQ(parse_seg(text::read_file(data() + "/cube/train_2.seg")).size(), 48u);
}

TEST_F(CliTest, DefaultEpochsFollowTheTask) {
  auto cls = run({"train", "--task", "cls", "--data-root", data(), "--dry-run"});
  ASSERT_EQ(cls.code, 0) << cls.err;
  EXPECT_TRUE(contains(cls.out, "\"epochs\": 250")) << cls.out;
  EXPECT_TRUE(contains(cls.out, "\"lr\": 0.001"));
  EXPECT_TRUE(contains(cls.out, "\"bn_decay\": 0.5"));
  EXPECT_TRUE(contains(cls.out, "\"batch_size\": 32"));
  EXPECT_TRUE(contains(cls.out, "3 classes, 9 train, 3 test"));
  auto seg = run({"train", "--task", "seg", "--data-root", data(), "--dry-run"});
  ASSERT_EQ(seg.code, 0) << seg.err;
  EXPECT_TRUE(contains(seg.out, "\"epochs\": 200")) << seg.out;
  EXPECT_TRUE(contains(seg.out, "\"num_parts\": 11"));
}

TEST_F(CliTest, FlagsOverrideTheConfigFile) {
  auto r = run({"train", "--data-root", data(), "--config", path("tiny.cfg"), "--epochs", "4", "--set", "lr=0.01",
                "--dry-run"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "\"epochs\": 4"));
  EXPECT_TRUE(contains(r.out, "\"lr\": 0.01"));
  EXPECT_TRUE(contains(r.out, "\"batch_size\": 4"));
}

TEST_F(CliTest, TrainEvalPredictReportResume) {
  auto tr = run({"train", "--data-root", data(), "--config", path("tiny.cfg"), "--epochs", "3", "--out", path("run")});
  ASSERT_EQ(tr.code, 0) << tr.err;
  const std::string log3 = text::read_file(path("run/log.csv"));
  EXPECT_EQ(std::count(log3.begin(), log3.end(), '\n'), 4);

  auto resumed = run({"train", "--data-root", data(), "--out", path("run"), "--resume", "--epochs", "5"});
  ASSERT_EQ(resumed.code, 0) << resumed.err;
  auto straight = run({"train", "--data-root", data(), "--config", path("tiny.cfg"), "--epochs", "5", "--out",
                       path("straight")});
  ASSERT_EQ(straight.code, 0) << straight.err;
  EXPECT_EQ(text::read_file(path("run/log.csv")), text::read_file(path("straight/log.csv")));

  auto ev = run({"eval", "--checkpoint", path("run/last.ckpt"), "--manifest", data() + "/manifest.csv", "--split",
                 "all", "--confusion", path("confusion.csv")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_TRUE(contains(ev.out, "samples = 12"));
  EXPECT_TRUE(contains(ev.out, "eval_acc = "));
  const std::string confusion = text::read_file(path("confusion.csv"));
  EXPECT_EQ(std::count(confusion.begin(), confusion.end(), '\n'), 3);

  auto pr = run({"predict", "--checkpoint", path("run/last.ckpt"), "--input", data() + "/cube/test_0.pts"});
  ASSERT_EQ(pr.code, 0) << pr.err;
  EXPECT_TRUE(pr.out == "sphere\n" || pr.out == "cube\n" || pr.out == "cylinder\n") << pr.out;

  auto rep = run({"report", "--log", path("run"), "--out", path("curves.csv")});
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_EQ(text::read_file(path("curves.csv")), text::read_file(path("run/log.csv")));
  EXPECT_TRUE(contains(text::read_file(path("curves.svg")), "<polyline"));
}

TEST_F(CliTest, SegmentationPredictLabelsEveryInputPoint) {
  auto tr = run({"train", "--task", "seg", "--data-root", data(), "--config", path("tiny.cfg"), "--epochs", "1",
                 "--out", path("seg")});
  ASSERT_EQ(tr.code, 0) << tr.err;
  // 100 points against a 48-point model: three windows, the last wrapping.
  std::vector<Point> pts;
  Rng rng(1);
  for (int i = 0; i < 100; ++i) pts.push_back(make_synthetic(ShapeKind::cube, 8, rng).points[0]);
  text::write_file(path("big.pts"), format_pts(pts));
  auto pr = run({"predict", "--checkpoint", path("seg/last.ckpt"), "--input", path("big.pts"), "--category", "cube",
                 "--out", path("big.seg")});
  ASSERT_EQ(pr.code, 0) << pr.err;
  const auto labels = parse_seg(text::read_file(path("big.seg")));
  ASSERT_EQ(labels.size(), 100u);
  for (int l : labels) {
    EXPECT_GE(l, 0);
    EXPECT_LT(l, 6);
  }
  auto missing = run({"predict", "--checkpoint", path("seg/last.ckpt"), "--input", path("big.pts")});
  EXPECT_EQ(missing.code, 1);
  EXPECT_TRUE(contains(missing.err, "--category"));
}

TEST_F(CliTest, UsageErrorsExitNonzeroWithUsage) {
  auto none = run({});
  EXPECT_EQ(none.code, 2);
  EXPECT_TRUE(contains(none.out + none.err, "Usage"));
  auto unknown = run({"frobnicate"});
  EXPECT_EQ(unknown.code, 2);
  EXPECT_TRUE(contains(unknown.out + unknown.err, "Usage"));
  auto flag = run({"train", "--learning-rate", "3"});
  EXPECT_EQ(flag.code, 2);
  EXPECT_TRUE(contains(flag.out + flag.err, "--learning-rate"));
  EXPECT_EQ(run({"eval", "--manifest", "x"}).code, 2);
  EXPECT_EQ(run({"eval", "--checkpoint", "a", "--manifest", "b", "--split", "val"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, MissingFilesAreStructuredErrors) {
  auto ckpt = run({"eval", "--checkpoint", path("nope.ckpt"), "--manifest", data() + "/manifest.csv"});
  EXPECT_EQ(ckpt.code, 1);
  EXPECT_TRUE(contains(ckpt.err, "error: checkpoint io")) << ckpt.err;
  auto manifest = run({"train", "--data-root", path("nowhere")});
  EXPECT_EQ(manifest.code, 1);
  EXPECT_TRUE(contains(manifest.err, "error: i/o failure")) << manifest.err;
  text::write_file(path("bad.cfg"), "epochs = 3\nlearning_rate = 1\n");
  auto cfg = run({"train", "--data-root", data(), "--config", path("bad.cfg"), "--dry-run"});
  EXPECT_EQ(cfg.code, 1);
  EXPECT_TRUE(contains(cfg.err, "line 2")) << cfg.err;
  text::write_file(path("broken.log"), "epoch,lr,H,L_reg,total,train_acc,eval_acc\n1,0.001,1.0\n");
  auto rep = run({"report", "--log", path("broken.log"), "--out", path("x.csv")});
  EXPECT_EQ(rep.code, 1);
  EXPECT_TRUE(contains(rep.err, "line 2")) << rep.err;
}
