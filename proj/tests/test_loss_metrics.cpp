#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "pointresnet/grad_check.hpp"
#include "pointresnet/loss.hpp"
#include "pointresnet/metrics.hpp"

using namespace pointresnet;

namespace {

Tensor<double> rotation3(double a, double b, double c) {
  const double ca = std::cos(a), sa = std::sin(a), cb = std::cos(b), sb = std::sin(b),
               cc = std::cos(c), sc = std::sin(c);
  // Rz(a) * Ry(b) * Rx(c)
  return Tensor<double>(Shape{1, 3, 3},
                        {ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc,
                         sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc,
                         -sb, cb * sc, cb * cc});
}

double naive_cross_entropy(const std::vector<double>& x, std::size_t k, const std::vector<int>& t) {
  double total = 0;
  for (std::size_t r = 0; r < t.size(); ++r) {
    double z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(x[r * k + j]);
    total += -std::log(std::exp(x[r * k + static_cast<std::size_t>(t[r])]) / z);
  }
  return total / static_cast<double>(t.size());
}

}  // namespace

TEST(CrossEntropy, UniformLogitsGiveLnK) {
  for (std::size_t k : {2u, 4u, 40u}) {
    Tensor<double> logits(Shape{3, k}, 0.7);
    std::vector<int> t{0, 1, static_cast<int>(k - 1)};
    EXPECT_NEAR(cross_entropy(logits, std::span<const int>(t)).item(), std::log(double(k)), 1e-12);
  }
  Tensor<double> four(Shape{1, 4}, 0.0);
  std::vector<int> t{2};
  EXPECT_NEAR(cross_entropy(four, std::span<const int>(t)).item(), 1.3862943611198906, 1e-12);
}

TEST(CrossEntropy, TwoClassClosedForm) {
  Tensor<double> logits(Shape{1, 2}, {std::log(2.0), 0.0});
  std::vector<int> t{0};
  EXPECT_NEAR(cross_entropy(logits, std::span<const int>(t)).item(), -std::log(2.0 / 3.0), 1e-12);
  EXPECT_NEAR(-std::log(2.0 / 3.0), 0.4055, 1e-4);
}

TEST(CrossEntropy, LargeMarginApproachesZero) {
  std::vector<int> t{1};
  double prev = 1e9;
  for (double margin : {1.0, 10.0, 100.0, 1000.0}) {
    Tensor<double> logits(Shape{1, 3}, {0.0, margin, 0.0});
    const double h = cross_entropy(logits, std::span<const int>(t)).item();
    EXPECT_TRUE(std::isfinite(h));
    EXPECT_LE(h, prev);
    prev = h;
  }
  EXPECT_LT(prev, 1e-12);
}

TEST(CrossEntropy, ShiftInvariance) {
  Rng rng(1);
  Tensor<double> logits(Shape{5, 7});
  for (double& v : logits.values_mut()) v = rng.uniform(-5, 5);
  std::vector<int> t{0, 6, 3, 2, 1};
  const double base = cross_entropy(logits, std::span<const int>(t)).item();
  Tensor<double> shifted = logits.clone();
  for (std::size_t r = 0; r < 5; ++r) {
    const double c = rng.uniform(-50, 50);
    for (std::size_t j = 0; j < 7; ++j) shifted.values_mut()[r * 7 + j] += c;
  }
  EXPECT_NEAR(cross_entropy(shifted, std::span<const int>(t)).item(), base, 1e-10);
}

TEST(CrossEntropy, MatchesNaiveSoftmaxLog) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng.below(10), rows = 1 + rng.below(6);
    Tensor<double> logits(Shape{rows, k});
    for (double& v : logits.values_mut()) v = rng.uniform(-20, 20);
    std::vector<int> t(rows);
    for (auto& v : t) v = static_cast<int>(rng.below(k));
    std::vector<double> x(logits.values().begin(), logits.values().end());
    EXPECT_NEAR(cross_entropy(logits, std::span<const int>(t)).item(), naive_cross_entropy(x, k, t), 1e-6);
  }
}

TEST(CrossEntropy, NonNegativeAndBatchedOverPoints) {
  Rng rng(3);
  Tensor<float> logits(Shape{2, 5, 4});
  for (float& v : logits.values_mut()) v = static_cast<float>(rng.uniform(-3, 3));
  std::vector<int> t(10, 1);
  EXPECT_GE(cross_entropy(logits, std::span<const int>(t)).item(), 0.0f);
}

TEST(CrossEntropy, Errors) {
  Tensor<double> logits(Shape{2, 3}, 0.0);
  std::vector<int> short_t{0};
  EXPECT_THROW(cross_entropy(logits, std::span<const int>(short_t)), ShapeError);
  std::vector<int> bad{0, 3};
  try {
    cross_entropy(logits, std::span<const int>(bad));
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("position 1"), std::string::npos) << e.what();
  }
  std::vector<int> neg{-1, 0};
  EXPECT_THROW(cross_entropy(logits, std::span<const int>(neg)), InvalidArgument);
}

TEST(CrossEntropy, GradCheck) {
  Rng rng(4);
  Tensor<double> logits(Shape{3, 4, 5});
  for (double& v : logits.values_mut()) v = rng.uniform(-3, 3);
  std::vector<int> t(12);
  for (auto& v : t) v = static_cast<int>(rng.below(5));
  auto report = grad_check<double>([&](const Tensor<double>& x) { return cross_entropy(x, std::span<const int>(t)); },
                                   logits, 1e-5, 1e-3);
  EXPECT_TRUE(report.passed()) << report.summary();
}

TEST(OrthogonalityReg, IdentityIsZero) {
  Tensor<double> a(Shape{2, 4, 4}, 0.0);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < 4; ++i) a.values_mut()[s * 16 + i * 5] = 1;
  EXPECT_EQ(orthogonality_reg(a).item(), 0.0);
}

TEST(OrthogonalityReg, RotationsAndPermutationsAreZero) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto r = rotation3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    EXPECT_NEAR(orthogonality_reg(r).item(), 0.0, 1e-10);
  }
  const std::size_t d = 6;
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Tensor<double> p(Shape{1, d, d}, 0.0);
  for (std::size_t i = 0; i < d; ++i) p.values_mut()[i * d + perm[i]] = 1;
  EXPECT_NEAR(orthogonality_reg(p).item(), 0.0, 1e-10);
}

TEST(OrthogonalityReg, ShearGivesThree) {
  Tensor<double> a(Shape{1, 2, 2}, {1, 1, 0, 1});
  EXPECT_NEAR(orthogonality_reg(a).item(), 3.0, 1e-12);
}

TEST(OrthogonalityReg, BatchMean) {
  Tensor<double> a(Shape{2, 2, 2}, {1, 1, 0, 1, 1, 0, 0, 1});
  EXPECT_NEAR(orthogonality_reg(a).item(), 1.5, 1e-12);
}

TEST(OrthogonalityReg, ZeroOnlyForOrthogonalMatrices) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> a(Shape{1, 3, 3});
    for (double& v : a.values_mut()) v = rng.uniform(-1, 1);
    // A A^T = I fails for a generic matrix; the regularizer must notice.
    EXPECT_GT(orthogonality_reg(a).item(), 1e-10);
  }
  auto r = rotation3(0.3, -1.1, 2.0);
  r.values_mut()[4] *= 1.001;
  EXPECT_GT(orthogonality_reg(r).item(), 1e-10);
}

TEST(OrthogonalityReg, NonSquareRejected) {
  EXPECT_THROW(orthogonality_reg(Tensor<double>(Shape{1, 2, 3}, 0.0)), ShapeError);
  EXPECT_THROW(orthogonality_reg(Tensor<double>(Shape{2, 2}, 0.0)), ShapeError);
}

TEST(OrthogonalityReg, GradCheck) {
  Rng rng(7);
  Tensor<double> a(Shape{2, 4, 4});
  for (double& v : a.values_mut()) v = rng.uniform(-1, 1);
  auto report = grad_check<double>([](const Tensor<double>& x) { return orthogonality_reg(x); }, a, 1e-5, 1e-3);
  EXPECT_TRUE(report.passed()) << report.summary();
}

TEST(TotalLoss, Arithmetic) {
  auto h = Tensor<double>::scalar(1.0), l = Tensor<double>::scalar(2.0);
  auto t = total_loss(h, l, 0.001);
  EXPECT_NEAR(t.value.item(), 1.002, 1e-15);
  EXPECT_EQ(t.parts.cross_entropy, 1.0);
  EXPECT_EQ(t.parts.regularizer, 2.0);
  EXPECT_EQ(t.parts.alpha, 0.001);
  EXPECT_EQ(t.parts.total, t.value.item());
  EXPECT_EQ(total_loss(h, l, 0.0).value.item(), 1.0);
  EXPECT_THROW(total_loss(h, l, -0.1), InvalidArgument);
}

TEST(TotalLoss, GradientInAIsAlphaTimesRegularizerGradient) {
  Rng rng(8);
  Tensor<double> a(Shape{2, 3, 3});
  for (double& v : a.values_mut()) v = rng.uniform(-1, 1);
  Tensor<double> logits(Shape{2, 4});
  for (double& v : logits.values_mut()) v = rng.uniform(-1, 1);
  std::vector<int> t{1, 3};
  a.set_requires_grad(true);
  logits.set_requires_grad(true);
  const double alpha = 0.37;

  std::vector<double> reg_grad;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(orthogonality_reg(a));
    reg_grad.assign(a.grad().begin(), a.grad().end());
  }
  a.zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto total = total_loss(cross_entropy(logits, std::span<const int>(t)), orthogonality_reg(a), alpha);
    tape.backward(total.value);
  }
  for (std::size_t i = 0; i < reg_grad.size(); ++i) EXPECT_NEAR(a.grad()[i], alpha * reg_grad[i], 1e-12);
}

TEST(Metrics, AllCorrect) {
  std::vector<int> p{0, 1, 2, 1};
  auto m = metrics_classification(p, p, 3);
  EXPECT_EQ(m.eval_acc, 1.0);
  EXPECT_EQ(m.avg_class_acc, 1.0);
}

TEST(Metrics, OverallVersusClassAverage) {
  std::vector<int> pred{0, 0, 0, 0}, target{0, 0, 0, 1};
  auto m = metrics_classification(pred, target, 2);
  EXPECT_DOUBLE_EQ(m.eval_acc, 0.75);
  EXPECT_DOUBLE_EQ(m.avg_class_acc, 0.5);
  EXPECT_EQ(m.confusion[0][0], 3u);
  EXPECT_EQ(m.confusion[1][0], 1u);
  EXPECT_EQ(confusion_csv(m), "3,0\n1,0\n");
}

TEST(Metrics, ConfusionRowsMatchClassCountsAndTrace) {
  Rng rng(9);
  std::vector<int> pred(200), target(200);
  for (std::size_t i = 0; i < 200; ++i) {
    target[i] = static_cast<int>(rng.below(5));
    pred[i] = rng.bernoulli(0.6) ? target[i] : static_cast<int>(rng.below(5));
  }
  auto m = metrics_classification(pred, target, 5);
  std::size_t trace = 0;
  for (std::size_t c = 0; c < 5; ++c) {
    std::size_t row = 0;
    for (auto v : m.confusion[c]) row += v;
    EXPECT_EQ(row, static_cast<std::size_t>(std::count(target.begin(), target.end(), int(c))));
    trace += m.confusion[c][c];
  }
  EXPECT_DOUBLE_EQ(m.eval_acc, double(trace) / 200.0);
}

TEST(Metrics, ClassAbsentFromTargetsIsExcluded) {
  std::vector<int> pred{2, 0, 1}, target{0, 0, 1};
  auto m = metrics_classification(pred, target, 3);
  EXPECT_DOUBLE_EQ(m.avg_class_acc, (0.5 + 1.0) / 2);
}

TEST(Metrics, Errors) {
  std::vector<int> a{0, 1}, b{0};
  EXPECT_THROW(metrics_classification(a, b, 2), ShapeError);
  EXPECT_THROW(metrics_classification({}, {}, 2), DegenerateInputError);
  std::vector<int> bad{0, 5};
  EXPECT_THROW(metrics_classification(bad, a, 2), InvalidArgument);
}

TEST(Metrics, SegmentationPooled) {
  std::vector<std::vector<int>> target{{0, 1, 1, 0}, {2, 2, 2, 2}};
  EXPECT_EQ(metrics_segmentation(target, target).per_point_acc, 1.0);
  std::vector<std::vector<int>> half{{0, 1, 0, 1}, {2, 2, 0, 0}};
  EXPECT_DOUBLE_EQ(metrics_segmentation(half, target).per_point_acc, 0.5);
  std::vector<std::vector<int>> pred{{0, 1, 1, 1}, {2, 0, 0, 0}};
  auto m = metrics_segmentation(pred, target);
  EXPECT_EQ(m.correct, 4u);
  EXPECT_EQ(m.total, 8u);
  EXPECT_DOUBLE_EQ(m.per_point_acc, 0.5);
  std::vector<std::vector<int>> ragged{{0, 1, 1}, {2, 2, 2, 2}};
  EXPECT_THROW(metrics_segmentation(ragged, target), ShapeError);
}

TEST(Metrics, Purity) {
  std::vector<int> pred{0, 1, 1}, target{0, 1, 0};
  auto a = metrics_classification(pred, target, 2), b = metrics_classification(pred, target, 2);
  EXPECT_EQ(metrics_report(a), metrics_report(b));
  EXPECT_NE(metrics_report(a).find("eval_acc = 0.6666666666666666"), std::string::npos) << metrics_report(a);
}
