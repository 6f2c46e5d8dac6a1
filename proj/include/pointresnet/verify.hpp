#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pointresnet/grad_check.hpp"
#include "pointresnet/loss.hpp"
#include "pointresnet/model.hpp"

namespace pointresnet {

struct VerifyCase {
  std::string name;
  GradCheckReport report;
};

namespace detail {

inline Tensor<double> uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.values_mut()) v = rng.uniform(lo, hi);
  return t;
}

/// Moves values away from 0 so ReLU and max kinks stay outside the
/// finite-difference stencil.
inline void avoid_kinks(Tensor<double>& t) {
  for (double& v : t.values_mut())
    while (std::abs(v) < 1e-3) v += 0.01;
}

/// Weighted sum so every output coordinate contributes a distinct gradient.
inline Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, uniform_tensor(y.shape(), rng)));
}

inline std::vector<NamedInput<double>> parameters_of(const TensorList<double>& list) {
  std::vector<NamedInput<double>> out;
  for (const auto& nt : list)
    if (nt.role == TensorRole::parameter) out.push_back({nt.name, nt.tensor});
  return out;
}

}  // namespace detail

/// Gradient checks in double precision over every primitive, every layer
/// type, both losses and the full classification and segmentation graphs
/// on a toy config (2 samples, 32 points, 3 classes, 3 parts). The full
/// graphs probe `model_coords` coordinates per tensor, 0 for all of them.
inline std::vector<VerifyCase> gradcheck_suite(const GradCheckOptions& opt = {}, std::size_t model_coords = 12) {
  using detail::avoid_kinks;
  using detail::parameters_of;
  using detail::probe;
  using detail::uniform_tensor;
  std::vector<VerifyCase> out;
  auto run = [&](std::string name, const std::function<Tensor<double>()>& f, std::vector<NamedInput<double>> in,
                 const GradCheckOptions& o) { out.push_back({std::move(name), grad_check<double>(f, std::move(in), o)}); };

  {
    Rng rng(2024);
    auto a = uniform_tensor({2, 3, 4}, rng);
    auto b = uniform_tensor({4, 5}, rng);
    auto bb = uniform_tensor({2, 4, 3}, rng);
    auto v = uniform_tensor({4}, rng);
    auto g = uniform_tensor({2, 5}, rng);
    avoid_kinks(a);
    auto w = uniform_tensor({2, 3, 5}, rng);
    auto wmax = uniform_tensor({2, 4}, rng);
    auto wa = uniform_tensor({2, 3, 4}, rng);
    auto wcat = uniform_tensor({2, 3, 9}, rng);
    std::vector<NamedInput<double>> in{{"a", a}, {"b", b}, {"bb", bb}, {"v", v}, {"g", g}};
    run("op/matmul", [&] { return sum(mul(matmul(a, b), w)); }, in, opt);
    run("op/matmul_batched", [&] { return sum(mul(matmul(a, bb), matmul(a, bb))); }, in, opt);
    run("op/transpose", [&] { return sum(mul(transpose(a), transpose(a))); }, in, opt);
    run("op/add", [&] { return sum(mul(add(a, v), wa)); }, in, opt);
    run("op/sub", [&] { return sum(mul(sub(v, a), wa)); }, in, opt);
    run("op/mul", [&] { return sum(mul(mul(a, v), wa)); }, in, opt);
    run("op/scale_mean", [&] { return mean(scale(mul(a, a), 0.3)); }, in, opt);
    run("op/relu", [&] { return sum(mul(relu(a), wa)); }, in, opt);
    run("op/reduce_max", [&] { return sum(mul(reduce_max(a).values, wmax)); }, in, opt);
    run("op/softmax_rows", [&] { return sum(mul(softmax_rows(a), wa)); }, in, opt);
    run("op/reshape", [&] { return sum(mul(reshape(a, {2, 12}), reshape(wa, {2, 12}))); }, in, opt);
    run("op/concat_last", [&] { return sum(mul(concat_last(a, matmul(a, b)), wcat)); }, in, opt);
    run("op/expand_points", [&] { return sum(mul(expand_points(g, 3), w)); }, in, opt);
  }

  {
    Rng rng(20);
    for (Mode mode : {Mode::train, Mode::eval}) {
      BatchNorm<double> bn(4);
      bn.running_mean().values_mut()[1] = 0.3;
      bn.running_var().values_mut()[2] = 2.0;
      for (double& g : bn.gamma().values_mut()) g = rng.uniform(0.5, 1.5);
      auto x = uniform_tensor({3, 5, 4}, rng);
      TensorList<double> list;
      bn.append_tensors("bn", list);
      auto in = parameters_of(list);
      in.push_back({"x", x});
      run(mode == Mode::train ? "layer/batchnorm_train" : "layer/batchnorm_eval",
          [&] { return probe(bn.forward(x, mode), 1); }, in, opt);
    }
  }
  {
    Rng rng(21);
    SharedMLPLayer<double> shared(3, 6, LayerOptions{}, rng);
    auto x = uniform_tensor({2, 7, 3}, rng);
    TensorList<double> list;
    shared.append_tensors("shared", list);
    auto in = parameters_of(list);
    in.push_back({"x", x});
    run("layer/shared_mlp", [&] { return probe(shared.forward(x, Mode::train), 2); }, in, opt);

    DenseLayer<double> dense(6, 4, LayerOptions{}, rng);
    auto g = uniform_tensor({5, 6}, rng);
    TensorList<double> dl;
    dense.append_tensors("dense", dl);
    auto din = parameters_of(dl);
    din.push_back({"g", g});
    run("layer/dense", [&] { return probe(dense.forward(g, Mode::train), 3); }, din, opt);
  }
  {
    Rng rng(22);
    auto x = uniform_tensor({4, 6}, rng);
    run("layer/dropout", [&] {
      Rng mask(99);
      return probe(dropout(x, 0.3, Mode::train, &mask), 4);
    }, {{"x", x}}, opt);
  }
  {
    Rng rng(23);
    TNet<double> t(3, {6, 8}, {6}, rng);
    for (double& v : t.output_layer().weight().values_mut()) v = rng.uniform(-0.3, 0.3);
    auto x = uniform_tensor({2, 9, 3}, rng);
    TensorList<double> list;
    t.append_tensors("tnet", list);
    auto in = parameters_of(list);
    in.push_back({"x", x});
    run("layer/tnet", [&] {
      auto o = t.forward(x, Mode::train);
      return add(probe(o.transformed, 5), orthogonality_reg(o.matrix));
    }, in, opt);
  }
  {
    Rng rng(24);
    for (std::vector<std::size_t> widths : {std::vector<std::size_t>{5, 5}, std::vector<std::size_t>{7, 9}}) {
      ResBlock<double> block(5, widths, rng);
      auto y = uniform_tensor({2, 6, 5}, rng);
      TensorList<double> list;
      block.append_tensors("block", list);
      auto in = parameters_of(list);
      in.push_back({"y", y});
      run(widths[0] == 5 ? "layer/resblock_identity" : "layer/resblock_projection",
          [&] { return probe(block.forward(y, Mode::train), 6); }, in, opt);
    }
  }
  {
    Rng rng(25);
    auto logits = uniform_tensor({4, 5}, rng, -3, 3);
    std::vector<int> t{0, 4, 2, 2};
    run("loss/cross_entropy", [&] { return cross_entropy(logits, std::span<const int>(t)); }, {{"logits", logits}},
        opt);
    auto a = uniform_tensor({2, 4, 4}, rng);
    run("loss/orthogonality_reg", [&] { return orthogonality_reg(a); }, {{"A", a}}, opt);
  }

  for (Task task : {Task::classification, Task::segmentation}) {
    auto c = toy_config(3, 3);
    Rng rng(11);
    Model<double> m(c, task, rng);
    // Nudge the transform heads off identity so their gradients are exercised.
    for (TNet<double>* t : {&m.input_tnet(), &m.feature_tnet()})
      for (double& v : t->output_layer().weight().values_mut()) v = rng.uniform(-0.05, 0.05);
    Tensor<double> x(Shape{2, c.n_points, 3});
    for (double& v : x.values_mut()) v = rng.uniform(-1, 1);
    std::vector<int> cls_targets{0, 2};
    std::vector<int> seg_targets(2 * c.n_points);
    for (auto& t : seg_targets) t = static_cast<int>(rng.below(3));
    auto f = [&] {
      Rng dropout_rng(77);
      auto o = m.forward(x, Mode::train, &dropout_rng);
      auto h = cross_entropy(o.logits, task == Task::classification ? std::span<const int>(cls_targets)
                                                                    : std::span<const int>(seg_targets));
      return total_loss(h, orthogonality_reg(o.feature_transform), 0.001).value;
    };
    std::vector<NamedInput<double>> in;
    for (const auto& nt : m.named_tensors())
      if (nt.role == TensorRole::parameter) in.push_back({nt.name, nt.tensor});
    in.push_back({"points", x});
    GradCheckOptions full = opt;
    full.max_coords_per_tensor = model_coords;
    full.seed = 5;
    run(std::string("model/") + to_string(task), f, in, full);
  }
  return out;
}

}  // namespace pointresnet
