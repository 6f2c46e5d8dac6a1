#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pointresnet/train/report.hpp"
#include "pointresnet/train/trainer.hpp"
#include "pointresnet/verify.hpp"

namespace pointresnet::cli {

namespace fs = std::filesystem;

struct TrainArgs {
  std::string task, preset, data_root, manifest, out = "run", config;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> settings;
  bool resume = false, dry_run = false;
};

struct EvalArgs {
  std::string checkpoint, manifest, split = "test", confusion;
  std::size_t batch_size = 32;
};

struct PredictArgs {
  std::string checkpoint, input, out, category;
  std::uint64_t seed = 0;
};

struct GradcheckArgs {
  std::size_t max_coords = 0;
};

struct SynthArgs {
  std::string kinds = "sphere,cube,cylinder", out;
  std::size_t count = 20, test_count = 10, points = 256;
  std::uint64_t seed = 0;
};

struct ReportArgs {
  std::string log, out;
};

/// `--manifest` relative to `--data-root` when both are given; the root
/// alone implies <root>/manifest.csv.
inline std::string manifest_location(const std::string& data_root, const std::string& manifest) {
  if (manifest.empty() && data_root.empty()) throw ConfigError("train needs --manifest or --data-root");
  if (manifest.empty()) return (fs::path(data_root) / "manifest.csv").string();
  if (data_root.empty() || fs::path(manifest).is_absolute()) return manifest;
  return (fs::path(data_root) / manifest).string();
}

inline LoadOptions load_options(const ModelConfig& c, const TrainPlan& p) {
  LoadOptions o;
  o.n_points = c.n_points;
  o.seed = p.seed;
  o.require_part_labels = p.task == Task::segmentation;
  return o;
}

/// Rewrites a manifest's class table to a checkpoint's so label indices
/// mean the same thing; every class must be known to the checkpoint.
inline void adopt_classes(DatasetManifest& m, const DatasetInfo& trained) {
  for (const auto& r : m.records) {
    const auto it = std::find(trained.class_names.begin(), trained.class_names.end(), r.class_name);
    if (it == trained.class_names.end())
      throw ConfigError("manifest line " + std::to_string(r.line) + ": class '" + r.class_name +
                        "' is unknown to the checkpoint");
    if (m.info.has_parts()) {
      const std::size_t mine = m.info.part_counts[m.info.class_index(r.class_name)];
      const std::size_t theirs = trained.part_counts[static_cast<std::size_t>(it - trained.class_names.begin())];
      if (mine != theirs)
        throw ConfigError("class '" + r.class_name + "' has " + std::to_string(mine) + " parts in the manifest but " +
                          std::to_string(theirs) + " in the checkpoint");
    }
  }
  const int base = m.info.label_base;
  m.info = trained;
  m.info.label_base = base;
}

inline Model<float> restore_model(const Checkpoint& c) {
  Rng unused(0);
  Model<float> model(c.config, c.task, unused);
  restore_model_arrays(c, model, nullptr);
  return model;
}

inline int run_train(const TrainArgs& a, std::ostream& out) {
  const std::string manifest_path = manifest_location(a.data_root, a.manifest);
  auto on_epoch = [&](const EpochSummary& s, Trainer&) {
    out << format_log_line(s) << std::endl;
    return true;
  };

  if (a.resume) {
    const Checkpoint c = load_checkpoint(last_checkpoint_path(a.out));
    DatasetManifest m = load_manifest(manifest_path);
    const Dataset data = load_dataset(m, load_options(c.config, c.plan));
    Trainer t(c, data, a.epochs);
    out << "resuming " << a.out << " at epoch " << c.epoch << " of " << t.plan().epochs << "\n";
    run_training(t, {a.out, true, on_epoch});
    out << "best eval_acc " << format_number(t.best_eval_acc()) << " at epoch " << t.best_epoch() << "\n";
    return 0;
  }

  std::vector<ConfigEntry> file;
  if (!a.config.empty()) file = parse_config_text(text::read_file(a.config));
  std::vector<ConfigEntry> flags;
  if (!a.task.empty()) flags.push_back({"task", a.task, 0});
  if (!a.preset.empty()) flags.push_back({"preset", a.preset, 0});
  if (a.epochs) flags.push_back({"epochs", std::to_string(*a.epochs), 0});
  if (a.seed) flags.push_back({"seed", std::to_string(*a.seed), 0});
  for (const auto& kv : a.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    const auto trim = [](std::string s) {
      const auto sp = text::split(s);
      std::string joined;
      for (auto tok : sp) joined += (joined.empty() ? "" : " ") + std::string(tok);
      return joined;
    };
    flags.push_back({trim(key), trim(value), 0});
  }
  ResolvedSettings r = resolve_settings(file, flags);
  const DatasetManifest m = load_manifest(manifest_path);

  if (a.dry_run) {
    ModelConfig c = r.model;
    c.num_classes = m.info.num_classes();
    if (r.plan.task == Task::segmentation) {
      if (!m.info.has_parts()) throw ConfigError("segmentation needs a manifest with #part lines");
      c.num_parts = m.info.num_parts();
    }
    r.plan.validate();
    c.validate(r.plan.task);
    Rng rng(0);
    Model<float> model(c, r.plan.task, rng);
    std::size_t params = 0;
    for (const auto& p : model.parameters()) params += p.size();
    nlohmann::json j{{"model", to_json(c)}, {"plan", to_json(r.plan)}};
    out << j.dump(2) << "\n";
    out << "manifest " << manifest_path << ": " << m.info.num_classes() << " classes, " << m.count(Split::train)
        << " train, " << m.count(Split::test) << " test\n";
    out << "parameters " << params << "\n";
    out << "dry run: nothing trained\n";
    return 0;
  }

  const Dataset data = load_dataset(m, load_options(r.model, r.plan));
  Trainer t(r.model, r.plan, data);
  out << "training " << to_string(r.plan.task) << " " << r.model.preset_name << " for " << r.plan.epochs
      << " epochs on " << data.train.size() << " samples, logging to " << log_path(a.out) << "\n";
  out << log_header() << "\n";
  run_training(t, {a.out, true, on_epoch});
  out << "best eval_acc " << format_number(t.best_eval_acc()) << " at epoch " << t.best_epoch() << "\n";
  return 0;
}

inline int run_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint c = load_checkpoint(a.checkpoint);
  DatasetManifest m = load_manifest(a.manifest);
  if (a.split != "all") {
    const Split keep = a.split == "train" ? Split::train : Split::test;
    std::erase_if(m.records, [&](const ManifestRecord& r) { return r.split != keep; });
  }
  adopt_classes(m, c.dataset);
  Dataset data = load_dataset(m, load_options(c.config, c.plan));
  std::vector<PointCloudSample> samples = std::move(data.train);
  for (auto& s : data.test) samples.push_back(std::move(s));
  Model<float> model = restore_model(c);
  const Evaluation ev = evaluate(model, samples, data.info, c.task, a.batch_size);
  out << "samples = " << samples.size() << "\n" << metrics_report(ev.metrics);
  if (!a.confusion.empty()) text::write_file(a.confusion, confusion_csv(ev.metrics));
  return 0;
}

/// Classification prints one class name. Segmentation labels every input
/// point: the normalised cloud is shuffled, cut into windows of the model's
/// point count (the last one wrapping around), and each point takes the
/// decision from the window that holds it.
inline int run_predict(const PredictArgs& a, std::ostream& out) {
  const Checkpoint c = load_checkpoint(a.checkpoint);
  Model<float> model = restore_model(c);
  const std::size_t n = c.config.n_points;
  Rng rng(a.seed);
  const std::string ext = fs::path(a.input).extension().string();
  std::vector<Point> points;
  if (ext == ".off" || ext == ".OFF") {
    if (c.task == Task::segmentation)
      throw InvalidArgument("segmentation predicts labels for given points; pass a .pts file, not a mesh");
    points = sample_points(parse_off(text::read_file(a.input)), n, rng);
  } else {
    points = parse_pts(text::read_file(a.input));
  }
  points = normalize_unit_sphere(points);

  std::string result;
  if (c.task == Task::classification) {
    PointCloudSample s;
    s.points = points;
    resample(s, n, rng);
    Tensor<float> x(Shape{1, n, 3});
    for (std::size_t i = 0; i < n; ++i) std::copy_n(s.points[i].data(), 3, x.values_mut().data() + i * 3);
    NoGradScope<float> no_grad;
    const auto logits = model.forward(x, Mode::eval).logits;
    const int k = argmax_range(logits.values().data(), 0, logits.extent(-1));
    result = c.dataset.class_names[static_cast<std::size_t>(k)] + "\n";
  } else {
    const DatasetInfo& info = c.dataset;
    std::size_t category = 0;
    if (!a.category.empty()) category = info.class_index(a.category);
    else if (info.num_classes() != 1)
      throw ConfigError("segmentation predict needs --category (one of the checkpoint's " +
                        std::to_string(info.num_classes()) + " classes)");
    const std::size_t lo = info.part_offsets()[category], count = info.part_counts[category];
    const std::size_t total = points.size();
    std::vector<std::size_t> perm(total);
    for (std::size_t i = 0; i < total; ++i) perm[i] = i;
    for (std::size_t i = total; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    const std::size_t windows = (total + n - 1) / n;
    std::vector<int> labels(total, -1);
    NoGradScope<float> no_grad;
    for (std::size_t w = 0; w < windows; ++w) {
      Tensor<float> x(Shape{1, n, 3});
      for (std::size_t j = 0; j < n; ++j)
        std::copy_n(points[perm[(w * n + j) % total]].data(), 3, x.values_mut().data() + j * 3);
      const auto logits = model.forward(x, Mode::eval).logits;
      const std::size_t k = logits.extent(-1);
      for (std::size_t j = 0; j < n && w * n + j < total; ++j) {
        const int part = argmax_range(logits.values().data() + j * k, lo, count);
        labels[perm[w * n + j]] = part - static_cast<int>(lo) + info.label_base;
      }
    }
    for (int l : labels) result += std::to_string(l) + "\n";
  }
  if (a.out.empty()) out << result;
  else {
    text::write_file(a.out, result);
    out << "wrote " << a.out << "\n";
  }
  return 0;
}

inline int run_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  bool ok = true;
  for (const auto& c : gradcheck_suite({}, a.max_coords)) {
    ok = ok && c.report.passed();
    out << (c.report.passed() ? "PASS " : "FAIL ") << c.name << " " << c.report.summary() << "\n";
  }
  out << (ok ? "all gradient checks passed" : "gradient check FAILED") << "\n";
  return ok ? 0 : 1;
}

inline int run_synth(const SynthArgs& a, std::ostream& out) {
  std::vector<ShapeKind> kinds;
  std::string list = a.kinds;
  std::replace(list.begin(), list.end(), ',', ' ');
  for (auto tok : text::split(list)) kinds.push_back(parse_shape_kind(tok));
  const Dataset d = make_synthetic_dataset(kinds, a.count, a.test_count, a.points, a.seed);
  DatasetManifest m;
  m.info = d.info;
  for (const auto* split : {&d.train, &d.test}) {
    const Split which = split == &d.train ? Split::train : Split::test;
    for (const auto& s : *split) {
      const std::string rel = s.source_id + ".pts";
      fs::create_directories((fs::path(a.out) / rel).parent_path());
      text::write_file((fs::path(a.out) / rel).string(), format_pts(s.points));
      text::write_file((fs::path(a.out) / (s.source_id + ".seg")).string(), format_seg(s.part_labels));
      m.records.push_back({rel, d.info.class_names[static_cast<std::size_t>(*s.class_label)], which, 0});
    }
  }
  const std::string manifest = (fs::path(a.out) / "manifest.csv").string();
  text::write_file(manifest, format_manifest(m));
  out << "wrote " << m.records.size() << " samples and " << manifest << "\n";
  return 0;
}

inline int run_report(const ReportArgs& a, std::ostream& out) {
  const std::string path = fs::is_directory(a.log) ? log_path(a.log) : a.log;
  const auto log = parse_training_log(text::read_file(path));
  std::string csv = a.out, svg = a.out;
  if (fs::path(a.out).extension() == ".svg") csv = fs::path(a.out).replace_extension(".csv").string();
  else svg = fs::path(a.out).replace_extension(".svg").string();
  text::write_file(csv, curves_csv(log));
  text::write_file(svg, curves_svg(log));
  out << "wrote " << csv << " and " << svg << " (" << log.size() << " epochs)\n";
  return 0;
}

/// Entry point for the `pointresnet` tool. Exit codes: 0 success, 1 runtime
/// or data error (including a failed gradient check), 2 usage error.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"PointResNet point cloud classification and part segmentation", "pointresnet"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model and write log.csv, last.ckpt and best.ckpt");
  train->add_option("--task", ta.task, "cls or seg (default cls)");
  train->add_option("--preset", ta.preset, "pointresnet10 | pointresnet11 | pointresnet15 (default pointresnet10)");
  train->add_option("--data-root", ta.data_root, "Directory holding the dataset and manifest.csv");
  train->add_option("--manifest", ta.manifest, "Manifest file, relative to --data-root when given");
  train->add_option("--epochs", ta.epochs, "Epoch count (default 250 cls, 200 seg)");
  train->add_option("--seed", ta.seed, "Run seed");
  train->add_option("--out", ta.out, "Output directory")->capture_default_str();
  train->add_option("--config", ta.config, "key = value config file; flags override it");
  train->add_option("--set", ta.settings, "Extra key=value setting, repeatable");
  train->add_flag("--resume", ta.resume, "Continue from <out>/last.ckpt");
  train->add_flag("--dry-run", ta.dry_run, "Resolve settings and check the manifest without training");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  eval->add_option("--manifest", ea.manifest, "Manifest file")->required();
  eval->add_option("--split", ea.split, "test, train or all")
      ->check(CLI::IsMember({"test", "train", "all"}))
      ->capture_default_str();
  eval->add_option("--batch-size", ea.batch_size, "Evaluation batch size")->capture_default_str();
  eval->add_option("--confusion", ea.confusion, "Also write the confusion matrix as CSV");

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Predict a class, or per-point part labels, for one input");
  predict->add_option("--checkpoint", pa.checkpoint, "Checkpoint file")->required();
  predict->add_option("--input", pa.input, ".off mesh or .pts points")->required();
  predict->add_option("--out", pa.out, "Output file (default stdout)");
  predict->add_option("--category", pa.category, "Object category for segmentation");
  predict->add_option("--seed", pa.seed, "Sampling seed")->capture_default_str();

  GradcheckArgs ga;
  auto* gradcheck = app.add_subcommand("gradcheck", "Check every gradient against finite differences");
  gradcheck->add_option("--max-coords", ga.max_coords, "Coordinates probed per full-model tensor, 0 for all")
      ->capture_default_str();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a synthetic sphere/cube/cylinder dataset with part labels");
  synth->add_option("--kinds", sa.kinds, "Comma-separated shape kinds")->capture_default_str();
  synth->add_option("--count", sa.count, "Training samples per kind")->capture_default_str();
  synth->add_option("--test-count", sa.test_count, "Test samples per kind")->capture_default_str();
  synth->add_option("--points", sa.points, "Points per sample")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Generator seed")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->required();

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "Turn a training log into curve CSV and an SVG plot");
  report->add_option("--log", ra.log, "Run directory or log.csv")->required();
  report->add_option("--out", ra.out, "Output CSV path; the plot goes next to it as .svg")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return run_train(ta, out);
    if (*eval) return run_eval(ea, out);
    if (*predict) return run_predict(pa, out);
    if (*gradcheck) return run_gradcheck(ga, out);
    if (*synth) return run_synth(sa, out);
    if (*report) return run_report(ra, out);
  } catch (const CheckpointError& e) {
    err << "error: checkpoint " << to_string(e.kind()) << ": " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace pointresnet::cli
