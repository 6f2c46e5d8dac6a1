#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pointresnet/data/mesh.hpp"
#include "pointresnet/data/point_cloud.hpp"
#include "pointresnet/data/text.hpp"
#include "pointresnet/error.hpp"
#include "pointresnet/random.hpp"
#include "pointresnet/tensor.hpp"

namespace pointresnet {

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

/// FNV-1a; stable across platforms, used for file-name keyed decisions.
inline std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// 80/20 assignment by seeded hash of the file name.
inline Split hashed_split(std::string_view path, std::uint64_t seed) {
  return derive_seed(seed, stable_hash(path)) % 10 < 8 ? Split::train : Split::test;
}

struct ManifestRecord {
  std::string path;  // relative to the manifest directory
  std::string class_name;
  Split split = Split::train;
  std::size_t line = 0;
};

/// Classes are indexed in order of first mention (a `#part` header or a record).
struct DatasetInfo {
  std::vector<std::string> class_names;
  std::vector<std::size_t> part_counts;  // empty when no part labels are declared
  int label_base = 0;

  std::size_t num_classes() const { return class_names.size(); }
  bool has_parts() const { return !part_counts.empty(); }
  std::size_t num_parts() const {
    std::size_t t = 0;
    for (auto c : part_counts) t += c;
    return t;
  }
  /// First global part index of each class.
  std::vector<std::size_t> part_offsets() const {
    std::vector<std::size_t> off(part_counts.size());
    std::size_t t = 0;
    for (std::size_t i = 0; i < part_counts.size(); ++i) off[i] = t, t += part_counts[i];
    return off;
  }
  std::size_t class_index(std::string_view name) const {
    for (std::size_t i = 0; i < class_names.size(); ++i)
      if (class_names[i] == name) return i;
    throw ConfigError("unknown class '" + std::string(name) + "'");
  }
};

struct DatasetManifest {
  std::string base_dir;
  DatasetInfo info;
  std::vector<ManifestRecord> records;

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(),
                                                  [s](const auto& r) { return r.split == s; }));
  }
};

/// Manifest grammar, one item per line:
///   <relative-path>,<class-name>[,<split>]   split: train | test | auto | empty
///   #part <class-name> <part-count>
///   #label_base <0|1>                        first part label used in label files
///   # anything else is a comment
/// Records with split auto/empty go to train or test by seeded file-name hash.
inline DatasetManifest parse_manifest(std::string_view content, std::string base_dir = ".",
                                      std::uint64_t split_seed = 0) {
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  std::map<std::string, std::size_t> declared_parts;
  std::map<std::string, std::size_t> seen_paths;
  auto mention = [&](const std::string& name) {
    if (std::find(m.info.class_names.begin(), m.info.class_names.end(), name) == m.info.class_names.end())
      m.info.class_names.push_back(name);
  };

  std::size_t number = 0, pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++number;
    while (!line.empty() && text::is_space(line.back())) line.remove_suffix(1);
    while (!line.empty() && text::is_space(line.front())) line.remove_prefix(1);
    if (line.empty()) continue;

    if (line.front() == '#') {
      auto tok = text::split(line.substr(1));
      if (tok.empty()) continue;
      if (tok[0] == "part") {
        if (tok.size() != 3)
          throw ParseError(ParseErrorKind::missing_field, number, "expected '#part <class> <count>'");
        const long long c = text::integer(tok[2], number, "part count");
        if (c < 1) throw ParseError(ParseErrorKind::bad_counts, number, "part count must be positive");
        std::string name(tok[1]);
        if (declared_parts.count(name))
          throw ParseError(ParseErrorKind::duplicate_entry, number, "parts of '" + name + "' declared twice");
        declared_parts[name] = static_cast<std::size_t>(c);
        mention(name);
      } else if (tok[0] == "label_base") {
        if (tok.size() != 2) throw ParseError(ParseErrorKind::missing_field, number, "expected '#label_base <0|1>'");
        const long long b = text::integer(tok[1], number, "label base");
        if (b != 0 && b != 1) throw ParseError(ParseErrorKind::bad_number, number, "label base must be 0 or 1");
        m.info.label_base = static_cast<int>(b);
      }
      continue;
    }

    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      std::string_view f = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      while (!f.empty() && text::is_space(f.back())) f.remove_suffix(1);
      while (!f.empty() && text::is_space(f.front())) f.remove_prefix(1);
      fields.emplace_back(f);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() || fields[1].empty())
      throw ParseError(ParseErrorKind::missing_field, number, "expected '<path>,<class>[,<split>]'");
    ManifestRecord r;
    r.path = fields[0];
    r.class_name = fields[1];
    r.line = number;
    const std::string split = fields.size() == 3 ? fields[2] : "";
    if (split == "train") r.split = Split::train;
    else if (split == "test") r.split = Split::test;
    else if (split.empty() || split == "auto") r.split = hashed_split(r.path, split_seed);
    else throw ParseError(ParseErrorKind::bad_number, number, "unknown split '" + split + "'");
    if (auto it = seen_paths.find(r.path); it != seen_paths.end())
      throw ParseError(ParseErrorKind::duplicate_entry, number,
                       "'" + r.path + "' already listed at line " + std::to_string(it->second));
    seen_paths[r.path] = number;
    mention(r.class_name);
    m.records.push_back(std::move(r));
  }

  if (!declared_parts.empty()) {
    for (const auto& r : m.records)
      if (!declared_parts.count(r.class_name))
        throw ParseError(ParseErrorKind::missing_field, r.line, "class '" + r.class_name + "' has no #part declaration");
    for (const auto& name : m.info.class_names) m.info.part_counts.push_back(declared_parts[name]);
  }
  return m;
}

/// Reads a manifest and checks that every referenced file exists.
inline DatasetManifest load_manifest(const std::string& path, std::uint64_t split_seed = 0) {
  namespace fs = std::filesystem;
  const std::string base = fs::path(path).parent_path().string();
  DatasetManifest m = parse_manifest(text::read_file(path), base.empty() ? "." : base, split_seed);
  for (const auto& r : m.records) {
    if (!fs::is_regular_file(fs::path(m.base_dir) / r.path))
      throw ParseError(ParseErrorKind::io, r.line, "referenced file does not exist: " + r.path);
  }
  return m;
}

inline std::string format_manifest(const DatasetManifest& m) {
  std::string out;
  for (std::size_t i = 0; i < m.info.part_counts.size(); ++i)
    out += "#part " + m.info.class_names[i] + " " + std::to_string(m.info.part_counts[i]) + "\n";
  if (m.info.label_base != 0) out += "#label_base " + std::to_string(m.info.label_base) + "\n";
  for (const auto& r : m.records) out += r.path + "," + r.class_name + "," + to_string(r.split) + "\n";
  return out;
}

/// Labels for `points_path`: `<stem>.seg` beside it, or in a sibling
/// `points_label` directory when the points live in `points/`.
inline std::filesystem::path labels_path_for(const std::filesystem::path& points_path) {
  namespace fs = std::filesystem;
  fs::path same = points_path;
  same.replace_extension(".seg");
  if (fs::exists(same)) return same;
  if (points_path.parent_path().filename() == "points") {
    fs::path sibling = points_path.parent_path().parent_path() / "points_label" / points_path.filename();
    sibling.replace_extension(".seg");
    if (fs::exists(sibling)) return sibling;
  }
  return same;
}

/// Resamples to exactly `n` points: without replacement when the cloud is
/// larger, otherwise all points plus random repeats.
inline void resample(PointCloudSample& s, std::size_t n, Rng& rng) {
  const std::size_t have = s.points.size();
  if (have == n) return;
  std::vector<std::size_t> pick;
  if (have > n) {
    std::vector<std::size_t> idx(have);
    for (std::size_t i = 0; i < have; ++i) idx[i] = i;
    for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(have - i)]);
    pick.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
  } else {
    for (std::size_t i = 0; i < have; ++i) pick.push_back(i);
    while (pick.size() < n) pick.push_back(rng.below(have));
  }
  std::vector<Point> pts(n);
  std::vector<int> labels(s.part_labels.empty() ? 0 : n);
  for (std::size_t i = 0; i < n; ++i) {
    pts[i] = s.points[pick[i]];
    if (!labels.empty()) labels[i] = s.part_labels[pick[i]];
  }
  s.points = std::move(pts);
  s.part_labels = std::move(labels);
}

struct Dataset {
  DatasetInfo info;
  std::vector<PointCloudSample> train;
  std::vector<PointCloudSample> test;
};

struct LoadOptions {
  std::size_t n_points = 1024;
  std::uint64_t seed = 0;
  bool require_part_labels = false;
};

/// Loads one manifest record: OFF meshes are surface-sampled, point files are
/// resampled; both are normalized to the unit sphere. Part labels are stored
/// category-local (label base removed).
inline PointCloudSample load_record(const DatasetManifest& m, const ManifestRecord& r, const LoadOptions& opt) {
  namespace fs = std::filesystem;
  const fs::path full = fs::path(m.base_dir) / r.path;
  const std::size_t cls = m.info.class_index(r.class_name);
  Rng rng(derive_seed(opt.seed, stable_hash(r.path)));
  PointCloudSample s;
  s.source_id = r.path;
  const std::string ext = full.extension().string();
  try {
    if (ext == ".off" || ext == ".OFF") {
      if (opt.require_part_labels) throw ConfigError(r.path + ": meshes carry no part labels");
      s.points = sample_points(parse_off(text::read_file(full.string())), opt.n_points, rng);
    } else if (ext == ".pts" || ext == ".txt") {
      const fs::path labels = labels_path_for(full);
      if (fs::exists(labels)) {
        s = parse_pts_seg(text::read_file(full.string()), text::read_file(labels.string()), r.path);
      } else if (opt.require_part_labels) {
        throw ParseError(ParseErrorKind::io, r.line, "no label file for " + r.path + " (looked for " +
                                                         labels.string() + ")");
      } else {
        s.points = parse_pts(text::read_file(full.string()));
        s.source_id = r.path;
      }
    } else {
      throw ConfigError(r.path + ": unsupported file type '" + ext + "' (expected .off or .pts)");
    }
  } catch (const ParseError& e) {
    throw ParseError(e.kind(), e.line(), r.path + ": " + e.detail());
  } catch (const DegenerateInputError& e) {
    throw DegenerateInputError(r.path + ": " + e.what());
  }
  s.class_label = static_cast<int>(cls);
  if (!s.part_labels.empty()) {
    if (!m.info.has_parts()) {
      s.part_labels.clear();
    } else {
      const int parts = static_cast<int>(m.info.part_counts[cls]);
      for (std::size_t i = 0; i < s.part_labels.size(); ++i) {
        const int local = s.part_labels[i] - m.info.label_base;
        if (local < 0 || local >= parts)
          throw ParseError(ParseErrorKind::index_out_of_range, i + 1,
                           r.path + ": part label " + std::to_string(s.part_labels[i]) + " outside the " +
                               std::to_string(parts) + " parts of '" + r.class_name + "' (label base " +
                               std::to_string(m.info.label_base) + ")");
        s.part_labels[i] = local;
      }
    }
  }
  resample(s, opt.n_points, rng);
  s.points = normalize_unit_sphere(s.points);
  return s;
}

inline Dataset load_dataset(const DatasetManifest& m, const LoadOptions& opt) {
  if (opt.require_part_labels && !m.info.has_parts())
    throw ConfigError("segmentation needs '#part <class> <count>' declarations in the manifest");
  Dataset d;
  d.info = m.info;
  for (const auto& r : m.records) (r.split == Split::train ? d.train : d.test).push_back(load_record(m, r, opt));
  return d;
}

/// In-memory synthetic dataset; classes follow `kinds` order, samples are
/// seeded by (seed, split, index).
inline Dataset make_synthetic_dataset(const std::vector<ShapeKind>& kinds, std::size_t train_per_kind,
                                      std::size_t test_per_kind, std::size_t n_points, std::uint64_t seed) {
  if (kinds.empty()) throw InvalidArgument("synthetic dataset needs at least one shape kind");
  Dataset d;
  for (ShapeKind k : kinds) {
    if (std::find(d.info.class_names.begin(), d.info.class_names.end(), to_string(k)) != d.info.class_names.end())
      throw InvalidArgument(std::string("shape kind listed twice: ") + to_string(k));
    d.info.class_names.push_back(to_string(k));
    d.info.part_counts.push_back(part_count(k));
  }
  for (int split = 0; split < 2; ++split) {
    const std::size_t per = split == 0 ? train_per_kind : test_per_kind;
    auto& out = split == 0 ? d.train : d.test;
    for (std::size_t i = 0; i < per; ++i) {
      for (std::size_t c = 0; c < kinds.size(); ++c) {
        const std::uint64_t stream = (static_cast<std::uint64_t>(split) << 40) ^ (static_cast<std::uint64_t>(c) << 32) ^ i;
        Rng rng(derive_seed(seed, stream));
        PointCloudSample s = make_synthetic(kinds[c], n_points, rng);
        s.class_label = static_cast<int>(c);
        s.source_id = std::string(to_string(kinds[c])) + "/" + to_string(static_cast<Split>(split)) + "_" + std::to_string(i);
        out.push_back(std::move(s));
      }
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Batching

/// Visiting order for one epoch; a pure function of (count, seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch, bool shuffle = true) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  if (shuffle && count > 1) {
    Rng rng(derive_seed(seed, 0x0b47c4ULL + epoch));
    for (std::size_t i = count - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  }
  return order;
}

template <class T = float>
struct Batch {
  Tensor<T> points;                     // [b, n, 3]
  std::vector<int> labels;              // class per sample
  std::vector<int> part_targets;        // [b * n] global part indices, when labeled
  std::vector<std::size_t> indices;     // positions in the source sample list
  std::size_t size() const { return indices.size(); }
};

template <class T = float>
Batch<T> make_batch(const std::vector<PointCloudSample>& samples, std::span<const std::size_t> indices,
                    const DatasetInfo& info) {
  if (indices.empty()) throw InvalidArgument("make_batch: no samples");
  const std::size_t n = samples[indices[0]].points.size();
  Batch<T> b;
  b.points = Tensor<T>(Shape{indices.size(), n, 3});
  b.indices.assign(indices.begin(), indices.end());
  const auto offsets = info.part_offsets();
  bool parts = info.has_parts();
  for (auto i : indices)
    if (samples[i].part_labels.empty()) parts = false;
  if (parts) b.part_targets.reserve(indices.size() * n);
  auto dst = b.points.values_mut();
  for (std::size_t s = 0; s < indices.size(); ++s) {
    const auto& sample = samples[indices[s]];
    if (sample.points.size() != n)
      throw ShapeError("make_batch: sample '" + sample.source_id + "' has " + std::to_string(sample.points.size()) +
                       " points, expected " + std::to_string(n));
    for (std::size_t p = 0; p < n; ++p)
      for (int a = 0; a < 3; ++a) dst[(s * n + p) * 3 + static_cast<std::size_t>(a)] = static_cast<T>(sample.points[p][a]);
    const int label = sample.class_label.value_or(-1);
    b.labels.push_back(label);
    if (parts) {
      if (label < 0 || static_cast<std::size_t>(label) >= offsets.size())
        throw InvalidArgument("make_batch: sample '" + sample.source_id + "' has no valid class for part offsets");
      for (int l : sample.part_labels) b.part_targets.push_back(static_cast<int>(offsets[static_cast<std::size_t>(label)]) + l);
    }
  }
  return b;
}

/// Sequential batches over one epoch; the final short batch is emitted as-is.
template <class T = float>
class BatchIterator {
 public:
  BatchIterator(const std::vector<PointCloudSample>& samples, const DatasetInfo& info, std::size_t batch_size,
                std::uint64_t seed, std::size_t epoch, bool shuffle = true)
      : samples_(&samples), info_(&info), batch_size_(batch_size) {
    if (samples.empty()) throw DegenerateInputError("batch_iter: empty sample set");
    if (batch_size == 0) throw InvalidArgument("batch_iter: batch size must be >= 1");
    order_ = epoch_order(samples.size(), seed, epoch, shuffle);
  }

  std::size_t batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

  bool next(Batch<T>& out) {
    if (pos_ >= order_.size()) return false;
    const std::size_t end = std::min(order_.size(), pos_ + batch_size_);
    out = make_batch<T>(*samples_, std::span<const std::size_t>(order_.data() + pos_, end - pos_), *info_);
    pos_ = end;
    return true;
  }

  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const std::vector<PointCloudSample>* samples_;
  const DatasetInfo* info_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace pointresnet
