#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "pointresnet/error.hpp"
#include "pointresnet/model.hpp"
#include "pointresnet/train/optimizer.hpp"
#include "pointresnet/train/plan.hpp"

namespace pointresnet {

// Container layout:
//   8 bytes   magic "PRNCKPT1" (the trailing digit is the format version)
//   8 bytes   little-endian u64 length L of the metadata block
//   L bytes   UTF-8 JSON metadata, including the array table
//   ...       little-endian float32 arrays at the table's byte offsets
inline constexpr std::string_view checkpoint_magic = "PRNCKPT1";
inline constexpr int checkpoint_version = 1;

struct CheckpointArray {
  std::string name;
  std::string role;  // parameter | buffer | adam_m | adam_v
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  ModelConfig config;
  Task task = Task::classification;
  TrainPlan plan;
  DatasetInfo dataset;
  std::size_t epoch = 0;       // completed epochs
  std::string rng_state;       // training RNG (dropout)
  std::uint64_t adam_step = 0;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_epsilon = 1e-8;
  double best_eval_acc = -1;   // -1 until an evaluation has run
  std::size_t best_epoch = 0;
  std::vector<CheckpointArray> arrays;

  const CheckpointArray* find(std::string_view name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void append_floats_le(std::string& out, const std::vector<float>& data) {
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
  } else {
    for (float f : data) put_u32_le(out, std::bit_cast<std::uint32_t>(f));
  }
}

inline void read_floats_le(const unsigned char* p, std::vector<float>& out) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), p, out.size() * sizeof(float));
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint32_t v = 0;
      for (int b = 3; b >= 0; --b) v = (v << 8) | p[i * 4 + static_cast<std::size_t>(b)];
      out[i] = std::bit_cast<float>(v);
    }
  }
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : c.arrays) {
    if (element_count(a.shape) != a.data.size())
      throw CheckpointError(CheckpointErrorKind::malformed, "array '" + a.name + "' size does not match its shape");
    table.push_back({{"name", a.name}, {"role", a.role}, {"shape", a.shape}, {"offset", offset}});
    offset += a.data.size() * sizeof(float);
  }
  nlohmann::json meta = {{"format_version", checkpoint_version},
                         {"task", to_string(c.task)},
                         {"config", to_json(c.config)},
                         {"plan", to_json(c.plan)},
                         {"dataset", to_json(c.dataset)},
                         {"epoch", c.epoch},
                         {"rng_state", c.rng_state},
                         {"adam", {{"step", c.adam_step}, {"beta1", c.adam_beta1}, {"beta2", c.adam_beta2},
                                   {"epsilon", c.adam_epsilon}}},
                         {"best", {{"eval_acc", c.best_eval_acc}, {"epoch", c.best_epoch}}},
                         {"data_bytes", offset},
                         {"arrays", table}};
  const std::string json = meta.dump();
  std::string out(checkpoint_magic);
  const std::uint64_t len = json.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  out += json;
  out.reserve(out.size() + offset);
  for (const auto& a : c.arrays) detail::append_floats_le(out, a.data);
  return out;
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  using K = CheckpointErrorKind;
  const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::string_view family = checkpoint_magic.substr(0, 7);
  if (bytes.size() < checkpoint_magic.size()) {
    if (checkpoint_magic.substr(0, bytes.size()) == bytes && !bytes.empty())
      throw CheckpointError(K::truncated, "checkpoint truncated inside the magic bytes");
    throw CheckpointError(K::bad_magic, "not a checkpoint (file too short for the magic bytes)");
  }
  if (bytes.substr(0, 7) != family) throw CheckpointError(K::bad_magic, "not a checkpoint (bad magic bytes)");
  if (bytes[7] != checkpoint_magic[7])
    throw CheckpointError(K::version_mismatch, "checkpoint format version '" + std::string(1, bytes[7]) +
                                                   "' is not supported (expected " +
                                                   std::to_string(checkpoint_version) + ")");
  if (bytes.size() < 16) throw CheckpointError(K::truncated, "checkpoint truncated in the metadata length");
  const std::uint64_t len = detail::get_u64_le(u + 8);
  if (len > bytes.size() - 16) throw CheckpointError(K::truncated, "checkpoint truncated in the metadata block");
  const std::size_t data_start = 16 + static_cast<std::size_t>(len);

  Checkpoint c;
  std::vector<std::tuple<std::size_t, std::uint64_t>> spans;  // (array index, offset)
  std::uint64_t data_bytes = 0;
  try {
    const auto meta = nlohmann::json::parse(bytes.substr(16, static_cast<std::size_t>(len)));
    if (meta.at("format_version").get<int>() != checkpoint_version)
      throw CheckpointError(K::version_mismatch, "checkpoint metadata version " +
                                                     std::to_string(meta.at("format_version").get<int>()) +
                                                     " is not supported");
    c.task = parse_task(meta.at("task").get<std::string>());
    c.config = model_config_from_json(meta.at("config"));
    c.plan = train_plan_from_json(meta.at("plan"));
    c.dataset = dataset_info_from_json(meta.at("dataset"));
    meta.at("epoch").get_to(c.epoch);
    meta.at("rng_state").get_to(c.rng_state);
    const auto& adam = meta.at("adam");
    adam.at("step").get_to(c.adam_step);
    adam.at("beta1").get_to(c.adam_beta1);
    adam.at("beta2").get_to(c.adam_beta2);
    adam.at("epsilon").get_to(c.adam_epsilon);
    meta.at("best").at("eval_acc").get_to(c.best_eval_acc);
    meta.at("best").at("epoch").get_to(c.best_epoch);
    meta.at("data_bytes").get_to(data_bytes);
    for (const auto& entry : meta.at("arrays")) {
      CheckpointArray a;
      entry.at("name").get_to(a.name);
      entry.at("role").get_to(a.role);
      entry.at("shape").get_to(a.shape);
      spans.emplace_back(c.arrays.size(), entry.at("offset").get<std::uint64_t>());
      c.arrays.push_back(std::move(a));
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(K::malformed, std::string("checkpoint metadata is malformed: ") + e.what());
  } catch (const Error& e) {
    throw CheckpointError(K::malformed, std::string("checkpoint metadata is invalid: ") + e.what());
  }

  const std::uint64_t available = bytes.size() - data_start;
  if (available < data_bytes)
    throw CheckpointError(K::truncated, "checkpoint arrays truncated: " + std::to_string(available) + " of " +
                                            std::to_string(data_bytes) + " bytes present");
  if (available > data_bytes) throw CheckpointError(K::malformed, "unexpected bytes after the last array");
  for (auto [i, offset] : spans) {
    auto& a = c.arrays[i];
    std::uint64_t count = 1;
    for (auto d : a.shape) {
      if (d == 0 || count > (std::uint64_t{1} << 40) / d)
        throw CheckpointError(K::malformed, "array '" + a.name + "' has an invalid shape");
      count *= d;
    }
    if (offset > data_bytes || count * sizeof(float) > data_bytes - offset)
      throw CheckpointError(K::malformed, "array '" + a.name + "' lies outside the data block");
    a.data.resize(static_cast<std::size_t>(count));
    detail::read_floats_le(u + data_start + offset, a.data);
  }
  return c;
}

/// Writes through a temporary file so an interrupted save never leaves a
/// partial checkpoint under `path`.
inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const std::string bytes = serialize_checkpoint(c);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointErrorKind::io, "cannot create " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointErrorKind::io, "write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(CheckpointErrorKind::io, "cannot move " + tmp + " to " + path + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::io, "cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

// ---------------------------------------------------------------------------
// Model / optimizer transfer

inline void append_model_arrays(Checkpoint& c, const Model<float>& model, const AdamState<float>& adam) {
  std::size_t pi = 0;
  const bool has_moments = !adam.m.empty();
  for (const auto& nt : model.named_tensors()) {
    const auto v = nt.tensor.values();
    c.arrays.push_back({nt.name, nt.role == TensorRole::parameter ? "parameter" : "buffer", nt.tensor.shape(),
                        std::vector<float>(v.begin(), v.end())});
  }
  if (!has_moments) return;
  for (const auto& nt : model.named_tensors()) {
    if (nt.role != TensorRole::parameter) continue;
    c.arrays.push_back({"adam.m/" + nt.name, "adam_m", nt.tensor.shape(), adam.m[pi]});
    c.arrays.push_back({"adam.v/" + nt.name, "adam_v", nt.tensor.shape(), adam.v[pi]});
    ++pi;
  }
}

/// Copies stored arrays into `model` (and `adam` when given). Every model
/// tensor must be present with the same shape.
inline void restore_model_arrays(const Checkpoint& c, Model<float>& model, AdamState<float>* adam) {
  using K = CheckpointErrorKind;
  std::size_t used = 0;
  auto take = [&](const std::string& name, const Shape& shape) -> const CheckpointArray& {
    const CheckpointArray* a = c.find(name);
    if (!a) throw CheckpointError(K::mismatch, "checkpoint has no array '" + name + "'");
    if (a->shape != shape)
      throw CheckpointError(K::mismatch, "array '" + name + "' has shape " + to_string(a->shape) + ", model expects " +
                                             to_string(shape));
    ++used;
    return *a;
  };
  const auto named = model.named_tensors();
  for (const auto& nt : named) {
    const auto& a = take(nt.name, nt.tensor.shape());
    Tensor<float> t = nt.tensor;
    std::copy(a.data.begin(), a.data.end(), t.values_mut().begin());
  }
  if (adam) {
    adam->beta1 = c.adam_beta1;
    adam->beta2 = c.adam_beta2;
    adam->epsilon = c.adam_epsilon;
    adam->t = c.adam_step;
    adam->m.clear();
    adam->v.clear();
  }
  std::size_t moment_arrays = 0;
  for (const auto& a : c.arrays)
    if (a.role == "adam_m" || a.role == "adam_v") ++moment_arrays;
  if (moment_arrays > 0) {
    for (const auto& nt : named) {
      if (nt.role != TensorRole::parameter) continue;
      const auto& m = take("adam.m/" + nt.name, nt.tensor.shape());
      const auto& v = take("adam.v/" + nt.name, nt.tensor.shape());
      if (adam) {
        adam->m.push_back(m.data);
        adam->v.push_back(v.data);
      }
    }
  } else if (c.adam_step > 0) {
    throw CheckpointError(K::mismatch, "checkpoint records optimizer steps but no moment arrays");
  }
  if (used != c.arrays.size())
    throw CheckpointError(K::mismatch, "checkpoint holds " + std::to_string(c.arrays.size() - used) +
                                           " arrays the model does not use");
}

}  // namespace pointresnet
