#pragma once

// Checkpoint file layout (format version 1):
//
//   topiq-checkpoint 1
//   config {...flat JSON model config...}
//   labels <min> <max>            | labels none
//   param <name> <byte offset> <rank> <extent>...
//   ...
//   payload <byte count>
//   <raw little-endian float32 values, parameters back to back>
//
// The header is plain text; the payload starts right after the newline that
// ends the "payload" line.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "topiq/model.hpp"

namespace topiq {

inline constexpr int kCheckpointVersion = 1;

enum class CheckpointErrorKind {
  io,
  bad_format,
  version_mismatch,
  config_mismatch,
  shape_mismatch,
  unknown_parameter,
  missing_parameter,
  truncated_payload,
};

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

struct StoredParameter {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  int version = kCheckpointVersion;
  ModelConfig config;
  std::optional<LabelRange> label_range;
  std::vector<StoredParameter> parameters;
};

namespace detail {

inline void put_f32_le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

inline float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return std::bit_cast<float>(bits);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

template <class T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  std::string header = "topiq-checkpoint " + std::to_string(kCheckpointVersion) + "\n";
  header += "config " + to_json(model.config()).dump() + "\n";
  if (model.label_range) {
    header += "labels " + detail::format_double(model.label_range->min) + " " +
              detail::format_double(model.label_range->max) + "\n";
  } else {
    header += "labels none\n";
  }
  std::string payload;
  for (const auto& p : model.parameters()) {
    header += "param " + p.name + " " + std::to_string(payload.size()) + " " + std::to_string(p.tensor.rank());
    for (auto e : p.tensor.shape()) header += " " + std::to_string(e);
    header += "\n";
    for (T v : p.tensor.data()) detail::put_f32_le(payload, static_cast<float>(v));
  }
  header += "payload " + std::to_string(payload.size()) + "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrorKind::io, "checkpoint: cannot write " + path);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw CheckpointError(CheckpointErrorKind::io, "checkpoint: write failed for " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::io, "checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  auto next_line = [&](const char* what) {
    const auto end = bytes.find('\n', pos);
    if (end == std::string::npos) {
      throw CheckpointError(CheckpointErrorKind::bad_format, std::string("checkpoint: missing ") + what + " line");
    }
    std::string line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  auto bad = [&](const std::string& msg) { return CheckpointError(CheckpointErrorKind::bad_format, "checkpoint: " + msg); };

  Checkpoint ckpt;
  {
    std::istringstream magic(next_line("magic"));
    std::string tag;
    magic >> tag >> ckpt.version;
    if (tag != "topiq-checkpoint" || magic.fail()) throw bad("not a checkpoint file: " + path);
    if (ckpt.version != kCheckpointVersion) {
      throw CheckpointError(CheckpointErrorKind::version_mismatch,
                            "checkpoint: format version " + std::to_string(ckpt.version) + ", expected " +
                                std::to_string(kCheckpointVersion));
    }
  }
  {
    const std::string line = next_line("config");
    if (line.rfind("config ", 0) != 0) throw bad("expected config line");
    try {
      ckpt.config = model_config_from_json(nlohmann::json::parse(line.substr(7)));
    } catch (const nlohmann::json::exception& e) {
      throw bad(std::string("config: ") + e.what());
    } catch (const ArgumentError& e) {
      throw bad(std::string("config: ") + e.what());
    }
  }
  {
    std::istringstream labels(next_line("labels"));
    std::string tag, first;
    labels >> tag >> first;
    if (tag != "labels") throw bad("expected labels line");
    if (first != "none") {
      LabelRange range;
      try {
        range.min = std::stod(first);
      } catch (const std::exception&) {
        throw bad("labels line malformed");
      }
      labels >> range.max;
      if (labels.fail()) throw bad("labels line malformed");
      ckpt.label_range = range;
    }
  }
  std::vector<std::size_t> offsets;
  std::size_t payload_size = 0;
  for (;;) {
    std::istringstream line(next_line("param/payload"));
    std::string tag;
    line >> tag;
    if (tag == "payload") {
      line >> payload_size;
      if (line.fail()) throw bad("payload line malformed");
      break;
    }
    if (tag != "param") throw bad("unexpected header line tag '" + tag + "'");
    StoredParameter p;
    std::size_t offset = 0, rank = 0;
    line >> p.name >> offset >> rank;
    p.shape.resize(rank);
    for (auto& e : p.shape) line >> e;
    if (line.fail() || rank == 0) throw bad("param line for '" + p.name + "' malformed");
    offsets.push_back(offset);
    ckpt.parameters.push_back(std::move(p));
  }

  const std::size_t available = bytes.size() - pos;
  if (available < payload_size) {
    throw CheckpointError(CheckpointErrorKind::truncated_payload,
                          "checkpoint: payload has " + std::to_string(available) + " of " +
                              std::to_string(payload_size) + " bytes");
  }
  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (std::size_t i = 0; i < ckpt.parameters.size(); ++i) {
    auto& p = ckpt.parameters[i];
    const std::size_t count = shape_numel(p.shape);
    if (offsets[i] + 4 * count > payload_size) {
      throw CheckpointError(CheckpointErrorKind::truncated_payload,
                            "checkpoint: parameter '" + p.name + "' extends past the payload");
    }
    p.values.resize(count);
    for (std::size_t k = 0; k < count; ++k) p.values[k] = detail::get_f32_le(base + offsets[i] + 4 * k);
  }
  return ckpt;
}

inline bool same_config(const ModelConfig& a, const ModelConfig& b) { return to_json(a) == to_json(b); }

/// Copies stored values into an existing model after validating config,
/// names and shapes.
template <class T>
void apply_checkpoint(const Checkpoint& ckpt, Model<T>& model) {
  if (!same_config(ckpt.config, model.config())) {
    throw CheckpointError(CheckpointErrorKind::config_mismatch,
                          "checkpoint: config " + to_json(ckpt.config).dump() + " does not match model config " +
                              to_json(model.config()).dump());
  }
  std::map<std::string, Tensor<T>> targets;
  for (const auto& p : model.parameters()) targets.emplace(p.name, p.tensor);
  std::map<std::string, bool> seen;
  for (const auto& stored : ckpt.parameters) {
    auto it = targets.find(stored.name);
    if (it == targets.end()) {
      throw CheckpointError(CheckpointErrorKind::unknown_parameter, "checkpoint: unknown parameter '" + stored.name + "'");
    }
    if (it->second.shape() != stored.shape) {
      throw CheckpointError(CheckpointErrorKind::shape_mismatch,
                            "checkpoint: parameter '" + stored.name + "' has shape " + shape_str(stored.shape) +
                                ", model expects " + shape_str(it->second.shape()));
    }
    auto dst = it->second.mutable_data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(stored.values[k]);
    seen[stored.name] = true;
  }
  for (const auto& [name, tensor] : targets) {
    if (!seen.count(name)) {
      throw CheckpointError(CheckpointErrorKind::missing_parameter, "checkpoint: parameter '" + name + "' missing");
    }
  }
  model.label_range = ckpt.label_range;
}

template <class T>
void load_checkpoint(const std::string& path, Model<T>& model) {
  apply_checkpoint(read_checkpoint(path), model);
}

template <class T>
Model<T> load_model(const std::string& path) {
  Checkpoint ckpt = read_checkpoint(path);
  Model<T> model = Model<T>::create(ckpt.config);
  apply_checkpoint(ckpt, model);
  return model;
}

}  // namespace topiq
