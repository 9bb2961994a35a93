#pragma once

// Checkpoint file layout (single file):
//
//   priq-checkpoint
//   format_version = 1
//   seed = <run seed>
//   initial_loss = <%.17g>
//   loss_curve = <comma separated %.17g>
//   config_begin
//   <RunConfig text form>
//   config_end
//   param <name> <dims joined by 'x'> <byte offset> <element count>
//   ...
//   blob_bytes = <total>
//   manifest_end
//   <blob: little-endian IEEE-754 float32 values, parameters in manifest order>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "priq/config.hpp"
#include "priq/error.hpp"
#include "priq/train.hpp"

namespace priq {

inline constexpr int kCheckpointFormatVersion = 1;

namespace ckpt_detail {

inline std::string dims(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out.empty() ? "scalar" : out;
}

inline void put_f32(std::string& blob, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

inline float get_f32(const char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline std::string expect_line(std::istringstream& in, const std::string& prefix) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("checkpoint: corrupt file (missing '" + prefix + "')");
  if (line.rfind(prefix, 0) != 0) throw IoError("checkpoint: corrupt file (expected '" + prefix + "', got '" + line + "')");
  return line.substr(prefix.size());
}

}  // namespace ckpt_detail

inline std::string serialize_checkpoint(const TrainResult& r) {
  using namespace ckpt_detail;
  std::ostringstream m;
  m << "priq-checkpoint\n"
    << "format_version = " << kCheckpointFormatVersion << '\n'
    << "seed = " << r.seed << '\n'
    << "initial_loss = " << config_detail::fmt_double(r.initial_loss) << '\n'
    << "loss_curve = ";
  for (std::size_t i = 0; i < r.loss_curve.size(); ++i) m << (i ? "," : "") << config_detail::fmt_double(r.loss_curve[i]);
  m << "\nconfig_begin\n" << to_text(r.config) << "config_end\n";
  std::string blob;
  for (const auto& p : r.model.named_parameters()) {
    m << "param " << p.name << ' ' << dims(p.tensor.shape()) << ' ' << blob.size() << ' ' << p.tensor.numel() << '\n';
    for (float v : p.tensor.values()) put_f32(blob, v);
  }
  m << "blob_bytes = " << blob.size() << "\nmanifest_end\n";
  return m.str() + blob;
}

/// Rebuilds a trained model. When `expected` is given, the checkpoint's
/// parameters must match the shapes of a model built from that config.
inline TrainResult deserialize_checkpoint(const std::string& bytes, const RunConfig* expected = nullptr) {
  using namespace ckpt_detail;
  const std::string end_marker = "manifest_end\n";
  const auto end = bytes.find(end_marker);
  if (bytes.rfind("priq-checkpoint\n", 0) != 0) throw IoError("checkpoint: not a checkpoint file");
  if (end == std::string::npos) throw IoError("checkpoint: corrupt file (manifest truncated)");
  std::istringstream in(bytes.substr(0, end));
  std::string line;
  std::getline(in, line);

  const std::string version = expect_line(in, "format_version = ");
  if (version != std::to_string(kCheckpointFormatVersion)) {
    throw IoError("checkpoint: format version " + version + " is not supported (expected " +
                  std::to_string(kCheckpointFormatVersion) + ")");
  }
  TrainResult r;
  try {
    r.seed = std::stoull(expect_line(in, "seed = "));
    r.initial_loss = std::stod(expect_line(in, "initial_loss = "));
    for (const auto& v : config_detail::split_list(expect_line(in, "loss_curve = "))) r.loss_curve.push_back(std::stod(v));
  } catch (const std::logic_error&) {
    throw IoError("checkpoint: corrupt header values");
  }
  expect_line(in, "config_begin");
  std::string config_text;
  while (std::getline(in, line) && line != "config_end") config_text += line + '\n';
  if (line != "config_end") throw IoError("checkpoint: corrupt file (config block unterminated)");
  r.config = parse_run_config(config_text);

  struct Entry {
    std::string name, dims;
    std::size_t offset = 0, count = 0;
  };
  std::vector<Entry> entries;
  std::size_t blob_bytes = 0;
  while (std::getline(in, line)) {
    if (line.rfind("param ", 0) == 0) {
      std::istringstream ls(line.substr(6));
      Entry e;
      if (!(ls >> e.name >> e.dims >> e.offset >> e.count)) throw IoError("checkpoint: corrupt param line '" + line + "'");
      entries.push_back(e);
    } else if (line.rfind("blob_bytes = ", 0) == 0) {
      blob_bytes = std::stoull(line.substr(13));
    } else {
      throw IoError("checkpoint: unexpected manifest line '" + line + "'");
    }
  }
  const std::size_t blob_start = end + end_marker.size();
  if (bytes.size() - blob_start != blob_bytes) {
    throw IoError("checkpoint: corrupt file (blob has " + std::to_string(bytes.size() - blob_start) +
                  " bytes, manifest says " + std::to_string(blob_bytes) + ")");
  }

  const RunConfig& model_config = expected ? *expected : r.config;
  r.model = PriqModel<float>::build(model_config.model_config(r.seed));
  if (expected) r.config = *expected;
  const auto params = r.model.named_parameters();
  if (params.size() != entries.size()) {
    throw ShapeError("checkpoint: " + std::to_string(entries.size()) + " stored parameters, model expects " +
                     std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& e = entries[k];
    auto t = params[k].tensor;
    if (e.name != params[k].name || e.dims != dims(t.shape()) || e.count != t.numel()) {
      throw ShapeError("checkpoint: parameter '" + e.name + "' [" + e.dims + "] does not match model parameter '" +
                       params[k].name + "' [" + dims(t.shape()) + "]");
    }
    if (e.offset + 4 * e.count > blob_bytes) throw IoError("checkpoint: corrupt offsets for '" + e.name + "'");
    const char* p = bytes.data() + blob_start + e.offset;
    for (std::size_t i = 0; i < e.count; ++i) t[i] = get_f32(p + 4 * i);
  }
  return r;
}

inline void checkpoint_save(const TrainResult& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write '" + path + "'");
  const std::string bytes = serialize_checkpoint(r);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("checkpoint: write failed for '" + path + "'");
}

inline TrainResult checkpoint_load(const std::string& path, const RunConfig* expected = nullptr) {
  return deserialize_checkpoint(read_text_file(path), expected);
}

}  // namespace priq
