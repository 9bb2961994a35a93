#pragma once

// RunConfig and its flat `key = value` text form. Keys mirror the field
// names; nested groups use a dotted prefix (lr_decay.factor, dataset.seed).
// Lists are comma separated. Unknown keys are errors.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "priq/aggregation.hpp"
#include "priq/backbone.hpp"
#include "priq/error.hpp"
#include "priq/pseudo_reference.hpp"
#include "priq/synth.hpp"

namespace priq {

struct LrDecay {
  double factor = 0.3;
  std::size_t every_epochs = 10;
};

struct DatasetConfig {
  synth::DatasetParams params;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 7;
};

struct RunConfig {
  PRVariant variant = PRVariant::LocationWeight;
  bool pseudo_ref = true;
  bool ssim = true;
  bool pyramid = true;
  std::size_t N_train = 5;
  std::size_t epochs = 60;
  std::size_t batch_sets = 6;
  double learning_rate = 0.02;
  double momentum = 0.9;
  double weight_decay = 0.0;  // L2 coefficient, applied every step
  LrDecay lr_decay;
  double huber_delta = 1.0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<std::size_t> T_values{2, 5, 10, 20, 50, 100};
  std::uint64_t partition_seed = 11;
  std::size_t crop_size = 64;
  SsimConstants ssim_constants;
  DatasetConfig dataset;
  BackboneConfig backbone;

  std::size_t batch_images() const { return batch_sets * N_train; }

  ModelConfig model_config(std::uint64_t seed) const {
    ModelConfig m;
    m.variant = variant;
    m.pseudo_ref = pseudo_ref;
    m.ssim = ssim;
    m.pyramid = pyramid;
    m.ssim_constants = ssim_constants;
    m.backbone = backbone;
    m.backbone.seed = seed;
    return m;
  }

  void validate() const {
    model_config(0).validate();
    if (N_train < 1) throw ConfigError("config: N_train must be positive");
    if (batch_sets < 1) throw ConfigError("config: batch_sets must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("config: learning_rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("config: momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("config: weight_decay must be non-negative");
    if (!(lr_decay.factor > 0.0)) throw ConfigError("config: lr_decay.factor must be positive");
    if (lr_decay.every_epochs < 1) throw ConfigError("config: lr_decay.every_epochs must be positive");
    if (!(huber_delta > 0.0)) throw ConfigError("config: huber_delta must be positive");
    if (seeds.empty()) throw ConfigError("config: seeds must not be empty");
    for (std::size_t t : T_values) {
      if (t < 1) throw ConfigError("config: T_values entries must be positive");
    }
    if (crop_size > dataset.params.image_size) throw ConfigError("config: crop_size exceeds dataset.image_size");
    if (!(dataset.train_fraction > 0.0 && dataset.train_fraction < 1.0)) {
      throw ConfigError("config: dataset.train_fraction must be in (0, 1)");
    }
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename U>
U parse_number(const std::string& key, const std::string& v) {
  U out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: bad numeric value '" + v + "' for " + key);
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw ConfigError("");
    return d;
  } catch (...) {
    throw ConfigError("config: bad real value '" + v + "' for " + key);
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: bad boolean '" + v + "' for " + key);
}

template <typename U>
std::vector<U> parse_uint_list(const std::string& key, const std::string& v) {
  std::vector<U> out;
  for (const auto& item : split_list(v)) out.push_back(parse_number<U>(key, item));
  return out;
}

inline std::string fmt_double(double d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

template <typename U>
std::string join(const std::vector<U>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace config_detail

/// Parsed `key = value` lines; '#' starts a comment.
inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: line " + std::to_string(lineno) + " has no '='");
    const std::string key = config_detail::trim(line.substr(0, eq));
    const std::string value = config_detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: line " + std::to_string(lineno) + " has an empty key");
    if (!kv.emplace(key, value).second) throw ConfigError("config: duplicate key '" + key + "'");
  }
  return kv;
}

/// Applies one key to the config; returns false when the key is unknown.
inline bool apply_key(RunConfig& c, const std::string& key, const std::string& v) {
  using namespace config_detail;
  if (key == "variant") c.variant = parse_variant(v);
  else if (key == "pseudo_ref") c.pseudo_ref = parse_bool(key, v);
  else if (key == "ssim") c.ssim = parse_bool(key, v);
  else if (key == "pyramid") c.pyramid = parse_bool(key, v);
  else if (key == "N_train") c.N_train = parse_number<std::size_t>(key, v);
  else if (key == "epochs") c.epochs = parse_number<std::size_t>(key, v);
  else if (key == "batch_sets") c.batch_sets = parse_number<std::size_t>(key, v);
  else if (key == "learning_rate") c.learning_rate = parse_double(key, v);
  else if (key == "momentum") c.momentum = parse_double(key, v);
  else if (key == "weight_decay") c.weight_decay = parse_double(key, v);
  else if (key == "lr_decay.factor") c.lr_decay.factor = parse_double(key, v);
  else if (key == "lr_decay.every_epochs") c.lr_decay.every_epochs = parse_number<std::size_t>(key, v);
  else if (key == "huber_delta") c.huber_delta = parse_double(key, v);
  else if (key == "seeds") c.seeds = parse_uint_list<std::uint64_t>(key, v);
  else if (key == "T_values") c.T_values = parse_uint_list<std::size_t>(key, v);
  else if (key == "partition_seed") c.partition_seed = parse_number<std::uint64_t>(key, v);
  else if (key == "crop_size") c.crop_size = parse_number<std::size_t>(key, v);
  else if (key == "ssim_constants.c1") c.ssim_constants.c1 = parse_double(key, v);
  else if (key == "ssim_constants.c2") c.ssim_constants.c2 = parse_double(key, v);
  else if (key == "dataset.num_scenes") c.dataset.params.num_scenes = parse_number<std::size_t>(key, v);
  else if (key == "dataset.image_size") c.dataset.params.image_size = parse_number<std::size_t>(key, v);
  else if (key == "dataset.seed") c.dataset.params.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "dataset.levels") c.dataset.params.levels = parse_number<int>(key, v);
  else if (key == "dataset.families") {
    c.dataset.params.families.clear();
    for (const auto& f : split_list(v)) c.dataset.params.families.push_back(synth::parse_family(f));
  } else if (key == "dataset.train_fraction") c.dataset.train_fraction = parse_double(key, v);
  else if (key == "dataset.split_seed") c.dataset.split_seed = parse_number<std::uint64_t>(key, v);
  else if (key == "backbone.stem_kernel") c.backbone.stem_kernel = parse_number<std::size_t>(key, v);
  else if (key == "backbone.stage_channels") c.backbone.stage_channels = parse_uint_list<std::size_t>(key, v);
  else if (key == "backbone.stage_blocks") c.backbone.stage_blocks = parse_uint_list<std::size_t>(key, v);
  else if (key == "backbone.downsample_strides") c.backbone.downsample_strides = parse_uint_list<std::size_t>(key, v);
  else return false;
  return true;
}

inline RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (!apply_key(c, k, v)) throw ConfigError("config: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

/// Canonical text form; parse_run_config(to_text(c)) reproduces c.
inline std::string to_text(const RunConfig& c) {
  using namespace config_detail;
  std::ostringstream o;
  o << "variant = " << to_string(c.variant) << '\n'
    << "pseudo_ref = " << (c.pseudo_ref ? "true" : "false") << '\n'
    << "ssim = " << (c.ssim ? "true" : "false") << '\n'
    << "pyramid = " << (c.pyramid ? "true" : "false") << '\n'
    << "N_train = " << c.N_train << '\n'
    << "epochs = " << c.epochs << '\n'
    << "batch_sets = " << c.batch_sets << '\n'
    << "learning_rate = " << fmt_double(c.learning_rate) << '\n'
    << "momentum = " << fmt_double(c.momentum) << '\n'
    << "weight_decay = " << fmt_double(c.weight_decay) << '\n'
    << "lr_decay.factor = " << fmt_double(c.lr_decay.factor) << '\n'
    << "lr_decay.every_epochs = " << c.lr_decay.every_epochs << '\n'
    << "huber_delta = " << fmt_double(c.huber_delta) << '\n'
    << "seeds = " << join(c.seeds) << '\n'
    << "T_values = " << join(c.T_values) << '\n'
    << "partition_seed = " << c.partition_seed << '\n'
    << "crop_size = " << c.crop_size << '\n'
    << "ssim_constants.c1 = " << fmt_double(c.ssim_constants.c1) << '\n'
    << "ssim_constants.c2 = " << fmt_double(c.ssim_constants.c2) << '\n'
    << "dataset.num_scenes = " << c.dataset.params.num_scenes << '\n'
    << "dataset.image_size = " << c.dataset.params.image_size << '\n'
    << "dataset.seed = " << c.dataset.params.seed << '\n'
    << "dataset.levels = " << c.dataset.params.levels << '\n'
    << "dataset.families = ";
  for (std::size_t i = 0; i < c.dataset.params.families.size(); ++i) {
    o << (i ? "," : "") << synth::to_string(c.dataset.params.families[i]);
  }
  o << '\n'
    << "dataset.train_fraction = " << fmt_double(c.dataset.train_fraction) << '\n'
    << "dataset.split_seed = " << c.dataset.split_seed << '\n'
    << "backbone.stem_kernel = " << c.backbone.stem_kernel << '\n'
    << "backbone.stage_channels = " << join(c.backbone.stage_channels) << '\n'
    << "backbone.stage_blocks = " << join(c.backbone.stage_blocks) << '\n'
    << "backbone.downsample_strides = " << join(c.backbone.downsample_strides) << '\n';
  return o.str();
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline RunConfig load_run_config(const std::string& path) { return parse_run_config(read_text_file(path)); }

}  // namespace priq
