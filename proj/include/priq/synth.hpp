#pragma once

// Synthetic registered multi-quality scenes: procedural pristine content,
// parameterized distortions with five severity levels, SSIM-derived
// pseudo-MOS labels, set sampling and set-consistent augmentation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "priq/error.hpp"
#include "priq/random.hpp"
#include "priq/tensor.hpp"

namespace priq::synth {

using Image = Tensor<float>;  // [3, H, W], values in [0, 1]

inline constexpr std::size_t kMinImageSize = 64;
inline constexpr int kNumLevels = 5;

enum class DistortionFamily { GaussianBlur, AdditiveGaussianNoise, ContrastCompression, IntensityQuantization };

inline constexpr DistortionFamily kAllFamilies[] = {
    DistortionFamily::GaussianBlur, DistortionFamily::AdditiveGaussianNoise,
    DistortionFamily::ContrastCompression, DistortionFamily::IntensityQuantization};

inline std::string_view to_string(DistortionFamily f) {
  switch (f) {
    case DistortionFamily::GaussianBlur: return "gaussian_blur";
    case DistortionFamily::AdditiveGaussianNoise: return "additive_gaussian_noise";
    case DistortionFamily::ContrastCompression: return "contrast_compression";
    case DistortionFamily::IntensityQuantization: return "intensity_quantization";
  }
  return "?";
}

inline DistortionFamily parse_family(std::string_view s) {
  for (auto f : kAllFamilies) {
    if (to_string(f) == s) return f;
  }
  throw ConfigError("unknown distortion family '" + std::string(s) + "'");
}

// Severity per level 1..5; each row is monotone in severity.
inline constexpr std::array<double, kNumLevels> kBlurSigma{0.5, 1.0, 2.0, 3.0, 4.5};
inline constexpr std::array<double, kNumLevels> kNoiseSigma{0.02, 0.05, 0.1, 0.18, 0.3};
inline constexpr std::array<double, kNumLevels> kContrastFactor{0.8, 0.6, 0.4, 0.25, 0.12};
inline constexpr std::array<int, kNumLevels> kQuantLevels{24, 12, 6, 4, 2};

struct SceneSpec {
  std::size_t scene_id = 0;
  std::uint64_t seed = 0;
  std::size_t image_size = 80;
};

struct DistortionSpec {
  DistortionFamily family = DistortionFamily::GaussianBlur;
  int level = 1;  // 1..5; 0 marks the pristine copy
  bool operator==(const DistortionSpec&) const = default;
};

struct LabeledImage {
  Image pixels;
  std::size_t scene_id = 0;
  DistortionSpec distortion;
  float score = 0.f;
};

struct Scene {
  std::size_t scene_id = 0;
  Image pristine;  // labeling only, never a model input
  std::vector<LabeledImage> images;
};

struct Dataset {
  std::size_t image_size = 80;
  std::vector<Scene> scenes;

  std::size_t num_images() const {
    std::size_t n = 0;
    for (const auto& s : scenes) n += s.images.size();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Content

/// Deterministic procedural image: a colored gradient, random ellipses and
/// rectangles, low-frequency waves and a fine texture, rescaled into [0.05, 0.95].
inline Image generate_scene(const SceneSpec& spec) {
  if (spec.image_size < kMinImageSize) {
    throw ConfigError("generate_scene: image_size " + std::to_string(spec.image_size) + " is below " +
                      std::to_string(kMinImageSize));
  }
  const std::size_t n = spec.image_size;
  const double size = static_cast<double>(n);
  Rng rng(derive_seed(spec.seed, spec.scene_id));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  Image img({3, n, n});
  auto px = [&](std::size_t c, std::size_t y, std::size_t x) -> float& { return img[(c * n + y) * n + x]; };

  // Gradient background.
  const double angle = uni(0.0, 2.0 * std::numbers::pi);
  const double gx = std::cos(angle), gy = std::sin(angle);
  std::array<double, 3> c_lo{}, c_hi{};
  for (int c = 0; c < 3; ++c) {
    c_lo[c] = uni(0.0, 0.6);
    c_hi[c] = uni(0.4, 1.0);
  }
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double t = 0.5 + 0.5 * ((x / size - 0.5) * gx + (y / size - 0.5) * gy);
      for (int c = 0; c < 3; ++c) px(c, y, x) = static_cast<float>(c_lo[c] + (c_hi[c] - c_lo[c]) * t);
    }
  }

  // Shapes.
  const int shapes = 5 + static_cast<int>(rng() % 8);
  for (int k = 0; k < shapes; ++k) {
    const bool ellipse = u01(rng) < 0.5;
    const double cx = uni(0.0, size), cy = uni(0.0, size);
    const double rx = uni(0.05, 0.3) * size, ry = uni(0.05, 0.3) * size;
    const double rot = uni(0.0, std::numbers::pi);
    const double alpha = uni(0.5, 1.0);
    std::array<double, 3> color{uni(0.0, 1.0), uni(0.0, 1.0), uni(0.0, 1.0)};
    const double cr = std::cos(rot), sr = std::sin(rot);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = (dx * cr + dy * sr) / rx, v = (-dx * sr + dy * cr) / ry;
        const bool inside = ellipse ? (u * u + v * v <= 1.0) : (std::abs(u) <= 1.0 && std::abs(v) <= 1.0);
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) {
          px(c, y, x) = static_cast<float>((1.0 - alpha) * px(c, y, x) + alpha * color[c]);
        }
      }
    }
  }

  // Band-limited waves: a few coarse ones and a fine texture.
  struct Wave {
    double fx, fy, phase, amp;
    std::array<double, 3> tint;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 6; ++k) {
    const double f = uni(1.0, 6.0), th = uni(0.0, std::numbers::pi);
    waves.push_back({f * std::cos(th), f * std::sin(th), uni(0.0, 6.3), uni(0.03, 0.08),
                     {uni(0.3, 1.0), uni(0.3, 1.0), uni(0.3, 1.0)}});
  }
  for (int k = 0; k < 4; ++k) {
    const double f = uni(10.0, 22.0), th = uni(0.0, std::numbers::pi);
    waves.push_back({f * std::cos(th), f * std::sin(th), uni(0.0, 6.3), uni(0.02, 0.05),
                     {uni(0.5, 1.0), uni(0.5, 1.0), uni(0.5, 1.0)}});
  }
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double s[3] = {0, 0, 0};
      for (const auto& w : waves) {
        const double v = w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) / size + w.phase);
        for (int c = 0; c < 3; ++c) s[c] += v * w.tint[c];
      }
      for (int c = 0; c < 3; ++c) px(c, y, x) += static_cast<float>(s[c]);
    }
  }

  // Per-channel rescale into [0.05, 0.95].
  const std::size_t plane = n * n;
  for (std::size_t c = 0; c < 3; ++c) {
    float* p = img.data() + c * plane;
    const auto [mn, mx] = std::minmax_element(p, p + plane);
    const float lo = *mn, range = std::max(*mx - *mn, 1e-6f);
    for (std::size_t q = 0; q < plane; ++q) p[q] = 0.05f + 0.9f * (p[q] - lo) / range;
  }
  return img;
}

// ---------------------------------------------------------------------------
// Distortions

namespace detail {

// Reflect-101 indexing: -1 -> 1, n -> n-2.
inline std::size_t reflect(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < n ? i : period - i);
}

inline void check_image(const Image& img, const char* op) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError(std::string(op) + ": image must be [3,H,W], got " + shape_str(img.shape()));
}

}  // namespace detail

/// Separable Gaussian blur with a normalized kernel of radius ceil(3 sigma)
/// and reflective borders.
inline Image gaussian_blur(const Image& img, double sigma) {
  detail::check_image(img, "gaussian_blur");
  if (sigma <= 0.0) return img.clone();
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) total += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& k : kernel) k /= total;

  const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  Image tmp(img.shape()), out(img.shape());
  for (long c = 0; c < 3; ++c) {
    const float* src = img.data() + c * h * w;
    float* mid = tmp.data() + c * h * w;
    float* dst = out.data() + c * h * w;
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) acc += kernel[k + radius] * src[y * w + detail::reflect(x + k, w)];
        mid[y * w + x] = static_cast<float>(acc);
      }
    }
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) acc += kernel[k + radius] * mid[detail::reflect(y + k, h) * w + x];
        dst[y * w + x] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

/// Adds N(0, sigma^2) noise and clamps to [0, 1].
inline Image add_gaussian_noise(const Image& img, double sigma, std::uint64_t seed) {
  detail::check_image(img, "add_gaussian_noise");
  Image out = img.clone();
  if (sigma <= 0.0) return out;
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  for (auto& v : out.mutable_values()) v = static_cast<float>(std::clamp(v + dist(rng), 0.0, 1.0));
  return out;
}

/// Pulls every channel toward its mean by `factor` (1 = identity).
inline Image compress_contrast(const Image& img, double factor) {
  detail::check_image(img, "compress_contrast");
  Image out = img.clone();
  const std::size_t plane = img.dim(1) * img.dim(2);
  for (std::size_t c = 0; c < 3; ++c) {
    float* p = out.data() + c * plane;
    double mean = 0.0;
    for (std::size_t q = 0; q < plane; ++q) mean += p[q];
    mean /= static_cast<double>(plane);
    for (std::size_t q = 0; q < plane; ++q) p[q] = static_cast<float>(mean + factor * (p[q] - mean));
  }
  return out;
}

/// Rounds intensities to `levels` evenly spaced values in [0, 1].
inline Image quantize_intensity(const Image& img, int levels) {
  detail::check_image(img, "quantize_intensity");
  if (levels < 2) throw ConfigError("quantize_intensity: need at least 2 levels");
  Image out = img.clone();
  const double steps = levels - 1;
  for (auto& v : out.mutable_values()) v = static_cast<float>(std::round(v * steps) / steps);
  return out;
}

/// Applies one distortion at a severity level in 1..5. The geometry is never
/// changed, so outputs stay registered with the input.
inline Image distort(const Image& pristine, const DistortionSpec& spec, std::uint64_t noise_seed = 0) {
  if (spec.level < 1 || spec.level > kNumLevels) {
    throw ConfigError("distort: level " + std::to_string(spec.level) + " outside 1.." + std::to_string(kNumLevels));
  }
  const auto idx = static_cast<std::size_t>(spec.level - 1);
  switch (spec.family) {
    case DistortionFamily::GaussianBlur: return gaussian_blur(pristine, kBlurSigma[idx]);
    case DistortionFamily::AdditiveGaussianNoise: return add_gaussian_noise(pristine, kNoiseSigma[idx], noise_seed);
    case DistortionFamily::ContrastCompression: return compress_contrast(pristine, kContrastFactor[idx]);
    case DistortionFamily::IntensityQuantization: return quantize_intensity(pristine, kQuantLevels[idx]);
  }
  throw ConfigError("distort: unknown family");
}

// ---------------------------------------------------------------------------
// Labels

inline constexpr double kLabelC1 = 1e-4;
inline constexpr double kLabelC2 = 9e-4;

/// Global SSIM of one channel plane (population statistics, dynamic range 1).
inline double global_ssim(std::span<const float> x, std::span<const float> y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double vx = 0, vy = 0, cxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
    cxy += (x[i] - mx) * (y[i] - my);
  }
  vx /= n;
  vy /= n;
  cxy /= n;
  return ((2 * mx * my + kLabelC1) * (2 * cxy + kLabelC2)) / ((mx * mx + my * my + kLabelC1) * (vx + vy + kLabelC2));
}

/// Pseudo-MOS: channel-averaged global SSIM against the pristine, mapped
/// affinely from [-1, 1] onto [0, 1].
inline double label_score(const Image& pristine, const Image& distorted) {
  detail::check_image(pristine, "label_score");
  if (pristine.shape() != distorted.shape()) {
    throw ShapeError("label_score: " + shape_str(pristine.shape()) + " vs " + shape_str(distorted.shape()));
  }
  const std::size_t plane = pristine.dim(1) * pristine.dim(2);
  double s = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    s += global_ssim(pristine.values().subspan(c * plane, plane), distorted.values().subspan(c * plane, plane));
  }
  return std::clamp((s / 3.0 + 1.0) / 2.0, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetParams {
  std::size_t num_scenes = 40;
  std::size_t image_size = 80;
  std::uint64_t seed = 2024;
  std::vector<DistortionFamily> families{std::begin(kAllFamilies), std::end(kAllFamilies)};
  int levels = kNumLevels;
};

inline std::uint64_t noise_seed_for(std::uint64_t seed, std::size_t scene_id, const DistortionSpec& d) {
  return derive_seed(derive_seed(seed, scene_id), static_cast<std::uint64_t>(d.family) * 16 + d.level);
}

/// D scenes, each with families x levels labeled distortions of its pristine.
inline Dataset build_dataset(const DatasetParams& p) {
  if (p.num_scenes < 2) throw ConfigError("build_dataset: need at least 2 scenes");
  if (p.levels < 1 || p.levels > kNumLevels) throw ConfigError("build_dataset: levels must be in 1..5");
  if (p.families.empty()) throw ConfigError("build_dataset: no distortion families");
  Dataset ds;
  ds.image_size = p.image_size;
  for (std::size_t id = 0; id < p.num_scenes; ++id) {
    Scene scene;
    scene.scene_id = id;
    scene.pristine = generate_scene({id, p.seed, p.image_size});
    for (auto family : p.families) {
      for (int level = 1; level <= p.levels; ++level) {
        const DistortionSpec d{family, level};
        Image img = distort(scene.pristine, d, noise_seed_for(p.seed, id, d));
        const auto score = static_cast<float>(label_score(scene.pristine, img));
        scene.images.push_back({std::move(img), id, d, score});
      }
    }
    ds.scenes.push_back(std::move(scene));
  }
  return ds;
}

struct SceneSplit {
  Dataset train;
  Dataset test;
};

/// Scene-disjoint split: round(train_fraction * D) scenes, chosen by seed,
/// go to training. Image storage is shared with the source dataset.
inline SceneSplit split_scenes(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("split_scenes: train_fraction must be in (0, 1)");
  std::vector<std::size_t> order(ds.scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5B117));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ds.scenes.size())));
  if (n_train == 0 || n_train >= ds.scenes.size()) throw ConfigError("split_scenes: split leaves an empty side");
  std::sort(order.begin(), order.begin() + static_cast<long>(n_train));
  std::sort(order.begin() + static_cast<long>(n_train), order.end());
  SceneSplit split;
  split.train.image_size = split.test.image_size = ds.image_size;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_train ? split.train : split.test).scenes.push_back(ds.scenes[order[k]]);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Sets, batches, augmentation

struct AugmentTransform {
  std::size_t top = 0;
  std::size_t left = 0;
  bool flip = false;
  bool operator==(const AugmentTransform&) const = default;
};

/// Crops (and optionally mirrors horizontally) every image of a set with the
/// same transform, stacking them into [N, 3, crop, crop].
inline Tensor<float> apply_transform(const std::vector<const Image*>& images, std::size_t crop,
                                     const AugmentTransform& t) {
  if (images.empty()) throw ShapeError("apply_transform: empty set");
  const Shape& s0 = images.front()->shape();
  for (const Image* im : images) {
    detail::check_image(*im, "apply_transform");
    if (im->shape() != s0) throw ShapeError("apply_transform: images in a set differ in shape");
  }
  const std::size_t h = s0[1], w = s0[2];
  if (crop > h || crop > w) throw ShapeError("aligned_augment: crop " + std::to_string(crop) + " larger than image " + shape_str(s0));
  if (t.top + crop > h || t.left + crop > w) throw ShapeError("apply_transform: crop window outside image");
  Tensor<float> out({images.size(), 3, crop, crop});
  float* dst = out.data();
  for (const Image* im : images) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < crop; ++y) {
        const float* row = im->data() + (c * h + t.top + y) * w + t.left;
        for (std::size_t x = 0; x < crop; ++x) *dst++ = t.flip ? row[crop - 1 - x] : row[x];
      }
    }
  }
  return out;
}

/// One crop offset and one flip decision per set.
inline AugmentTransform draw_transform(std::size_t image_size, std::size_t crop, Rng& rng) {
  if (crop > image_size) throw ShapeError("aligned_augment: crop " + std::to_string(crop) + " larger than image " + std::to_string(image_size));
  std::uniform_int_distribution<std::size_t> off(0, image_size - crop);
  AugmentTransform t;
  t.top = off(rng);
  t.left = off(rng);
  t.flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  return t;
}

inline AugmentTransform center_transform(std::size_t image_size, std::size_t crop) {
  if (crop > image_size) throw ShapeError("center crop larger than image");
  return {(image_size - crop) / 2, (image_size - crop) / 2, false};
}

struct AugmentedSet {
  Tensor<float> images;  // [N, 3, crop, crop]
  AugmentTransform transform;
};

inline AugmentedSet aligned_augment(const std::vector<const Image*>& images, std::size_t crop, Rng& rng) {
  if (images.empty()) throw ShapeError("aligned_augment: empty set");
  const auto t = draw_transform(std::min(images.front()->dim(1), images.front()->dim(2)), crop, rng);
  return {apply_transform(images, crop, t), t};
}

struct SetRef {
  std::size_t scene_index = 0;           // into Dataset::scenes
  std::vector<std::size_t> image_index;  // into Scene::images
};

struct SetBatch {
  std::vector<SetRef> refs;
  std::vector<Tensor<float>> sets;  // B x [N, 3, crop, crop]
  std::vector<AugmentTransform> transforms;
  Tensor<float> targets;  // [B * N], set-major
};

/// B sets of N distinct images, each set drawn from one randomly chosen scene.
inline std::vector<SetRef> sample_sets(const Dataset& ds, std::size_t sets, std::size_t set_size, Rng& rng) {
  if (ds.scenes.empty()) throw ConfigError("sample_set_batch: empty dataset");
  if (set_size == 0) throw ConfigError("sample_set_batch: set size must be positive");
  std::vector<SetRef> refs;
  std::uniform_int_distribution<std::size_t> pick_scene(0, ds.scenes.size() - 1);
  for (std::size_t b = 0; b < sets; ++b) {
    SetRef r;
    r.scene_index = pick_scene(rng);
    const std::size_t avail = ds.scenes[r.scene_index].images.size();
    if (set_size > avail) {
      throw ConfigError("sample_set_batch: set size " + std::to_string(set_size) + " exceeds scene size " + std::to_string(avail));
    }
    std::vector<std::size_t> idx(avail);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates: first set_size entries are a uniform sample.
    for (std::size_t k = 0; k < set_size; ++k) {
      std::uniform_int_distribution<std::size_t> d(k, avail - 1);
      std::swap(idx[k], idx[d(rng)]);
    }
    idx.resize(set_size);
    r.image_index = std::move(idx);
    refs.push_back(std::move(r));
  }
  return refs;
}

inline SetBatch sample_set_batch(const Dataset& ds, std::size_t sets, std::size_t set_size, std::size_t crop,
                                 Rng& rng) {
  SetBatch batch;
  batch.refs = sample_sets(ds, sets, set_size, rng);
  batch.targets = Tensor<float>({sets * set_size});
  std::size_t t = 0;
  for (const auto& r : batch.refs) {
    const Scene& scene = ds.scenes[r.scene_index];
    std::vector<const Image*> imgs;
    for (std::size_t i : r.image_index) {
      imgs.push_back(&scene.images[i].pixels);
      batch.targets[t++] = scene.images[i].score;
    }
    auto aug = aligned_augment(imgs, crop, rng);
    batch.sets.push_back(std::move(aug.images));
    batch.transforms.push_back(aug.transform);
  }
  return batch;
}

}  // namespace priq::synth
