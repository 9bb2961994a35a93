#pragma once

// Five-tap convolutional pyramid: a stem convolution followed by four
// residual stages. Taps sit after the stem activation and after the output
// activation of every stage.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "priq/error.hpp"
#include "priq/ops.hpp"
#include "priq/random.hpp"
#include "priq/tensor.hpp"

namespace priq {

inline constexpr std::size_t kNumTaps = 5;

struct BackboneConfig {
  std::size_t stem_kernel = 7;
  std::vector<std::size_t> stage_channels{8, 16, 32, 48, 64};  // one per tap
  std::vector<std::size_t> stage_blocks{1, 1, 1, 1};           // residual stages 1..4
  std::vector<std::size_t> downsample_strides{2, 2, 2, 2, 2};  // stem, then stages 1..4
  std::uint64_t seed = 0;

  void validate() const {
    if (stage_channels.size() != kNumTaps) {
      throw ConfigError("backbone: stage_channels needs " + std::to_string(kNumTaps) +
                        " entries, got " + std::to_string(stage_channels.size()));
    }
    if (stage_blocks.size() != kNumTaps - 1) {
      throw ConfigError("backbone: stage_blocks needs " + std::to_string(kNumTaps - 1) +
                        " entries, got " + std::to_string(stage_blocks.size()));
    }
    if (downsample_strides.size() != kNumTaps) {
      throw ConfigError("backbone: downsample_strides needs " + std::to_string(kNumTaps) +
                        " entries, got " + std::to_string(downsample_strides.size()));
    }
    if (stem_kernel == 0 || stem_kernel % 2 == 0) throw ConfigError("backbone: stem_kernel must be odd");
    for (std::size_t c : stage_channels) {
      if (c < 1) throw ConfigError("backbone: every stage needs at least one channel");
    }
    for (std::size_t b : stage_blocks) {
      if (b < 1) throw ConfigError("backbone: every stage needs at least one block");
    }
    if (downsample_strides[0] < 1) throw ConfigError("backbone: stem stride must be positive");
    for (std::size_t s = 1; s < kNumTaps; ++s) {
      // Taps must shrink strictly from one stage to the next.
      if (downsample_strides[s] < 2) throw ConfigError("backbone: stage strides must be at least 2");
    }
  }
};

template <typename T>
struct FeatureStack {
  std::size_t stage_index = 0;
  Tensor<T> data;  // [N, C, H, W]
};

struct TapShape {
  std::size_t channels, height, width;
  bool operator==(const TapShape&) const = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct ConvLayer {
  Tensor<T> kernel;  // [C_out, C_in, k, k]
  Tensor<T> bias;    // [C_out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::conv2d(x, kernel, bias, stride, padding); }

  static ConvLayer make(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, Rng& rng) {
    return ConvLayer{he_normal<T>({cout, cin, k, k}, cin * k * k, rng), Tensor<T>::zeros({cout}, true),
                     stride, k / 2};
  }
};

template <typename T>
struct ResidualBlock {
  ConvLayer<T> conv1;
  ConvLayer<T> conv2;
  std::optional<ConvLayer<T>> projection;  // 1x1 when stride or width changes

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> y = ops::relu(conv1(x));
    y = conv2(y);
    const Tensor<T> skip = projection ? (*projection)(x) : x;
    return ops::relu(ops::add(y, skip));
  }
};

inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride) {
  const std::size_t pad = kernel / 2;
  if (in + 2 * pad < kernel) return 0;
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
class Backbone {
 public:
  static Backbone build(const BackboneConfig& config) {
    config.validate();
    Backbone b;
    b.config_ = config;
    Rng rng(derive_seed(config.seed, 0xB0B));
    const auto& ch = config.stage_channels;
    b.stem_ = ConvLayer<T>::make(3, ch[0], config.stem_kernel, config.downsample_strides[0], rng);
    for (std::size_t s = 1; s < kNumTaps; ++s) {
      std::vector<ResidualBlock<T>> blocks;
      for (std::size_t k = 0; k < config.stage_blocks[s - 1]; ++k) {
        const std::size_t cin = k == 0 ? ch[s - 1] : ch[s];
        const std::size_t stride = k == 0 ? config.downsample_strides[s] : 1;
        ResidualBlock<T> block{ConvLayer<T>::make(cin, ch[s], 3, stride, rng),
                               ConvLayer<T>::make(ch[s], ch[s], 3, 1, rng), std::nullopt};
        if (stride != 1 || cin != ch[s]) block.projection = ConvLayer<T>::make(cin, ch[s], 1, stride, rng);
        blocks.push_back(std::move(block));
      }
      b.stages_.push_back(std::move(blocks));
    }
    return b;
  }

  const BackboneConfig& config() const { return config_; }

  /// Tap shapes for an input of the given spatial size; throws when the
  /// input is too small for five strictly shrinking taps.
  std::vector<TapShape> tap_shapes(std::size_t height, std::size_t width) const {
    std::vector<TapShape> taps;
    std::size_t h = conv_output_extent(height, config_.stem_kernel, config_.downsample_strides[0]);
    std::size_t w = conv_output_extent(width, config_.stem_kernel, config_.downsample_strides[0]);
    taps.push_back({config_.stage_channels[0], h, w});
    for (std::size_t s = 1; s < kNumTaps; ++s) {
      h = conv_output_extent(h, 3, config_.downsample_strides[s]);
      w = conv_output_extent(w, 3, config_.downsample_strides[s]);
      taps.push_back({config_.stage_channels[s], h, w});
    }
    for (std::size_t s = 0; s < kNumTaps; ++s) {
      const bool shrinks = s == 0 || (taps[s].height < taps[s - 1].height && taps[s].width < taps[s - 1].width);
      // Each tap needs at least two positions for spatial statistics.
      if (taps[s].height * taps[s].width < 2 || !shrinks) {
        throw ShapeError("backbone: input " + std::to_string(height) + "x" + std::to_string(width) +
                         " is undersized; tap " + std::to_string(s) + " would be " +
                         std::to_string(taps[s].height) + "x" + std::to_string(taps[s].width));
      }
    }
    return taps;
  }

  /// Runs every image of the set through the network independently and
  /// returns the activation stacks at the five taps.
  std::vector<FeatureStack<T>> forward_set(const Tensor<T>& images) const {
    if (images.rank() != 4 || images.dim(1) != 3) {
      throw ShapeError("backbone: images must be [N,3,H,W], got " + shape_str(images.shape()));
    }
    if (images.dim(0) == 0) throw ShapeError("backbone: empty image set");
    tap_shapes(images.dim(2), images.dim(3));
    std::vector<FeatureStack<T>> stacks;
    Tensor<T> x = ops::relu(stem_(images));
    stacks.push_back({0, x});
    for (std::size_t s = 1; s < kNumTaps; ++s) {
      for (const auto& block : stages_[s - 1]) x = block(x);
      stacks.push_back({s, x});
    }
    return stacks;
  }

  std::vector<NamedTensor<T>> named_parameters() const {
    std::vector<NamedTensor<T>> out;
    out.push_back({"backbone.stem.kernel", stem_.kernel});
    out.push_back({"backbone.stem.bias", stem_.bias});
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (std::size_t k = 0; k < stages_[s].size(); ++k) {
        const std::string p = "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(k) + ".";
        const auto& b = stages_[s][k];
        out.push_back({p + "conv1.kernel", b.conv1.kernel});
        out.push_back({p + "conv1.bias", b.conv1.bias});
        out.push_back({p + "conv2.kernel", b.conv2.kernel});
        out.push_back({p + "conv2.bias", b.conv2.bias});
        if (b.projection) {
          out.push_back({p + "projection.kernel", b.projection->kernel});
          out.push_back({p + "projection.bias", b.projection->bias});
        }
      }
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : named_parameters()) n += p.tensor.numel();
    return n;
  }

 private:
  BackboneConfig config_;
  ConvLayer<T> stem_;
  std::vector<std::vector<ResidualBlock<T>>> stages_;
};

template <typename T>
Backbone<T> build_backbone(const BackboneConfig& config) {
  return Backbone<T>::build(config);
}

}  // namespace priq
