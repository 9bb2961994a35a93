#pragma once

// Pseudo-reference: a convex combination over the set axis of the feature
// maps of N registered images, with softmax weights whose granularity
// depends on the variant.

#include <string>
#include <string_view>
#include <vector>

#include "priq/backbone.hpp"
#include "priq/error.hpp"
#include "priq/ops.hpp"
#include "priq/tensor.hpp"

namespace priq {

enum class PRVariant {
  Mean,            // uniform 1/N
  ScalarWeight,    // one weight per image from GAP + linear
  ChannelWeight,   // one weight per image and channel from GAP + linear
  LocationWeight,  // one weight per image and location from a 1x1 conv
  FullWeight,      // one weight per image, channel and location
};

inline constexpr PRVariant kAllVariants[] = {PRVariant::Mean, PRVariant::ScalarWeight,
                                             PRVariant::ChannelWeight, PRVariant::LocationWeight,
                                             PRVariant::FullWeight};

inline std::string_view to_string(PRVariant v) {
  switch (v) {
    case PRVariant::Mean: return "mean";
    case PRVariant::ScalarWeight: return "scalar";
    case PRVariant::ChannelWeight: return "channel";
    case PRVariant::LocationWeight: return "location";
    case PRVariant::FullWeight: return "full";
  }
  return "?";
}

inline PRVariant parse_variant(std::string_view s) {
  if (s == "mean") return PRVariant::Mean;
  if (s == "scalar") return PRVariant::ScalarWeight;
  if (s == "channel") return PRVariant::ChannelWeight;
  if (s == "location") return PRVariant::LocationWeight;
  if (s == "full") return PRVariant::FullWeight;
  throw ConfigError("unknown pseudo-reference variant '" + std::string(s) + "'");
}

/// Learnable parameters of one stage's weighting sub-network.
///
/// ScalarWeight/ChannelWeight hold a linear layer [out, C] applied to the
/// per-image GAP; LocationWeight/FullWeight hold a 1x1 convolution with one
/// or C kernels. Mean has no parameters. All start at zero, which makes every
/// weighted variant begin as the plain mean.
template <typename T>
struct PRParams {
  PRVariant variant = PRVariant::LocationWeight;
  std::size_t channels = 0;
  Tensor<T> weight;
  Tensor<T> bias;

  static PRParams init(PRVariant variant, std::size_t channels) {
    PRParams p{variant, channels, {}, {}};
    switch (variant) {
      case PRVariant::Mean:
        break;
      case PRVariant::ScalarWeight:
        p.weight = Tensor<T>::zeros({1, channels}, true);
        p.bias = Tensor<T>::zeros({1}, true);
        break;
      case PRVariant::ChannelWeight:
        p.weight = Tensor<T>::zeros({channels, channels}, true);
        p.bias = Tensor<T>::zeros({channels}, true);
        break;
      case PRVariant::LocationWeight:
        p.weight = Tensor<T>::zeros({1, channels, 1, 1}, true);
        p.bias = Tensor<T>::zeros({1}, true);
        break;
      case PRVariant::FullWeight:
        p.weight = Tensor<T>::zeros({channels, channels, 1, 1}, true);
        p.bias = Tensor<T>::zeros({channels}, true);
        break;
    }
    return p;
  }

  bool has_parameters() const { return variant != PRVariant::Mean; }

  std::vector<NamedTensor<T>> named_parameters(const std::string& prefix) const {
    if (!has_parameters()) return {};
    return {{prefix + ".weight", weight}, {prefix + ".bias", bias}};
  }
};

/// Softmax weights over the set axis. Shapes: Mean none; ScalarWeight [N];
/// ChannelWeight [N,C]; LocationWeight [N,H,W]; FullWeight [N,C,H,W].
template <typename T>
struct WeightField {
  PRVariant variant = PRVariant::Mean;
  std::size_t set_size = 0;
  Tensor<T> data;  // undefined for Mean

  // Shape that broadcasts against an [N,C,H,W] stack.
  Shape broadcast_shape() const {
    const Shape& s = data.shape();
    switch (variant) {
      case PRVariant::ScalarWeight: return {s[0], 1, 1, 1};
      case PRVariant::ChannelWeight: return {s[0], s[1], 1, 1};
      case PRVariant::LocationWeight: return {s[0], 1, s[1], s[2]};
      default: return s;
    }
  }

  /// Weights expanded to the full [N,C,H,W] stack shape.
  Tensor<T> dense(const Shape& stack_shape) const {
    if (variant == PRVariant::Mean) {
      return Tensor<T>::full(stack_shape, T(1) / static_cast<T>(stack_shape.at(0)));
    }
    return ops::broadcast_to(ops::reshape(data, broadcast_shape()), stack_shape);
  }
};

namespace detail {

template <typename T>
void check_stack(const FeatureStack<T>& z, const char* op) {
  if (z.data.rank() != 4) throw ShapeError(std::string(op) + ": feature stack must be [N,C,H,W], got " + shape_str(z.data.shape()));
  if (z.data.dim(0) == 0) throw ShapeError(std::string(op) + ": empty set");
}

}  // namespace detail

/// Attention weights for one stage; softmax runs strictly over the set axis.
/// The 1x1 convolution and the GAP-linear layer are shared across images.
template <typename T>
WeightField<T> compute_weights(const PRParams<T>& params, const FeatureStack<T>& z) {
  detail::check_stack(z, "compute_weights");
  const std::size_t n = z.data.dim(0), c = z.data.dim(1), h = z.data.dim(2), w = z.data.dim(3);
  if (params.has_parameters() && params.channels != c) {
    throw ShapeError("compute_weights: parameters expect " + std::to_string(params.channels) +
                     " channels, stack has " + std::to_string(c));
  }
  WeightField<T> field{params.variant, n, {}};
  switch (params.variant) {
    case PRVariant::Mean:
      break;
    case PRVariant::ScalarWeight: {
      const auto logits = ops::linear(ops::mean(z.data, {2, 3}), params.weight, params.bias);  // [N,1]
      field.data = ops::reshape(ops::softmax_along(logits, 0), {n});
      break;
    }
    case PRVariant::ChannelWeight: {
      const auto logits = ops::linear(ops::mean(z.data, {2, 3}), params.weight, params.bias);  // [N,C]
      field.data = ops::softmax_along(logits, 0);
      break;
    }
    case PRVariant::LocationWeight: {
      const auto logits = ops::conv2d(z.data, params.weight, params.bias);  // [N,1,H,W]
      field.data = ops::reshape(ops::softmax_along(logits, 0), {n, h, w});
      break;
    }
    case PRVariant::FullWeight: {
      const auto logits = ops::conv2d(z.data, params.weight, params.bias);  // [N,C,H,W]
      field.data = ops::softmax_along(logits, 0);
      break;
    }
  }
  return field;
}

/// z̄[c,h,w] = sum_i w_i(slice) * z[i,c,h,w]; weights broadcast over the
/// dimensions they lack.
template <typename T>
Tensor<T> pseudo_reference(const FeatureStack<T>& z, const WeightField<T>& w) {
  detail::check_stack(z, "pseudo_reference");
  const Shape& s = z.data.shape();
  if (w.set_size != s[0]) {
    throw ShapeError("pseudo_reference: weights cover " + std::to_string(w.set_size) +
                     " images, stack has " + std::to_string(s[0]));
  }
  if (w.variant == PRVariant::Mean) return ops::mean(z.data, {0});
  const Shape bs = w.broadcast_shape();
  for (std::size_t a = 0; a < 4; ++a) {
    if (bs[a] != 1 && bs[a] != s[a]) {
      throw ShapeError("pseudo_reference: weight field " + shape_str(w.data.shape()) +
                       " incompatible with stack " + shape_str(s));
    }
  }
  return ops::sum(ops::mul(z.data, ops::reshape(w.data, bs)), {0});
}

/// One pseudo-reference per stage, shared by every image of the set.
template <typename T>
std::vector<Tensor<T>> pseudo_reference_all_stages(const std::vector<PRParams<T>>& params,
                                                   const std::vector<FeatureStack<T>>& stacks) {
  if (params.size() != stacks.size()) {
    throw ShapeError("pseudo_reference_all_stages: " + std::to_string(params.size()) +
                     " parameter sets for " + std::to_string(stacks.size()) + " stacks");
  }
  std::vector<Tensor<T>> refs;
  for (std::size_t s = 0; s < stacks.size(); ++s) {
    detail::check_stack(stacks[s], "pseudo_reference_all_stages");
    if (stacks[s].data.dim(0) != stacks[0].data.dim(0)) {
      throw ShapeError("pseudo_reference_all_stages: inconsistent set size across stages");
    }
    refs.push_back(pseudo_reference(stacks[s], compute_weights(params[s], stacks[s])));
  }
  return refs;
}

}  // namespace priq
