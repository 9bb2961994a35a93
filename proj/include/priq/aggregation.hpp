#pragma once

// Comparison of each image against the pseudo-reference, pyramid
// concatenation and the regression head, plus the full model wiring.

#include <numeric>
#include <string>
#include <vector>

#include "priq/backbone.hpp"
#include "priq/error.hpp"
#include "priq/ops.hpp"
#include "priq/pseudo_reference.hpp"
#include "priq/random.hpp"
#include "priq/tensor.hpp"

namespace priq {

struct SsimConstants {
  double c1 = 1e-4;
  double c2 = 9e-4;

  void validate() const {
    if (!(c1 > 0.0) || !(c2 > 0.0)) throw ConfigError("ssim: constants must be strictly positive");
  }
};

/// Global SSIM per channel between `x` ([C,H,W] or [N,C,H,W]) and `ref`
/// ([C,H,W]), using population statistics over all H*W positions.
/// Returns [C] or [N,C].
template <typename T>
Tensor<T> channel_ssim(const Tensor<T>& x, const Tensor<T>& ref, SsimConstants k = {}) {
  k.validate();
  if (ref.rank() != 3) throw ShapeError("channel_ssim: reference must be [C,H,W], got " + shape_str(ref.shape()));
  const bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3) throw ShapeError("channel_ssim: input must be [C,H,W] or [N,C,H,W], got " + shape_str(x.shape()));
  const std::size_t off = batched ? 1 : 0;
  for (std::size_t a = 0; a < 3; ++a) {
    if (x.dim(a + off) != ref.dim(a)) {
      throw ShapeError("channel_ssim: dimension " + std::to_string(a) + " differs: " +
                       shape_str(x.shape()) + " vs " + shape_str(ref.shape()));
    }
  }
  const std::size_t n_img = batched ? x.dim(0) : 1;
  const std::size_t channels = ref.dim(0);
  const std::size_t plane = ref.dim(1) * ref.dim(2);
  if (plane < 2) throw ShapeError("channel_ssim: needs at least 2 spatial positions, got " + std::to_string(plane));

  const T c1 = static_cast<T>(k.c1), c2 = static_cast<T>(k.c2);
  const T inv = T(1) / static_cast<T>(plane);
  // Per (image, channel): mu_x, mu_y, B1 = mu_x^2 + mu_y^2 + c1, B2, A1, A2.
  struct Stats {
    T mx, my, a1, a2, b1, b2;
  };
  std::vector<Stats> stats(n_img * channels);
  Tensor<T> out(batched ? Shape{n_img, channels} : Shape{channels});
  for (std::size_t n = 0; n < n_img; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T* xp = x.data() + (n * channels + c) * plane;
      const T* yp = ref.data() + c * plane;
      T sx = 0, sy = 0;
      for (std::size_t q = 0; q < plane; ++q) {
        sx += xp[q];
        sy += yp[q];
      }
      const T mx = sx * inv, my = sy * inv;
      T vx = 0, vy = 0, cxy = 0;
      for (std::size_t q = 0; q < plane; ++q) {
        const T dx = xp[q] - mx, dy = yp[q] - my;
        vx += dx * dx;
        vy += dy * dy;
        cxy += dx * dy;
      }
      vx *= inv;
      vy *= inv;
      cxy *= inv;
      Stats st{mx, my, T(2) * mx * my + c1, T(2) * cxy + c2, mx * mx + my * my + c1, vx + vy + c2};
      stats[n * channels + c] = st;
      out[n * channels + c] = (st.a1 * st.a2) / (st.b1 * st.b2);
    }
  }
  detail::check_finite(out, "channel_ssim");

  if (auto* tape = detail::recording_tape<T>(x, ref)) {
    auto xn = x.node(), rn = ref.node(), yn = out.node();
    tape->record("channel_ssim", yn, [=]() {
      const auto& gy = yn->ensure_grad();
      T* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
      T* gr = rn->requires_grad ? rn->ensure_grad().data() : nullptr;
      const T two_inv = T(2) * inv;
      for (std::size_t n = 0; n < n_img; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t idx = n * channels + c;
          const Stats& st = stats[idx];
          const T g = gy[idx];
          if (g == T(0)) continue;
          const T s = yn->values[idx];
          const T b12 = st.b1 * st.b2;
          // dS/dx_q = 2/P [ mu_y A2/(B1B2) + (y_q - mu_y) A1/(B1B2) - S mu_x/B1 - S (x_q - mu_x)/B2 ]
          const T cx0 = st.my * st.a2 / b12 - s * st.mx / st.b1;
          const T cy0 = st.mx * st.a2 / b12 - s * st.my / st.b1;
          const T cross = st.a1 / b12;
          const T self = s / st.b2;
          const T* xp = xn->values.data() + idx * plane;
          const T* yp = rn->values.data() + c * plane;
          for (std::size_t q = 0; q < plane; ++q) {
            const T dx = xp[q] - st.mx, dy = yp[q] - st.my;
            if (gx) gx[idx * plane + q] += g * two_inv * (cx0 + cross * dy - self * dx);
            if (gr) gr[c * plane + q] += g * two_inv * (cy0 + cross * dx - self * dy);
          }
        }
      }
    });
  }
  return out;
}

/// [GAP(x) ; GAP(ref)] for x [C,H,W] -> [2C], or x [N,C,H,W] -> [N,2C].
template <typename T>
Tensor<T> concat_aggregation(const Tensor<T>& x, const Tensor<T>& ref) {
  if (ref.rank() != 3) throw ShapeError("concat_aggregation: reference must be [C,H,W], got " + shape_str(ref.shape()));
  const bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3) throw ShapeError("concat_aggregation: input must be [C,H,W] or [N,C,H,W]");
  const std::size_t off = batched ? 1 : 0;
  for (std::size_t a = 0; a < 3; ++a) {
    if (x.dim(a + off) != ref.dim(a)) {
      throw ShapeError("concat_aggregation: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(ref.shape()));
    }
  }
  const Tensor<T> gap_ref = ops::mean(ref, {1, 2});  // [C]
  if (!batched) return ops::concat<T>({ops::mean(x, {1, 2}), gap_ref}, 0);
  const Tensor<T> gap_x = ops::mean(x, {2, 3});  // [N,C]
  return ops::concat<T>({gap_x, ops::broadcast_to(gap_ref, gap_x.shape())}, 1);
}

template <typename T>
struct RegressionHead {
  Tensor<T> weight;  // [1, F]
  Tensor<T> bias;    // [1]

  static RegressionHead init(std::size_t features, Rng& rng) {
    RegressionHead h;
    h.weight = Tensor<T>({1, features}, true);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(features)));
    for (auto& v : h.weight.mutable_values()) v = static_cast<T>(dist(rng));
    h.bias = Tensor<T>::zeros({1}, true);
    return h;
  }

  // [N, F] -> [N]
  Tensor<T> operator()(const Tensor<T>& features) const {
    return ops::reshape(ops::linear(features, weight, bias), {features.dim(0)});
  }
};

/// Architecture switches: the three ablation toggles plus the weighting variant.
struct ModelConfig {
  PRVariant variant = PRVariant::LocationWeight;
  bool pseudo_ref = true;
  bool ssim = true;
  bool pyramid = true;
  SsimConstants ssim_constants;
  BackboneConfig backbone;

  void validate() const {
    backbone.validate();
    ssim_constants.validate();
    // The baseline has neither aggregation nor pyramid.
    if (!pseudo_ref && (ssim || pyramid)) {
      throw ConfigError("model: pseudo_ref=false requires ssim=false and pyramid=false");
    }
  }

  // Stages that feed the head.
  std::vector<std::size_t> used_stages() const {
    if (!pseudo_ref || !pyramid) return {kNumTaps - 1};
    std::vector<std::size_t> s(kNumTaps);
    std::iota(s.begin(), s.end(), std::size_t{0});
    return s;
  }

  std::size_t head_features() const {
    std::size_t f = 0;
    for (std::size_t s : used_stages()) f += backbone.stage_channels[s];
    if (pseudo_ref && !ssim) f *= 2;
    return f;
  }

  std::string toggles() const {
    return std::string("pr") + (pseudo_ref ? "1" : "0") + "-ssim" + (ssim ? "1" : "0") + "-pyr" +
           (pyramid ? "1" : "0");
  }
};

template <typename T>
struct PriqModel {
  ModelConfig config;
  Backbone<T> backbone;
  std::vector<PRParams<T>> pseudo_ref;  // parallel to config.used_stages(); empty without pseudo_ref
  RegressionHead<T> head;

  static PriqModel build(const ModelConfig& config) {
    config.validate();
    PriqModel m;
    m.config = config;
    m.backbone = Backbone<T>::build(config.backbone);
    if (config.pseudo_ref) {
      for (std::size_t s : config.used_stages()) {
        m.pseudo_ref.push_back(PRParams<T>::init(config.variant, config.backbone.stage_channels[s]));
      }
    }
    Rng rng(derive_seed(config.backbone.seed, 0x4EAD));
    m.head = RegressionHead<T>::init(config.head_features(), rng);
    return m;
  }

  std::vector<NamedTensor<T>> named_parameters() const {
    auto out = backbone.named_parameters();
    const auto stages = config.used_stages();
    for (std::size_t k = 0; k < pseudo_ref.size(); ++k) {
      for (auto& p : pseudo_ref[k].named_parameters("pseudo_ref.stage" + std::to_string(stages[k]))) {
        out.push_back(std::move(p));
      }
    }
    out.push_back({"head.weight", head.weight});
    out.push_back({"head.bias", head.bias});
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& p : named_parameters()) out.push_back(p.tensor);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : named_parameters()) n += p.tensor.numel();
    return n;
  }
};

/// Per-image pyramid feature vectors [N, F] of the joint model: every image
/// is compared against the same per-stage pseudo-reference.
template <typename T>
Tensor<T> pyramid_features(const PriqModel<T>& model, const Tensor<T>& images) {
  if (!model.config.pseudo_ref) throw ConfigError("pyramid_features: model has no pseudo-reference path");
  const auto stacks = model.backbone.forward_set(images);
  const auto stages = model.config.used_stages();
  std::vector<FeatureStack<T>> used;
  for (std::size_t s : stages) used.push_back(stacks[s]);
  const auto refs = pseudo_reference_all_stages(model.pseudo_ref, used);
  std::vector<Tensor<T>> parts;
  for (std::size_t k = 0; k < used.size(); ++k) {
    parts.push_back(model.config.ssim ? channel_ssim(used[k].data, refs[k], model.config.ssim_constants)
                                      : concat_aggregation(used[k].data, refs[k]));
  }
  return parts.size() == 1 ? parts.front() : ops::concat(parts, 1);
}

/// Joint scores for one registered set [N,3,H,W] -> [N].
template <typename T>
Tensor<T> predict_set(const PriqModel<T>& model, const Tensor<T>& images) {
  return model.head(pyramid_features(model, images));
}

/// Independent scores: GAP of the deepest tap, then the head.
template <typename T>
Tensor<T> predict_baseline(const PriqModel<T>& model, const Tensor<T>& images) {
  if (model.config.pseudo_ref) throw ConfigError("predict_baseline: model is configured with a pseudo-reference");
  const auto stacks = model.backbone.forward_set(images);
  return model.head(ops::mean(stacks.back().data, {2, 3}));
}

/// Dispatches on the pseudo-reference toggle.
template <typename T>
Tensor<T> predict(const PriqModel<T>& model, const Tensor<T>& images) {
  return model.config.pseudo_ref ? predict_set(model, images) : predict_baseline(model, images);
}

}  // namespace priq
