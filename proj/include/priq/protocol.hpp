#pragma once

// Test-time protocol: per-scene partition of the test images into sets of
// size T, joint scoring of each set, and correlation over the pooled
// predictions of the whole test split.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "priq/aggregation.hpp"
#include "priq/error.hpp"
#include "priq/metrics.hpp"
#include "priq/random.hpp"
#include "priq/synth.hpp"

namespace priq {

struct PartitionSet {
  std::size_t scene_index = 0;
  std::vector<std::size_t> image_index;
  bool operator==(const PartitionSet&) const = default;
};

struct Partition {
  std::size_t set_size = 0;  // T
  std::uint64_t seed = 0;
  std::vector<PartitionSet> sets;
};

/// Shuffles every scene's images with a seed derived from (seed, scene_id)
/// and chunks them into sets of T; a shorter remainder forms its own set.
/// Sets never mix scenes, and the assignment depends on nothing but the
/// dataset and the seed.
inline Partition partition_test(const synth::Dataset& test, std::size_t T, std::uint64_t seed) {
  if (T < 1) throw ConfigError("partition_test: T must be at least 1");
  if (test.num_images() == 0) throw ConfigError("partition_test: empty test set");
  Partition p{T, seed, {}};
  for (std::size_t s = 0; s < test.scenes.size(); ++s) {
    const std::size_t n = test.scenes[s].images.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, test.scenes[s].scene_id));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += T) {
      const std::size_t end = std::min(n, start + T);
      p.sets.push_back({s, std::vector<std::size_t>(order.begin() + static_cast<long>(start),
                                                    order.begin() + static_cast<long>(end))});
    }
  }
  return p;
}

/// Throws unless every test image appears in exactly one set.
inline void check_partition_totality(const synth::Dataset& test, const Partition& p) {
  std::vector<std::vector<int>> seen(test.scenes.size());
  for (std::size_t s = 0; s < test.scenes.size(); ++s) seen[s].assign(test.scenes[s].images.size(), 0);
  for (const auto& set : p.sets) {
    if (set.scene_index >= seen.size()) throw Error("partition: scene index out of range");
    if (set.image_index.empty() || set.image_index.size() > p.set_size) throw Error("partition: bad set size");
    for (std::size_t i : set.image_index) {
      if (i >= seen[set.scene_index].size()) throw Error("partition: image index out of range");
      ++seen[set.scene_index][i];
    }
  }
  for (const auto& scene : seen) {
    for (int count : scene) {
      if (count != 1) throw Error("partition: an image appears " + std::to_string(count) + " times");
    }
  }
}

struct EvalResult {
  double lcc = 0.0;
  double srocc = 0.0;
  std::vector<double> predictions;
  std::vector<double> labels;
};

/// Scores one set: center-cropped images [n,3,crop,crop] plus the members.
using SetPredictor =
    std::function<std::vector<double>(const Tensor<float>&, std::span<const synth::LabeledImage* const>)>;

inline EvalResult evaluate_with(const SetPredictor& predictor, const synth::Dataset& test, std::size_t T,
                                std::uint64_t seed, std::size_t crop) {
  const Partition part = partition_test(test, T, seed);
  check_partition_totality(test, part);
  const auto transform = synth::center_transform(test.image_size, crop);
  EvalResult r;
  for (const auto& set : part.sets) {
    const auto& scene = test.scenes[set.scene_index];
    std::vector<const synth::Image*> imgs;
    std::vector<const synth::LabeledImage*> members;
    for (std::size_t i : set.image_index) {
      imgs.push_back(&scene.images[i].pixels);
      members.push_back(&scene.images[i]);
    }
    const auto scores = predictor(synth::apply_transform(imgs, crop, transform), members);
    if (scores.size() != members.size()) throw ShapeError("evaluate: predictor returned the wrong number of scores");
    for (std::size_t k = 0; k < members.size(); ++k) {
      r.predictions.push_back(scores[k]);
      r.labels.push_back(members[k]->score);
    }
  }
  r.lcc = pearson(r.predictions, r.labels);
  r.srocc = spearman(r.predictions, r.labels);
  return r;
}

/// Joint evaluation of a trained model at test-set size T.
inline EvalResult evaluate(const PriqModel<float>& model, const synth::Dataset& test, std::size_t T,
                           std::uint64_t seed, std::size_t crop) {
  SetPredictor predictor = [&](const Tensor<float>& images, std::span<const synth::LabeledImage* const>) {
    const Tensor<float> scores = predict(model, images);
    return std::vector<double>(scores.values().begin(), scores.values().end());
  };
  return evaluate_with(predictor, test, T, seed, crop);
}

}  // namespace priq
