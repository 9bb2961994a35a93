#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "priq/aggregation.hpp"
#include "priq/config.hpp"
#include "priq/error.hpp"
#include "priq/ops.hpp"
#include "priq/random.hpp"
#include "priq/synth.hpp"

namespace priq {

struct TrainResult {
  RunConfig config;
  std::uint64_t seed = 0;
  PriqModel<float> model;
  double initial_loss = 0.0;       // first step, before any update
  std::vector<double> loss_curve;  // mean step loss per epoch
};

/// SGD with momentum; velocity buffers parallel to the model parameters.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor<float>> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0f);
  }

  void step(double lr) {
    const auto mu = static_cast<float>(momentum_);
    const auto wd = static_cast<float>(weight_decay_);
    const auto rate = static_cast<float>(lr);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.has_grad()) continue;
      auto values = p.mutable_values();
      const auto grad = p.grad();
      auto& v = velocity_[k];
      for (std::size_t i = 0; i < values.size(); ++i) {
        v[i] = mu * v[i] + grad[i] + wd * values[i];
        values[i] -= rate * v[i];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor<float>> params_;
  std::vector<std::vector<float>> velocity_;
  double momentum_;
  double weight_decay_;
};

inline double learning_rate_at(const RunConfig& c, std::size_t epoch) {
  return c.learning_rate * std::pow(c.lr_decay.factor, static_cast<double>(epoch / c.lr_decay.every_epochs));
}

inline std::size_t steps_per_epoch(const RunConfig& c, const synth::Dataset& ds) {
  const std::size_t per_step = c.batch_images();
  return std::max<std::size_t>(1, (ds.num_images() + per_step - 1) / per_step);
}

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

/// Trains a fresh model (parameters seeded by `seed`) on set-batches drawn
/// from `train_set` with set-consistent augmentation.
inline TrainResult train(const RunConfig& config, const synth::Dataset& train_set, std::uint64_t seed,
                         const EpochCallback& on_epoch = {}) {
  config.validate();
  TrainResult result{config, seed, PriqModel<float>::build(config.model_config(seed)), 0.0, {}};
  SgdMomentum opt(result.model.parameters(), config.momentum, config.weight_decay);
  Rng rng(derive_seed(seed, 0x7A1B));
  const std::size_t steps = steps_per_epoch(config, train_set);
  const auto delta = static_cast<float>(config.huber_delta);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate_at(config, epoch);
    double total = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const auto batch = synth::sample_set_batch(train_set, config.batch_sets, config.N_train, config.crop_size, rng);
      opt.zero_grad();
      double loss_value = 0.0;
      try {
        Tape<float> tape;
        Tape<float>::Scope scope(tape);
        std::vector<Tensor<float>> preds;
        for (const auto& set : batch.sets) preds.push_back(predict(result.model, set));
        const Tensor<float> loss = ops::huber_loss(ops::concat(preds, 0), batch.targets, delta);
        loss_value = loss.item();
        tape.backward(loss);
      } catch (const NumericalError& e) {
        throw NumericalError("train: diverged at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(loss_value)) {
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
      }
      if (epoch == 0 && step == 0) result.initial_loss = loss_value;
      total += loss_value;
      opt.step(lr);
    }
    result.loss_curve.push_back(total / static_cast<double>(steps));
    if (on_epoch) on_epoch(epoch, result.loss_curve.back());
  }
  opt.zero_grad();
  return result;
}

}  // namespace priq
