#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <type_traits>
#include <vector>

#include "priq/error.hpp"
#include "priq/tensor.hpp"

namespace priq {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences, perturbing every coordinate of every tensor in `params`.
///
/// The relative error of a coordinate is
/// |analytic - numeric| / max(1, |analytic|, |numeric|). `fn` is evaluated
/// twice up front; differing results are reported as non-determinism.
template <typename T>
GradCheckResult finite_diff_check(const std::function<Tensor<T>()>& fn,
                                  std::vector<Tensor<T>> params, T epsilon) {
  if constexpr (std::is_same_v<T, double>) {
    if (epsilon < 1e-7 || epsilon > 1e-3) throw ConfigError("finite_diff_check: epsilon outside [1e-7, 1e-3]");
  }
  if (!(epsilon > T(0))) throw ConfigError("finite_diff_check: epsilon must be positive");

  const T first = fn().item();
  const T second = fn().item();
  if (first != second) throw NumericalError("finite_diff_check: function is not deterministic");

  std::vector<bool> had_grad_flag;
  for (auto& p : params) {
    had_grad_flag.push_back(p.requires_grad());
    p.zero_grad();
    p.set_requires_grad(true);
  }
  {
    Tape<T> tape;
    typename Tape<T>::Scope scope(tape);
    Tensor<T> loss = fn();
    tape.backward(loss);
  }

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    std::vector<T> analytic(p.numel(), T(0));
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    p.zero_grad();
    p.set_requires_grad(false);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const T saved = p[i];
      p[i] = saved + epsilon;
      const T up = fn().item();
      p[i] = saved - epsilon;
      const T down = fn().item();
      p[i] = saved;
      const double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * epsilon);
      const double a = analytic[i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
      ++result.coordinates;
    }
    p.set_requires_grad(had_grad_flag[k]);
  }
  return result;
}

/// Single-input form: `fn` maps `input` to a scalar.
template <typename T>
double finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& fn, Tensor<T> input,
                         T epsilon) {
  std::function<Tensor<T>()> closed = [&]() { return fn(input); };
  return finite_diff_check<T>(closed, {input}, epsilon).max_relative_error;
}

}  // namespace priq
