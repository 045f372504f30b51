// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>

#include "volo/autodiff.hpp"
#include "volo/tensor.hpp"

namespace volo {

using Rng = std::mt19937_64;

/// Normal(0, std) samples redrawn until they fall within two deviations.
template <class T>
Tensor<T> trunc_normal(Shape shape, double std, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : t.data()) {
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    v = static_cast<T>(z * std);
  }
  return t;
}

template <class T>
Tensor<T> normal(Shape shape, double std, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <class T>
Tensor<T> uniform(Shape shape, double lo, double hi, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

inline constexpr double kInitStd = 0.02;

template <class T>
Parameter<T> weight_param(std::string name, Shape shape, Rng& rng) {
  return Parameter<T>(std::move(name), trunc_normal<T>(std::move(shape), kInitStd, rng));
}

template <class T>
Parameter<T> zeros_param(std::string name, Shape shape) {
  return Parameter<T>(std::move(name), Tensor<T>::zeros(std::move(shape)));
}

template <class T>
Parameter<T> ones_param(std::string name, Shape shape) {
  return Parameter<T>(std::move(name), Tensor<T>::ones(std::move(shape)));
}

}  // namespace volo
