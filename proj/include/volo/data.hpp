// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "volo/init.hpp"
#include "volo/tensor.hpp"

namespace volo {

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t per_class = 50;
  std::size_t image_size = 32;
  double noise = 0.25;
  std::uint64_t seed = 0;
  std::size_t waves = 3;  // sinusoids per template channel
};

/// Class-conditional images: a fixed low-frequency template per class plus
/// i.i.d. Gaussian pixel noise. Samples are interleaved by class, so any
/// prefix of classes * n samples is balanced.
struct SyntheticDataset {
  SyntheticSpec spec;
  Tensor<float> templates;  // [classes, S, S, 3]
  Tensor<float> images;     // [n, S, S, 3]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t pixels() const { return spec.image_size * spec.image_size * 3; }

  /// Gathers the given samples into [batch, S, S, 3] plus labels.
  void gather(const std::vector<std::size_t>& idx, Tensor<float>& x, std::vector<int>& y) const {
    const std::size_t px = pixels();
    x = Tensor<float>({idx.size(), spec.image_size, spec.image_size, 3});
    y.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(images.ptr() + idx[i] * px, px, x.ptr() + i * px);
      y[i] = labels[idx[i]];
    }
  }
};

/// Templates are sums of sinusoids with integer frequencies 0..2 along each
/// axis (never both zero), random phase and amplitude 0.5.
inline Tensor<float> make_templates(const SyntheticSpec& spec, Rng& rng) {
  const std::size_t s = spec.image_size;
  Tensor<float> t({spec.classes, s, s, 3});
  std::uniform_int_distribution<int> freq(0, 2);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (std::size_t k = 0; k < spec.classes; ++k)
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t m = 0; m < spec.waves; ++m) {
        int fy = freq(rng), fx = freq(rng);
        if (fy == 0 && fx == 0) fx = 1;
        const double ph = phase(rng);
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t j = 0; j < s; ++j)
            t.at({k, i, j, ch}) += float(
                0.5 * std::sin(2.0 * std::numbers::pi * (fy * double(i) + fx * double(j)) /
                                   double(s) + ph));
      }
  return t;
}

inline SyntheticDataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes == 0 || spec.per_class == 0 || spec.image_size == 0)
    throw std::invalid_argument("synthetic dataset needs positive classes, samples and size");
  if (!(spec.noise >= 0.0)) throw std::invalid_argument("noise level must be non-negative");
  Rng rng(spec.seed);
  SyntheticDataset d;
  d.spec = spec;
  d.templates = make_templates(spec, rng);
  const std::size_t n = spec.classes * spec.per_class, px = d.pixels();
  d.images = Tensor<float>({n, spec.image_size, spec.image_size, 3});
  d.labels.resize(n);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % spec.classes;
    d.labels[i] = int(k);
    const float* tp = d.templates.ptr() + k * px;
    float* ip = d.images.ptr() + i * px;
    for (std::size_t e = 0; e < px; ++e) ip[e] = tp[e] + float(spec.noise * noise(rng));
  }
  return d;
}

/// Accuracy of assigning every image to the closest template (squared L2).
inline double nearest_template_accuracy(const SyntheticDataset& d) {
  const std::size_t px = d.pixels();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const float* ip = d.images.ptr() + i * px;
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    for (std::size_t k = 0; k < d.spec.classes; ++k) {
      const float* tp = d.templates.ptr() + k * px;
      double dist = 0.0;
      for (std::size_t e = 0; e < px; ++e) dist += double(ip[e] - tp[e]) * (ip[e] - tp[e]);
      if (dist < best) {
        best = dist;
        arg = int(k);
      }
    }
    hits += arg == d.labels[i] ? 1 : 0;
  }
  return double(hits) / double(d.size());
}

}  // namespace volo
