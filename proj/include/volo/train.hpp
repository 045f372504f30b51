// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "volo/config.hpp"
#include "volo/data.hpp"
#include "volo/model.hpp"
#include "volo/optim.hpp"

namespace volo {

struct TrainOptions {
  std::size_t steps = 500;
  std::size_t batch = 32;
  double lr = 1e-3;
  double weight_decay = 0.05;
  std::size_t warmup = 20;  // linear warmup, then cosine decay to lr / 10
  std::uint64_t seed = 0;
};

struct TrainRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;  // on the step's batch, training-mode forward
  double lr = 0.0;
  double wall_ms = 0.0;         // duration of the step
};

struct TrainResult {
  std::vector<TrainRecord> records;
  double final_accuracy = 0.0;  // whole training set, inference mode
  double total_ms = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double scheduled_lr(const TrainOptions& o, std::size_t step) {
  if (step < o.warmup) return o.lr * double(step + 1) / double(o.warmup);
  const double span = double(std::max<std::size_t>(1, o.steps - o.warmup));
  const double progress = std::min(1.0, double(step - o.warmup) / span);
  return o.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

template <class T>
double accuracy_of(const Tensor<T>& logits, const std::vector<int>& labels) {
  const std::size_t k = logits.extent(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const T* row = logits.ptr() + i * k;
    hits += std::max_element(row, row + k) - row == labels[i] ? 1 : 0;
  }
  return double(hits) / double(labels.size());
}

/// Inference-mode accuracy over the whole dataset.
template <class T>
double evaluate(const VoloModel<T>& model, const SyntheticDataset& data, std::size_t batch = 100) {
  std::size_t hits = 0;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    std::vector<std::size_t> idx(std::min(batch, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    Tensor<float> x;
    std::vector<int> y;
    data.gather(idx, x, y);
    Tape<T> tape;
    tape.set_grad_enabled(false);
    auto logits = model.forward(tape, tape.constant(x.template cast<T>()));
    hits += std::size_t(std::lround(accuracy_of(logits.value(), y) * double(y.size())));
  }
  return double(hits) / double(data.size());
}

/// AdamW + cross-entropy with stochastic depth active. Mini-batches walk a
/// per-epoch shuffle; when one batch covers the dataset it is used whole and
/// in order. Deterministic for a given config, data and seed.
template <class T = float>
TrainResult train_toy(const ModelConfig& config, const SyntheticDataset& data,
                      const TrainOptions& opt,
                      const std::function<void(const TrainRecord&)>& on_step = {}) {
  if (config.image_size != data.spec.image_size)
    throw ConfigError("model image_size " + std::to_string(config.image_size) +
                      " differs from dataset image size " +
                      std::to_string(data.spec.image_size));
  if (config.num_classes < data.spec.classes)
    throw ConfigError("model has fewer classes than the dataset");
  if (opt.batch == 0) throw std::invalid_argument("batch size must be positive");

  VoloModel<T> model = build<T>(config, opt.seed);
  AdamW<T> optim(model.mutable_parameters(), {opt.lr, 0.9, 0.999, 1e-8, opt.weight_decay});
  Rng shuffle_rng(opt.seed + 1), depth_rng(opt.seed + 2);

  const std::size_t n = data.size(), batch = std::min(opt.batch, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;

  TrainResult result;
  const auto t_start = std::chrono::steady_clock::now();
  for (std::size_t step = 0; step < opt.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cursor + batch > n) {
      if (batch < n) std::shuffle(order.begin(), order.end(), shuffle_rng);
      cursor = 0;
    }
    std::vector<std::size_t> idx(order.begin() + cursor, order.begin() + cursor + batch);
    cursor += batch;
    Tensor<float> x;
    std::vector<int> y;
    data.gather(idx, x, y);

    const double lr = scheduled_lr(opt, step);
    optim.set_lr(lr);
    optim.zero_grad();
    Tape<T> tape;
    auto logits = model.forward(tape, tape.constant(x.template cast<T>()),
                                ForwardContext{true, &depth_rng});
    auto loss = ops::cross_entropy(logits, y);
    const double loss_value = double(loss.value()[0]);
    if (!std::isfinite(loss_value)) {
      throw TrainingDiverged("loss became " + std::to_string(loss_value) + " at step " +
                             std::to_string(step) + " (lr " + std::to_string(lr) + ")");
    }
    tape.backward(loss);
    optim.step();

    TrainRecord rec{step, loss_value, accuracy_of(logits.value(), y), lr,
                    std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count()};
    result.records.push_back(rec);
    if (on_step) on_step(rec);
  }
  result.final_accuracy = evaluate(model, data);
  result.total_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace volo
