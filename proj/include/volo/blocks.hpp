// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <variant>
#include <vector>

#include "volo/attention.hpp"
#include "volo/autodiff.hpp"
#include "volo/init.hpp"
#include "volo/ops.hpp"

namespace volo {

/// Training flag plus the generator that owns stochastic-depth draws.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

/// Per-sample keep mask for stochastic depth: Bernoulli(1 - rate), with kept
/// entries scaled by 1 / (1 - rate) so that E[mask] = 1.
template <class T>
Tensor<T> stochastic_depth_mask(double rate, std::size_t batch, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("stochastic depth rate must lie in [0, 1), got " +
                                std::to_string(rate));
  }
  Tensor<T> mask({batch});
  std::bernoulli_distribution keep(1.0 - rate);
  const T kept = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask.data()) m = keep(rng) ? kept : T(0);
  return mask;
}

/// Residual-branch dropping. Inference and rate 0 pass the branch through;
/// rate >= 1 drops every sample.
template <class T>
Var<T> drop_path(const Var<T>& branch, double rate, const ForwardContext& ctx) {
  if (!ctx.training || rate <= 0.0) return branch;
  const std::size_t batch = branch.extent(0);
  if (rate >= 1.0) return ops::scale_leading(branch, Tensor<T>::zeros({batch}));
  if (!ctx.rng) throw ContractError("training forward with stochastic depth needs an rng");
  return ops::scale_leading(branch, stochastic_depth_mask<T>(rate, batch, *ctx.rng));
}

/// Linear stochastic-depth schedule: 0 at the first block, `max_rate` at the
/// last.
inline std::vector<double> drop_path_schedule(double max_rate, std::size_t blocks) {
  std::vector<double> rates(blocks, 0.0);
  for (std::size_t i = 0; i < blocks && blocks > 1; ++i)
    rates[i] = max_rate * static_cast<double>(i) / static_cast<double>(blocks - 1);
  return rates;
}

template <class T>
struct LayerNorm {
  Parameter<T> gamma, beta;
  T eps = T(1e-5);

  static LayerNorm create(std::size_t channels) {
    return {ones_param<T>("gamma", {channels}), zeros_param<T>("beta", {channels})};
  }
  Var<T> forward(Tape<T>& tape, const Var<T>& x) const {
    return ops::layer_norm(x, tape.param(gamma), tape.param(beta), eps);
  }
  std::vector<const Parameter<T>*> parameters() const { return {&gamma, &beta}; }
};

/// Two-layer perceptron C -> ratio*C -> C with GELU in between.
template <class T>
struct Mlp {
  Parameter<T> fc1_weight, fc1_bias, fc2_weight, fc2_bias;

  static Mlp create(std::size_t channels, std::size_t ratio, Rng& rng) {
    const std::size_t hidden = channels * ratio;
    Mlp m;
    m.fc1_weight = weight_param<T>("fc1.weight", {channels, hidden}, rng);
    m.fc1_bias = zeros_param<T>("fc1.bias", {hidden});
    m.fc2_weight = weight_param<T>("fc2.weight", {hidden, channels}, rng);
    m.fc2_bias = zeros_param<T>("fc2.bias", {channels});
    return m;
  }

  std::size_t hidden() const { return fc1_bias.value.size(); }

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const {
    auto h = ops::gelu(ops::linear(x, tape.param(fc1_weight), tape.param(fc1_bias)));
    return ops::linear(h, tape.param(fc2_weight), tape.param(fc2_bias));
  }

  std::vector<const Parameter<T>*> parameters() const {
    return {&fc1_weight, &fc1_bias, &fc2_weight, &fc2_bias};
  }
};

template <class T>
using SpatialMixer = std::variant<OutlookAttention<T>, LocalSelfAttention<T>, Conv2d<T>>;

/// Pre-norm residual block on a token map [B, H, W, C]:
///   x' = x + mixer(LN(x)),  z = x' + MLP(LN(x')).
/// With an outlook-attention mixer this is the Outlooker; the other mixers
/// give the local-attention and convolution variants of the same block.
template <class T>
struct OutlookerBlock {
  LayerNorm<T> norm1;
  SpatialMixer<T> mixer;
  LayerNorm<T> norm2;
  Mlp<T> mlp;
  double drop_path_rate = 0.0;

  static OutlookerBlock create(SpatialMixer<T> mixer, std::size_t channels,
                               std::size_t mlp_ratio, double drop_path_rate, Rng& rng) {
    OutlookerBlock b{LayerNorm<T>::create(channels), std::move(mixer),
                     LayerNorm<T>::create(channels), Mlp<T>::create(channels, mlp_ratio, rng),
                     drop_path_rate};
    return b;
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x, const ForwardContext& ctx = {}) const {
    auto mixed = std::visit([&](const auto& m) { return m.forward(tape, norm1.forward(tape, x)); },
                            mixer);
    if (mixed.shape() != x.shape()) throw ShapeError("spatial mixer changed the token map shape", mixed.shape(), x.shape());
    auto y = ops::add(x, drop_path(mixed, drop_path_rate, ctx));
    return ops::add(y, drop_path(mlp.forward(tape, norm2.forward(tape, y)), drop_path_rate, ctx));
  }

  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> ps = norm1.parameters();
    std::visit([&](const auto& m) { for (auto* p : m.parameters()) ps.push_back(p); }, mixer);
    for (auto* p : norm2.parameters()) ps.push_back(p);
    for (auto* p : mlp.parameters()) ps.push_back(p);
    return ps;
  }
};

/// Pre-norm transformer block on tokens [B, L, C].
template <class T>
struct TransformerBlock {
  LayerNorm<T> norm1;
  SelfAttention<T> attn;
  LayerNorm<T> norm2;
  Mlp<T> mlp;
  double drop_path_rate = 0.0;

  static TransformerBlock create(std::size_t channels, std::size_t heads,
                                 std::size_t mlp_ratio, double drop_path_rate, Rng& rng) {
    TransformerBlock b;
    b.norm1 = LayerNorm<T>::create(channels);
    b.attn = SelfAttention<T>::create(channels, heads, rng);
    b.norm2 = LayerNorm<T>::create(channels);
    b.mlp = Mlp<T>::create(channels, mlp_ratio, rng);
    b.drop_path_rate = drop_path_rate;
    return b;
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x, const ForwardContext& ctx = {}) const {
    auto y = ops::add(x, drop_path(attn.forward(tape, norm1.forward(tape, x)), drop_path_rate, ctx));
    return ops::add(y, drop_path(mlp.forward(tape, norm2.forward(tape, y)), drop_path_rate, ctx));
  }

  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> ps = norm1.parameters();
    for (auto* p : attn.parameters()) ps.push_back(p);
    for (auto* p : norm2.parameters()) ps.push_back(p);
    for (auto* p : mlp.parameters()) ps.push_back(p);
    return ps;
  }
};

/// Class attention: only the class token forms a query; keys and values come
/// from [class token, patch tokens]. Returns the updated class token; the
/// patch tokens are read, never written.
template <class T>
struct ClassAttentionBlock {
  std::size_t channels = 0;
  std::size_t heads = 1;
  LayerNorm<T> norm1;
  Parameter<T> q_weight, k_weight, v_weight;  // [C, C], no bias
  Parameter<T> proj_weight, proj_bias;
  LayerNorm<T> norm2;
  Mlp<T> mlp;
  double drop_path_rate = 0.0;

  static ClassAttentionBlock create(std::size_t channels, std::size_t heads,
                                    std::size_t mlp_ratio, Rng& rng) {
    detail::require_heads(channels, heads);
    ClassAttentionBlock b;
    b.channels = channels;
    b.heads = heads;
    b.norm1 = LayerNorm<T>::create(channels);
    b.q_weight = weight_param<T>("q.weight", {channels, channels}, rng);
    b.k_weight = weight_param<T>("k.weight", {channels, channels}, rng);
    b.v_weight = weight_param<T>("v.weight", {channels, channels}, rng);
    b.proj_weight = weight_param<T>("proj.weight", {channels, channels}, rng);
    b.proj_bias = zeros_param<T>("proj.bias", {channels});
    b.norm2 = LayerNorm<T>::create(channels);
    b.mlp = Mlp<T>::create(channels, mlp_ratio, rng);
    return b;
  }

  /// cls [B, 1, C], patches [B, L, C] -> updated cls [B, 1, C].
  Var<T> forward(Tape<T>& tape, const Var<T>& cls, const Var<T>& patches,
                 const ForwardContext& ctx = {}) const {
    detail::require_channels(cls.shape(), channels, "class attention");
    detail::require_channels(patches.shape(), channels, "class attention");
    if (cls.shape().size() != 3 || cls.extent(1) != 1 || patches.shape().size() != 3 ||
        patches.extent(0) != cls.extent(0)) {
      throw ShapeError("class attention expects cls [B, 1, C] and patches [B, L, C]",
                       cls.shape(), patches.shape());
    }
    const std::size_t b = cls.extent(0), l = patches.extent(1) + 1, ch = channels / heads;
    auto u = norm1.forward(tape, ops::concat(cls, patches, 1));
    auto q = ops::linear(ops::slice(u, 1, 0, 1), tape.param(q_weight));
    q = ops::permute(ops::reshape(q, {b, 1, heads, ch}), {0, 2, 1, 3});     // [B, N, 1, ch]
    auto k = ops::reshape(ops::linear(u, tape.param(k_weight)), {b, l, heads, ch});
    k = ops::permute(k, {0, 2, 3, 1});                                      // [B, N, ch, L+1]
    auto v = ops::reshape(ops::linear(u, tape.param(v_weight)), {b, l, heads, ch});
    v = ops::permute(v, {0, 2, 1, 3});                                      // [B, N, L+1, ch]
    auto attn = ops::softmax(
        ops::scale(ops::bmm(q, k), T(1) / std::sqrt(static_cast<T>(ch))), -1);
    auto y = ops::reshape(ops::permute(ops::bmm(attn, v), {0, 2, 1, 3}), {b, 1, channels});
    y = ops::linear(y, tape.param(proj_weight), tape.param(proj_bias));
    auto c = ops::add(cls, drop_path(y, drop_path_rate, ctx));
    return ops::add(c, drop_path(mlp.forward(tape, norm2.forward(tape, c)), drop_path_rate, ctx));
  }

  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> ps = norm1.parameters();
    for (auto* p : {&q_weight, &k_weight, &v_weight, &proj_weight, &proj_bias}) ps.push_back(p);
    for (auto* p : norm2.parameters()) ps.push_back(p);
    for (auto* p : mlp.parameters()) ps.push_back(p);
    return ps;
  }
};

}  // namespace volo
