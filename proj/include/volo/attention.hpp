// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "volo/autodiff.hpp"
#include "volo/init.hpp"
#include "volo/ops.hpp"
#include "volo/tensor.hpp"
#include "volo/window.hpp"

namespace volo {

namespace detail {

inline void require_channels(const Shape& s, std::size_t channels, const char* layer) {
  if (s.empty() || s.back() != channels) {
    throw ShapeError(std::string(layer) + ": input channels do not match layer width " +
                     std::to_string(channels) + ", got " + to_string(s));
  }
}

inline void require_heads(std::size_t channels, std::size_t heads) {
  if (heads == 0 || channels % heads != 0) {
    throw std::invalid_argument("channels " + std::to_string(channels) +
                                " not divisible by heads " + std::to_string(heads));
  }
}

template <class T>
Tensor<T> as_batch(const Tensor<T>& x, std::size_t rank) {
  if (x.rank() == rank) return x;
  if (x.rank() + 1 == rank) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    return x.reshaped(s);
  }
  throw ShapeError("expected rank " + std::to_string(rank - 1) + " or " +
                   std::to_string(rank) + " input, got " + to_string(x.shape()));
}

template <class T>
Tensor<T> strip_batch(const Tensor<T>& y, std::size_t input_rank, std::size_t batched_rank) {
  if (input_rank == batched_rank) return y;
  return y.reshaped(Shape(y.shape().begin() + 1, y.shape().end()));
}

}  // namespace detail

namespace ops {

/// Multi-head outlook aggregation before the output projection.
///   values [B, H, W, C], logits [B, h, w, heads*K^4] on the window grid of g.
/// Per window and head the K^4 logits form a K^2 x K^2 matrix (row = target
/// offset, column = source offset), softmax runs over the source axis, the
/// matrix weights the unfolded values and fold sums the results back.
template <class T>
Var<T> outlook_aggregate(const Var<T>& values, const Var<T>& logits,
                         const WindowGeometry& g, std::size_t heads) {
  const auto& vs = values.shape();
  const std::size_t batch = vs[0], c = vs[3];
  const std::size_t kk = g.offsets();
  const std::size_t nw = g.windows();
  volo::detail::require_heads(c, heads);
  const Shape expect{batch, g.out_height(), g.out_width(), heads * kk * kk};
  if (logits.shape() != expect) throw ShapeError("outlook logits mismatch", logits.shape(), expect);
  const std::size_t ch = c / heads;

  auto attn = reshape(logits, {batch, nw, heads, kk, kk});
  attn = softmax(attn, -1);
  auto win = unfold(values, g);                         // [B, nw, kk, C]
  win = reshape(win, {batch, nw, kk, heads, ch});
  win = permute(win, {0, 1, 3, 2, 4});                   // [B, nw, N, kk, ch]
  auto y = bmm(attn, win);                               // [B, nw, N, kk, ch]
  y = permute(y, {0, 1, 3, 2, 4});                       // [B, nw, kk, N, ch]
  y = reshape(y, {batch, nw, kk, c});
  return fold(y, g);
}

}  // namespace ops

/// Outlook attention: per-window K^2 x K^2 attention generated from the
/// window's anchor token by a linear map, followed by dense aggregation.
template <class T>
struct OutlookAttention {
  std::size_t channels = 0;
  std::size_t heads = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  Parameter<T> v_weight;     // [C, C], no bias
  Parameter<T> attn_weight;  // [C, heads*K^4]
  Parameter<T> attn_bias;    // [heads*K^4]
  Parameter<T> proj_weight;  // [C, C]
  Parameter<T> proj_bias;    // [C]

  static OutlookAttention create(std::size_t channels, std::size_t heads,
                                 std::size_t kernel, std::size_t stride, Rng& rng) {
    detail::require_heads(channels, heads);
    if (kernel % 2 == 0) throw GeometryError("outlook kernel must be odd");
    if (stride == 0) throw GeometryError("outlook stride must be positive");
    const std::size_t logits = heads * kernel * kernel * kernel * kernel;
    OutlookAttention a;
    a.channels = channels;
    a.heads = heads;
    a.kernel = kernel;
    a.stride = stride;
    a.v_weight = weight_param<T>("v.weight", {channels, channels}, rng);
    a.attn_weight = weight_param<T>("attn.weight", {channels, logits}, rng);
    a.attn_bias = zeros_param<T>("attn.bias", {logits});
    a.proj_weight = weight_param<T>("proj.weight", {channels, channels}, rng);
    a.proj_bias = zeros_param<T>("proj.bias", {channels});
    return a;
  }

  WindowGeometry geometry(std::size_t h, std::size_t w) const {
    return WindowGeometry::centered(kernel, stride, h, w);
  }

  /// Output before the final projection; x is [B, H, W, C].
  Var<T> aggregate(Tape<T>& tape, const Var<T>& x) const {
    detail::require_channels(x.shape(), channels, "outlook attention");
    if (x.shape().size() != 4) throw ShapeError("outlook attention expects [B, H, W, C], got " + to_string(x.shape()));
    const auto g = geometry(x.extent(1), x.extent(2));
    auto v = ops::linear(x, tape.param(v_weight));
    auto anchor = stride > 1 ? ops::avg_pool(x, stride) : x;
    auto logits = ops::linear(anchor, tape.param(attn_weight), tape.param(attn_bias));
    return ops::outlook_aggregate(v, logits, g, heads);
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const {
    return ops::linear(aggregate(tape, x), tape.param(proj_weight), tape.param(proj_bias));
  }

  std::vector<const Parameter<T>*> parameters() const {
    return {&v_weight, &attn_weight, &attn_bias, &proj_weight, &proj_bias};
  }
};

/// Scaled dot-product attention restricted to the K x K neighbourhood of each
/// token; neighbours in the zero padding are excluded from the softmax.
template <class T>
struct LocalSelfAttention {
  std::size_t channels = 0;
  std::size_t heads = 1;
  std::size_t kernel = 3;
  Parameter<T> q_weight, k_weight, v_weight;  // [C, C], no bias
  Parameter<T> proj_weight;                   // [C, C]
  Parameter<T> proj_bias;                     // [C]

  static LocalSelfAttention create(std::size_t channels, std::size_t heads,
                                   std::size_t kernel, Rng& rng) {
    detail::require_heads(channels, heads);
    if (kernel % 2 == 0) throw GeometryError("local attention kernel must be odd");
    LocalSelfAttention a;
    a.channels = channels;
    a.heads = heads;
    a.kernel = kernel;
    a.q_weight = weight_param<T>("q.weight", {channels, channels}, rng);
    a.k_weight = weight_param<T>("k.weight", {channels, channels}, rng);
    a.v_weight = weight_param<T>("v.weight", {channels, channels}, rng);
    a.proj_weight = weight_param<T>("proj.weight", {channels, channels}, rng);
    a.proj_bias = zeros_param<T>("proj.bias", {channels});
    return a;
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const {
    detail::require_channels(x.shape(), channels, "local self-attention");
    if (x.shape().size() != 4) throw ShapeError("local self-attention expects [B, H, W, C], got " + to_string(x.shape()));
    const std::size_t b = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::size_t l = h * w, ch = channels / heads;
    const auto g = WindowGeometry::centered(kernel, 1, h, w);
    const std::size_t kk = g.offsets();

    auto q = ops::linear(x, tape.param(q_weight));
    q = ops::reshape(q, {b, l, heads, 1, ch});
    auto k = ops::unfold(ops::linear(x, tape.param(k_weight)), g);  // [B, L, kk, C]
    k = ops::reshape(k, {b, l, kk, heads, ch});
    k = ops::permute(k, {0, 1, 3, 4, 2});                            // [B, L, N, ch, kk]
    auto v = ops::unfold(ops::linear(x, tape.param(v_weight)), g);
    v = ops::reshape(v, {b, l, kk, heads, ch});
    v = ops::permute(v, {0, 1, 3, 2, 4});                            // [B, L, N, kk, ch]

    auto logits = ops::scale(ops::bmm(q, k), T(1) / std::sqrt(static_cast<T>(ch)));
    logits = ops::add(logits, tape.constant(padding_mask(g, heads)));
    auto attn = ops::softmax(logits, -1);
    auto y = ops::bmm(attn, v);                                      // [B, L, N, 1, ch]
    y = ops::reshape(y, {b, h, w, channels});
    return ops::linear(y, tape.param(proj_weight), tape.param(proj_bias));
  }

  std::vector<const Parameter<T>*> parameters() const {
    return {&q_weight, &k_weight, &v_weight, &proj_weight, &proj_bias};
  }

  // [L, N, 1, kk]: 0 where the neighbour exists, -inf where it is padding
  static Tensor<T> padding_mask(const WindowGeometry& g, std::size_t heads) {
    const std::size_t kk = g.offsets();
    Tensor<T> inside({g.windows(), kk});
    kernel::for_each_window_entry(g, [&](std::size_t t, std::size_t u, std::size_t,
                                         std::size_t) { inside[t * kk + u] = T(1); });
    Tensor<T> mask({g.windows(), heads, 1, kk});
    for (std::size_t t = 0; t < g.windows(); ++t)
      for (std::size_t n = 0; n < heads; ++n)
        for (std::size_t u = 0; u < kk; ++u)
          mask[(t * heads + n) * kk + u] =
              inside[t * kk + u] > T(0) ? T(0) : -std::numeric_limits<T>::infinity();
    return mask;
  }
};

/// Multi-head scaled dot-product attention over a token sequence [B, L, C].
template <class T>
struct SelfAttention {
  std::size_t channels = 0;
  std::size_t heads = 1;
  Parameter<T> q_weight, k_weight, v_weight;  // [C, C], no bias
  Parameter<T> proj_weight;                   // [C, C]
  Parameter<T> proj_bias;                     // [C]

  static SelfAttention create(std::size_t channels, std::size_t heads, Rng& rng) {
    detail::require_heads(channels, heads);
    SelfAttention a;
    a.channels = channels;
    a.heads = heads;
    a.q_weight = weight_param<T>("q.weight", {channels, channels}, rng);
    a.k_weight = weight_param<T>("k.weight", {channels, channels}, rng);
    a.v_weight = weight_param<T>("v.weight", {channels, channels}, rng);
    a.proj_weight = weight_param<T>("proj.weight", {channels, channels}, rng);
    a.proj_bias = zeros_param<T>("proj.bias", {channels});
    return a;
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const {
    detail::require_channels(x.shape(), channels, "self-attention");
    if (x.shape().size() != 3) throw ShapeError("self-attention expects [B, L, C], got " + to_string(x.shape()));
    const std::size_t b = x.extent(0), l = x.extent(1), ch = channels / heads;
    auto split = [&](const Parameter<T>& w, std::vector<std::size_t> perm) {
      auto p = ops::reshape(ops::linear(x, tape.param(w)), {b, l, heads, ch});
      return ops::permute(p, std::move(perm));
    };
    auto q = split(q_weight, {0, 2, 1, 3});  // [B, N, L, ch]
    auto k = split(k_weight, {0, 2, 3, 1});  // [B, N, ch, L]
    auto v = split(v_weight, {0, 2, 1, 3});  // [B, N, L, ch]
    auto attn = ops::softmax(
        ops::scale(ops::bmm(q, k), T(1) / std::sqrt(static_cast<T>(ch))), -1);
    auto y = ops::permute(ops::bmm(attn, v), {0, 2, 1, 3});
    y = ops::reshape(y, {b, l, channels});
    return ops::linear(y, tape.param(proj_weight), tape.param(proj_bias));
  }

  std::vector<const Parameter<T>*> parameters() const {
    return {&q_weight, &k_weight, &v_weight, &proj_weight, &proj_bias};
  }
};

/// 2-D cross-correlation with zero padding and bias. The weight is stored as
/// [K*K*Cin, Cout] with rows ordered (kernel row, kernel column, channel).
template <class T>
struct Conv2d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  Parameter<T> weight;
  Parameter<T> bias;

  static Conv2d create(std::size_t cin, std::size_t cout, std::size_t kernel,
                       std::size_t stride, std::size_t padding, Rng& rng) {
    if (kernel % 2 == 0) throw GeometryError("convolution kernel must be odd");
    Conv2d c;
    c.in_channels = cin;
    c.out_channels = cout;
    c.kernel = kernel;
    c.stride = stride;
    c.padding = padding;
    c.weight = weight_param<T>("weight", {kernel * kernel * cin, cout}, rng);
    c.bias = zeros_param<T>("bias", {cout});
    return c;
  }

  /// Same-size convolution: padding K/2, stride 1.
  static Conv2d same(std::size_t cin, std::size_t cout, std::size_t kernel, Rng& rng) {
    return create(cin, cout, kernel, 1, kernel / 2, rng);
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const {
    detail::require_channels(x.shape(), in_channels, "convolution");
    if (x.shape().size() != 4) throw ShapeError("convolution expects [B, H, W, C], got " + to_string(x.shape()));
    WindowGeometry g{kernel, padding, stride, x.extent(1), x.extent(2)};
    g.validate();
    auto cols = ops::unfold(x, g);
    cols = ops::reshape(cols, {x.extent(0), g.out_height(), g.out_width(),
                               g.offsets() * in_channels});
    return ops::linear(cols, tape.param(weight), tape.param(bias));
  }

  std::vector<const Parameter<T>*> parameters() const { return {&weight, &bias}; }
};

template <class Layer>
std::size_t parameter_count(const Layer& layer) {
  std::size_t n = 0;
  for (const auto* p : layer.parameters()) n += p->value.size();
  return n;
}

// ------------------------------------------------------------ inference helpers

/// Runs a layer once on a [H, W, C] (or batched) input without gradients.
template <class T, class Layer>
Tensor<T> apply_layer(const Layer& layer, const Tensor<T>& x, std::size_t batched_rank) {
  Tape<T> tape;
  tape.set_grad_enabled(false);
  auto y = layer.forward(tape, tape.constant(detail::as_batch(x, batched_rank)));
  return detail::strip_batch(y.value(), x.rank(), batched_rank);
}

template <class T>
Tensor<T> outlook_attention(const Tensor<T>& x, const OutlookAttention<T>& layer) {
  return apply_layer(layer, x, 4);
}

template <class T>
Tensor<T> local_self_attention(const Tensor<T>& x, const LocalSelfAttention<T>& layer) {
  return apply_layer(layer, x, 4);
}

template <class T>
Tensor<T> self_attention(const Tensor<T>& x, const SelfAttention<T>& layer) {
  return apply_layer(layer, x, 3);
}

template <class T>
Tensor<T> conv_layer(const Tensor<T>& x, const Conv2d<T>& layer) {
  return apply_layer(layer, x, 4);
}

// ------------------------------------------------------------ cost model

enum class AttentionKind { self_attention, local_self_attention, outlook, convolution };

inline std::string_view to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::self_attention: return "sa";
    case AttentionKind::local_self_attention: return "lsa";
    case AttentionKind::outlook: return "oa";
    case AttentionKind::convolution: return "conv";
  }
  return "?";
}

inline AttentionKind parse_attention_kind(std::string_view s) {
  if (s == "sa") return AttentionKind::self_attention;
  if (s == "lsa") return AttentionKind::local_self_attention;
  if (s == "oa") return AttentionKind::outlook;
  if (s == "conv") return AttentionKind::convolution;
  throw std::invalid_argument("unknown layer kind '" + std::string(s) +
                              "' (expected sa, lsa, oa or conv)");
}

struct CostQuery {
  std::uint64_t height = 1;
  std::uint64_t width = 1;
  std::uint64_t channels = 1;
  std::uint64_t kernel = 3;
  std::uint64_t heads = 1;

  void validate() const {
    if (!height || !width || !channels || !kernel || !heads)
      throw std::invalid_argument("cost query extents must be positive");
    if (kernel % 2 == 0) throw std::invalid_argument("cost query kernel must be odd");
  }
};

/// Closed-form multiply-adds of one attention layer on H x W tokens:
///   SA   4HWC^2 + 2(HW)^2 C
///   LSA  4HWC^2 + 2HWK^2 C
///   OA   HWC(2C + NK^4) + HWK^2 C
///   conv HWK^2 C^2 (C -> C, bias excluded)
inline std::uint64_t madds(const CostQuery& q, AttentionKind kind) {
  q.validate();
  const std::uint64_t hw = q.height * q.width, c = q.channels, k2 = q.kernel * q.kernel;
  switch (kind) {
    case AttentionKind::self_attention: return 4 * hw * c * c + 2 * hw * hw * c;
    case AttentionKind::local_self_attention: return 4 * hw * c * c + 2 * hw * k2 * c;
    case AttentionKind::outlook: return hw * c * (2 * c + q.heads * k2 * k2) + hw * k2 * c;
    case AttentionKind::convolution: return hw * k2 * c * c;
  }
  return 0;
}

/// Outlook cost with strided windows: the value and output projections run on
/// all H x W tokens, the attention generator and aggregation term on the
/// h x w window grid. Equals madds(q, outlook) at stride 1.
inline std::uint64_t outlook_madds_strided(const CostQuery& q, std::uint64_t stride) {
  q.validate();
  const std::uint64_t hw = q.height * q.width, c = q.channels, k2 = q.kernel * q.kernel;
  const std::uint64_t wins = ((q.height + stride - 1) / stride) * ((q.width + stride - 1) / stride);
  return hw * c * 2 * c + wins * c * q.heads * k2 * k2 + wins * k2 * c;
}

/// Counter total of one forward pass of a freshly initialized layer on a
/// single H x W x C input (stride 1).
inline std::uint64_t measured_madds(AttentionKind kind, const CostQuery& q,
                                    std::uint64_t seed = 0) {
  q.validate();
  Rng rng(seed);
  Tape<float> tape;
  tape.set_grad_enabled(false);
  const std::size_t h = q.height, w = q.width, c = q.channels;
  switch (kind) {
    case AttentionKind::self_attention: {
      auto layer = SelfAttention<float>::create(c, q.heads, rng);
      layer.forward(tape, tape.constant(uniform<float>({1, h * w, c}, -1, 1, rng)));
      break;
    }
    case AttentionKind::local_self_attention: {
      auto layer = LocalSelfAttention<float>::create(c, q.heads, q.kernel, rng);
      layer.forward(tape, tape.constant(uniform<float>({1, h, w, c}, -1, 1, rng)));
      break;
    }
    case AttentionKind::outlook: {
      auto layer = OutlookAttention<float>::create(c, q.heads, q.kernel, 1, rng);
      layer.forward(tape, tape.constant(uniform<float>({1, h, w, c}, -1, 1, rng)));
      break;
    }
    case AttentionKind::convolution: {
      auto layer = Conv2d<float>::same(c, c, q.kernel, rng);
      layer.forward(tape, tape.constant(uniform<float>({1, h, w, c}, -1, 1, rng)));
      break;
    }
  }
  return tape.counter().total();
}

}  // namespace volo
