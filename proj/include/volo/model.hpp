// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "volo/attention.hpp"
#include "volo/blocks.hpp"
#include "volo/config.hpp"
#include "volo/init.hpp"
#include "volo/ops.hpp"
#include "volo/window.hpp"

namespace volo {

/// Convolutional stem: 7x7 stride-2 conv, two 3x3 convs (each followed by
/// LayerNorm over channels and GELU), then a non-overlapping patch
/// projection to the stage-1 width. Reduces resolution by patch_size.
template <class T>
struct Stem {
  Conv2d<T> conv1, conv2, conv3;
  LayerNorm<T> norm1, norm2, norm3;
  std::size_t proj_patch = 4;
  Parameter<T> proj_weight;  // [proj_patch^2 * hidden, C1]
  Parameter<T> proj_bias;

  static Stem create(const ModelConfig& c, Rng& rng) {
    Stem s;
    s.conv1 = Conv2d<T>::create(3, c.stem_hidden, 7, 2, 3, rng);
    s.norm1 = LayerNorm<T>::create(c.stem_hidden);
    s.conv2 = Conv2d<T>::same(c.stem_hidden, c.stem_hidden, 3, rng);
    s.norm2 = LayerNorm<T>::create(c.stem_hidden);
    s.conv3 = Conv2d<T>::same(c.stem_hidden, c.stem_hidden, 3, rng);
    s.norm3 = LayerNorm<T>::create(c.stem_hidden);
    s.proj_patch = c.patch_size / 2;
    s.proj_weight = weight_param<T>(
        "stem.proj.weight", {s.proj_patch * s.proj_patch * c.stem_hidden, c.stage1_dim}, rng);
    s.proj_bias = zeros_param<T>("stem.proj.bias", {c.stage1_dim});
    return s;
  }

  /// images [B, H, W, 3] -> tokens [B, H/patch, W/patch, C1]
  Var<T> forward(Tape<T>& tape, const Var<T>& images) const {
    auto x = ops::gelu(norm1.forward(tape, conv1.forward(tape, images)));
    x = ops::gelu(norm2.forward(tape, conv2.forward(tape, x)));
    x = ops::gelu(norm3.forward(tape, conv3.forward(tape, x)));
    return ops::linear(ops::patchify(x, proj_patch), tape.param(proj_weight),
                       tape.param(proj_bias));
  }

  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> ps;
    for (const auto* part : {&conv1, &conv2, &conv3})
      for (auto* p : part->parameters()) ps.push_back(p);
    for (const auto* n : {&norm1, &norm2, &norm3})
      for (auto* p : n->parameters()) ps.push_back(p);
    ps.push_back(&proj_weight);
    ps.push_back(&proj_bias);
    return ps;
  }
};

/// Non-overlapping patch merge [B, H, W, C1] -> [B, H/p, W/p, C2].
template <class T>
struct Downsample {
  std::size_t patch = 2;
  Parameter<T> weight;  // [p*p*C1, C2]
  Parameter<T> bias;

  static Downsample create(std::size_t patch, std::size_t cin, std::size_t cout, Rng& rng) {
    return {patch, weight_param<T>("downsample.weight", {patch * patch * cin, cout}, rng),
            zeros_param<T>("downsample.bias", {cout})};
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] % patch != 0 || s[2] % patch != 0) {
      throw ShapeError("downsample needs extents divisible by " + std::to_string(patch) +
                       ", got " + to_string(s));
    }
    return ops::linear(ops::patchify(x, patch), tape.param(weight), tape.param(bias));
  }

  std::vector<const Parameter<T>*> parameters() const { return {&weight, &bias}; }
};

template <class T>
struct VoloModel {
  ModelConfig config;
  Stem<T> stem;
  std::vector<OutlookerBlock<T>> stage1;
  Downsample<T> downsample;
  Parameter<T> pos_embed;  // [L2, C2] on the stage-2 grid
  std::vector<TransformerBlock<T>> stage2;
  Parameter<T> cls_token;  // [1, 1, C2]
  std::vector<ClassAttentionBlock<T>> class_blocks;
  LayerNorm<T> norm;
  Parameter<T> head_weight;  // [C2, classes]
  Parameter<T> head_bias;

  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> ps = stem.parameters();
    for (const auto& b : stage1)
      for (auto* p : b.parameters()) ps.push_back(p);
    for (auto* p : downsample.parameters()) ps.push_back(p);
    ps.push_back(&pos_embed);
    for (const auto& b : stage2)
      for (auto* p : b.parameters()) ps.push_back(p);
    ps.push_back(&cls_token);
    for (const auto& b : class_blocks)
      for (auto* p : b.parameters()) ps.push_back(p);
    for (auto* p : norm.parameters()) ps.push_back(p);
    ps.push_back(&head_weight);
    ps.push_back(&head_bias);
    return ps;
  }

  std::vector<Parameter<T>*> mutable_parameters() {
    std::vector<Parameter<T>*> out;
    for (const auto* p : parameters()) out.push_back(const_cast<Parameter<T>*>(p));
    return out;
  }

  void zero_grad() const {
    for (const auto* p : parameters()) p->zero_grad();
  }

  /// Checks that an image batch [B, H, W, 3] fits this model.
  void check_input(const Shape& s) const {
    if (s.size() != 4 || s[3] != 3) {
      throw ShapeError("expected images [B, H, W, 3], got " + to_string(s));
    }
    const std::size_t factor = config.patch_size * config.downsample_patch;
    if (s[1] % factor != 0 || s[2] % factor != 0) {
      throw ShapeError("image extents " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                       " must be divisible by patch_size * downsample_patch = " +
                       std::to_string(factor));
    }
    if (s[1] != config.image_size || s[2] != config.image_size) {
      throw ShapeError("image extents " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                       " differ from the configured image_size " +
                       std::to_string(config.image_size) +
                       " that fixes the positional embedding grid");
    }
  }

  /// Stage-1 token map for an image batch.
  Var<T> stem_forward(Tape<T>& tape, const Var<T>& images) const {
    const auto& s = images.shape();
    if (s.size() != 4 || s[1] % config.patch_size != 0 || s[2] % config.patch_size != 0) {
      throw ShapeError("stem needs [B, H, W, 3] with H and W divisible by " +
                       std::to_string(config.patch_size) + ", got " + to_string(s));
    }
    return stem.forward(tape, images);
  }

  /// images [B, H, W, 3] -> logits [B, classes]
  Var<T> forward(Tape<T>& tape, const Var<T>& images, const ForwardContext& ctx = {}) const {
    check_input(images.shape());
    const std::size_t batch = images.extent(0);
    auto x = stem_forward(tape, images);
    for (const auto& b : stage1) x = b.forward(tape, x, ctx);
    x = downsample.forward(tape, x);
    const std::size_t tokens = x.extent(1) * x.extent(2);
    x = ops::reshape(x, {batch, tokens, config.stage2_dim});
    x = ops::add(x, tape.param(pos_embed));
    for (const auto& b : stage2) x = b.forward(tape, x, ctx);
    auto cls = ops::repeat_leading(tape.param(cls_token), batch);
    for (const auto& b : class_blocks) cls = b.forward(tape, cls, x, ctx);
    cls = ops::reshape(norm.forward(tape, cls), {batch, config.stage2_dim});
    return ops::linear(cls, tape.param(head_weight), tape.param(head_bias));
  }
};

/// Builds and initializes a model; deterministic for a given seed.
template <class T>
VoloModel<T> build(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  VoloModel<T> m;
  m.config = c;
  m.stem = Stem<T>::create(c, rng);
  const auto rates = drop_path_schedule(c.drop_path_max, c.total_layers());
  for (std::size_t i = 0; i < c.outlookers; ++i) {
    SpatialMixer<T> mixer = [&]() -> SpatialMixer<T> {
      switch (c.stage1_layer) {
        case Stage1Layer::outlooker:
          return OutlookAttention<T>::create(c.stage1_dim, c.stage1_heads, c.kernel, c.stride, rng);
        case Stage1Layer::local_self_attention:
          return LocalSelfAttention<T>::create(c.stage1_dim, c.stage1_heads, c.kernel, rng);
        case Stage1Layer::convolution:
          return Conv2d<T>::same(c.stage1_dim, c.stage1_dim, c.kernel, rng);
      }
      throw ConfigError("unknown stage-1 layer");
    }();
    m.stage1.push_back(OutlookerBlock<T>::create(std::move(mixer), c.stage1_dim,
                                                 c.stage1_mlp_ratio, rates[i], rng));
  }
  m.downsample = Downsample<T>::create(c.downsample_patch, c.stage1_dim, c.stage2_dim, rng);
  const std::size_t grid = c.stage2_grid(c.image_size);
  m.pos_embed = weight_param<T>("pos_embed", {grid * grid, c.stage2_dim}, rng);
  for (std::size_t i = 0; i < c.transformers; ++i) {
    m.stage2.push_back(TransformerBlock<T>::create(c.stage2_dim, c.stage2_heads,
                                                   c.stage2_mlp_ratio,
                                                   rates[c.outlookers + i], rng));
  }
  m.cls_token = weight_param<T>("cls_token", {1, 1, c.stage2_dim}, rng);
  for (std::size_t i = 0; i < c.class_attention_layers; ++i) {
    m.class_blocks.push_back(ClassAttentionBlock<T>::create(c.stage2_dim, c.stage2_heads,
                                                            c.stage2_mlp_ratio, rng));
  }
  m.norm = LayerNorm<T>::create(c.stage2_dim);
  m.head_weight = weight_param<T>("head.weight", {c.stage2_dim, c.num_classes}, rng);
  m.head_bias = zeros_param<T>("head.bias", {c.num_classes});
  return m;
}

template <class T>
std::uint64_t count_params(const VoloModel<T>& m) {
  std::uint64_t n = 0;
  for (const auto* p : m.parameters()) n += p->value.size();
  return n;
}

/// Per-component parameter and multiply-add totals derived from the config
/// alone, so large presets never need their weights allocated.
struct CostBreakdown {
  struct Item {
    std::string part;
    std::size_t count;         // repeated blocks
    std::uint64_t params;      // total over `count`
    std::uint64_t madds;       // total over `count`
  };
  std::vector<Item> items;

  std::uint64_t params() const {
    std::uint64_t n = 0;
    for (const auto& i : items) n += i.params;
    return n;
  }
  std::uint64_t madds() const {
    std::uint64_t n = 0;
    for (const auto& i : items) n += i.madds;
    return n;
  }
};

inline CostBreakdown analyze(const ModelConfig& c, std::size_t resolution) {
  c.validate();
  using u64 = std::uint64_t;
  const u64 hid = c.stem_hidden, c1 = c.stage1_dim, c2 = c.stage2_dim;
  const u64 k = c.kernel, k2 = k * k;
  auto mlp_params = [](u64 ch, u64 r) { return ch * r * ch + r * ch + r * ch * ch + ch; };
  auto mlp_madds = [](u64 tokens, u64 ch, u64 r) { return 2 * tokens * ch * r * ch; };

  CostBreakdown out;
  // stem
  const u64 s1 = (resolution + 6 - 7) / 2 + 1;
  const u64 pp = c.patch_size / 2;
  const u64 g1 = c.stage1_grid(resolution), t1 = g1 * g1;
  const u64 g2 = c.stage2_grid(resolution), t2 = g2 * g2;
  out.items.push_back(
      {"stem", 1,
       (49 * 3 * hid + hid) + 2 * (9 * hid * hid + hid) + 3 * 2 * hid + pp * pp * hid * c1 + c1,
       s1 * s1 * 49 * 3 * hid + 2 * s1 * s1 * 9 * hid * hid + t1 * pp * pp * hid * c1});

  // stage 1
  u64 mixer_params = 0, mixer_madds = 0;
  const CostQuery q1{g1, g1, c1, k, c.stage1_heads};
  const std::string kind = std::string(to_string(c.stage1_layer));
  switch (c.stage1_layer) {
    case Stage1Layer::outlooker: {
      const u64 logits = c.stage1_heads * k2 * k2;
      mixer_params = c1 * c1 + c1 * logits + logits + c1 * c1 + c1;
      mixer_madds = outlook_madds_strided(q1, c.stride);
      break;
    }
    case Stage1Layer::local_self_attention:
      mixer_params = 4 * c1 * c1 + c1;
      mixer_madds = madds(q1, AttentionKind::local_self_attention);
      break;
    case Stage1Layer::convolution:
      mixer_params = k2 * c1 * c1 + c1;
      mixer_madds = madds(q1, AttentionKind::convolution);
      break;
  }
  const u64 n1 = c.outlookers;
  out.items.push_back({"stage1 " + kind, c.outlookers,
                       n1 * (4 * c1 + mixer_params + mlp_params(c1, c.stage1_mlp_ratio)),
                       n1 * (mixer_madds + mlp_madds(t1, c1, c.stage1_mlp_ratio))});

  const u64 dp = c.downsample_patch;
  out.items.push_back({"downsample", 1, dp * dp * c1 * c2 + c2, t2 * dp * dp * c1 * c2});
  const u64 pos_grid = c.stage2_grid(c.image_size);
  out.items.push_back({"pos_embed", 1, pos_grid * pos_grid * c2, 0});

  const u64 n2 = c.transformers;
  const CostQuery q2{g2, g2, c2, k, c.stage2_heads};
  out.items.push_back({"stage2 transformer", c.transformers,
                       n2 * (4 * c2 + 4 * c2 * c2 + c2 + mlp_params(c2, c.stage2_mlp_ratio)),
                       n2 * (madds(q2, AttentionKind::self_attention) +
                             mlp_madds(t2, c2, c.stage2_mlp_ratio))});

  const u64 nc = c.class_attention_layers;
  out.items.push_back(
      {"class attention", c.class_attention_layers,
       c2 + nc * (4 * c2 + 4 * c2 * c2 + c2 + mlp_params(c2, c.stage2_mlp_ratio)),
       nc * (2 * c2 * c2 + 2 * (t2 + 1) * c2 * c2 + 2 * (t2 + 1) * c2 +
             mlp_madds(1, c2, c.stage2_mlp_ratio))});

  out.items.push_back({"head", 1, 2 * c2 + c2 * c.num_classes + c.num_classes,
                       c2 * c.num_classes});
  return out;
}

inline std::uint64_t count_params(const ModelConfig& c) { return analyze(c, c.image_size).params(); }

inline std::uint64_t analytic_madds(const ModelConfig& c, std::size_t resolution) {
  return analyze(c, resolution).madds();
}

}  // namespace volo
