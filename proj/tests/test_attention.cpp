// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "volo/attention.hpp"
#include "volo/gradcheck.hpp"
#include "volo/oracle.hpp"

using namespace volo;

namespace {

// (x W_V) W_O + b_O evaluated longhand for a [.., C] tensor.
Tensor<double> value_then_proj(const Tensor<double>& x, const Tensor<double>& wv,
                               const Tensor<double>& wo, const Tensor<double>& bo) {
  const std::size_t c = wv.extent(0), tokens = x.size() / c;
  Tensor<double> out(x.shape());
  for (std::size_t t = 0; t < tokens; ++t)
    for (std::size_t o = 0; o < c; ++o) {
      double acc = bo[o];
      for (std::size_t m = 0; m < c; ++m) {
        double v = 0.0;
        for (std::size_t i = 0; i < c; ++i) v += x[t * c + i] * wv[i * c + m];
        acc += v * wo[m * c + o];
      }
      out[t * c + o] = acc;
    }
  return out;
}

void expect_close(const Tensor<double>& a, const Tensor<double>& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  const auto d = oracle::compare(a, b);
  EXPECT_LE(d.max_rel, tol) << "max abs " << d.max_abs;
}

}  // namespace

TEST(OutlookAttention, KernelOneCollapsesToProjections) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto layer = OutlookAttention<double>::create(6, 3, 1, 1, rng);
    gradcheck::randomize(layer, rng);
    const auto x = uniform<double>({4, 3, 6}, -1, 1, rng);
    expect_close(outlook_attention(x, layer),
                 value_then_proj(x, layer.v_weight.value, layer.proj_weight.value,
                                 layer.proj_bias.value),
                 1e-12);
  }
}

TEST(OutlookAttention, SingleTokenZeroLogitsGivesNinth) {
  Rng rng(4);
  auto layer = OutlookAttention<double>::create(4, 2, 3, 1, rng);
  gradcheck::randomize(layer, rng);
  layer.attn_weight.value.fill(0.0);
  layer.attn_bias.value.fill(0.0);
  layer.proj_bias.value.fill(0.0);
  const auto x = uniform<double>({1, 1, 4}, -1, 1, rng);
  auto expect = value_then_proj(x, layer.v_weight.value, layer.proj_weight.value,
                                layer.proj_bias.value);
  for (auto& v : expect.data()) v /= 9.0;
  expect_close(outlook_attention(x, layer), expect, 1e-12);
}

TEST(OutlookAttention, MatchesOracleOnSixBySix) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto layer = OutlookAttention<double>::create(8, 2, 3, 1, rng);
    gradcheck::randomize(layer, rng);
    const auto x = uniform<double>({6, 6, 8}, -1, 1, rng);
    expect_close(outlook_attention(x, layer), oracle::outlook_attention(x, layer), 1e-6);
  }
}

TEST(OutlookAttention, StridedKeepsResolution) {
  Rng rng(1);
  auto layer = OutlookAttention<double>::create(4, 2, 3, 2, rng);
  const auto x = uniform<double>({2, 28, 28, 4}, -1, 1, rng);
  EXPECT_EQ(outlook_attention(x, layer).shape(), x.shape());
  EXPECT_EQ(layer.geometry(28, 28).windows(), 196u);
}

TEST(OutlookAttention, RejectsEvenKernelAndChannelMismatch) {
  Rng rng(0);
  EXPECT_THROW(OutlookAttention<double>::create(4, 2, 2, 1, rng), GeometryError);
  EXPECT_THROW(OutlookAttention<double>::create(6, 4, 3, 1, rng), std::invalid_argument);
  auto layer = OutlookAttention<double>::create(4, 2, 3, 1, rng);
  EXPECT_THROW(outlook_attention(Tensor<double>({3, 3, 5}), layer), ShapeError);
}

TEST(OutlookAttention, AttentionRowsSumToOne) {
  // a constant map seen by a location whose 9 covering windows lie fully
  // inside the grid: the output there is 9 (x W_V) W_O + b for any logits
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto layer = OutlookAttention<double>::create(4, 2, 3, 1, rng);
    gradcheck::randomize(layer, rng, 2.0);
    const auto token = uniform<double>({1, 1, 4}, -1, 1, rng);
    Tensor<double> x({5, 5, 4});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = token[i % 4];
    auto scaled = token;
    for (auto& v : scaled.data()) v *= 9.0;
    const auto expect = value_then_proj(scaled, layer.v_weight.value, layer.proj_weight.value,
                                        layer.proj_bias.value);
    const auto y = outlook_attention(x, layer);
    for (std::size_t ch = 0; ch < 4; ++ch)
      EXPECT_NEAR(y.at({2, 2, ch}), expect[ch], 1e-12 * std::max(1.0, std::abs(expect[ch])));
  }
}

TEST(OutlookAttention, MultiHeadIsConcatenationOfSingleHeads) {
  Rng rng(21);
  const std::size_t c = 6, heads = 3, ch = 2, k = 3, k4 = 81;
  auto multi = OutlookAttention<double>::create(c, heads, k, 1, rng);
  gradcheck::randomize(multi, rng);
  const auto x = uniform<double>({1, 5, 4, c}, -1, 1, rng);
  Tape<double> tape;
  const auto full = multi.aggregate(tape, tape.constant(x)).value();

  for (std::size_t n = 0; n < heads; ++n) {
    // single head reading all C inputs, writing the head's slice of V and A
    auto single = OutlookAttention<double>::create(ch, 1, k, 1, rng);
    Tensor<double> wv({c, ch}), wa({c, k4}), ba({k4});
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < ch; ++j) wv[i * ch + j] = multi.v_weight.value[i * c + n * ch + j];
      for (std::size_t j = 0; j < k4; ++j)
        wa[i * k4 + j] = multi.attn_weight.value[i * heads * k4 + n * k4 + j];
    }
    for (std::size_t j = 0; j < k4; ++j) ba[j] = multi.attn_bias.value[n * k4 + j];
    Tape<double> t;
    auto xv = t.constant(x);
    auto v = ops::linear(xv, t.constant(wv));
    auto logits = ops::linear(xv, t.constant(wa), t.constant(ba));
    const auto part =
        ops::outlook_aggregate(v, logits, WindowGeometry::centered(k, 1, 5, 4), 1).value();
    for (std::size_t p = 0; p < 20; ++p)
      for (std::size_t j = 0; j < ch; ++j)
        EXPECT_NEAR(full[p * c + n * ch + j], part[p * ch + j], 1e-12);
  }
}

TEST(LocalSelfAttention, SingleTokenAttendsToItself) {
  Rng rng(3);
  auto layer = LocalSelfAttention<double>::create(4, 2, 3, rng);
  gradcheck::randomize(layer, rng);
  const auto x = uniform<double>({1, 1, 4}, -1, 1, rng);
  expect_close(local_self_attention(x, layer),
               value_then_proj(x, layer.v_weight.value, layer.proj_weight.value,
                               layer.proj_bias.value),
               1e-12);
}

TEST(LocalSelfAttention, IdenticalTokensGiveIdenticalOutputs) {
  Rng rng(5);
  auto layer = LocalSelfAttention<double>::create(4, 2, 3, rng);
  gradcheck::randomize(layer, rng);
  const auto token = uniform<double>({4}, -1, 1, rng);
  Tensor<double> x({5, 5, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = token[i % 4];
  const auto y = local_self_attention(x, layer);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], y[i % 4], 1e-12);
}

TEST(LocalSelfAttention, MatchesOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto layer = LocalSelfAttention<double>::create(6, 3, 3, rng);
    gradcheck::randomize(layer, rng);
    const auto x = uniform<double>({5, 4, 6}, -1, 1, rng);
    expect_close(local_self_attention(x, layer), oracle::local_self_attention(x, layer), 1e-6);
  }
}

TEST(SelfAttention, SingleTokenIsProjection) {
  Rng rng(6);
  auto layer = SelfAttention<double>::create(4, 2, rng);
  gradcheck::randomize(layer, rng);
  const auto x = uniform<double>({1, 4}, -1, 1, rng);
  expect_close(self_attention(x, layer),
               value_then_proj(x, layer.v_weight.value, layer.proj_weight.value,
                               layer.proj_bias.value),
               1e-12);
}

TEST(SelfAttention, PermutationEquivariant) {
  Rng rng(7);
  auto layer = SelfAttention<double>::create(4, 2, rng);
  gradcheck::randomize(layer, rng);
  const auto x = uniform<double>({6, 4}, -1, 1, rng);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Tensor<double> xp({6, 4});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 4; ++c) xp[i * 4 + c] = x[perm[i] * 4 + c];
  const auto y = self_attention(x, layer), yp = self_attention(xp, layer);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(yp[i * 4 + c], y[perm[i] * 4 + c], 1e-12);
}

TEST(SelfAttention, MatchesOracleOnFiveTokens) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto layer = SelfAttention<double>::create(8, 2, rng);
    gradcheck::randomize(layer, rng);
    const auto x = uniform<double>({5, 8}, -1, 1, rng);
    expect_close(self_attention(x, layer), oracle::self_attention(x, layer), 1e-6);
  }
}

TEST(Conv, IdentityKernel) {
  Rng rng(1);
  auto layer = Conv2d<double>::same(3, 3, 1, rng);
  layer.weight.value.fill(0.0);
  for (std::size_t i = 0; i < 3; ++i) layer.weight.value[i * 3 + i] = 1.0;
  const auto x = uniform<double>({4, 4, 3}, -1, 1, rng);
  const auto y = conv_layer(x, layer);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv, OnesKernelGivesCoverageCounts) {
  Rng rng(1);
  auto layer = Conv2d<double>::same(1, 1, 3, rng);
  layer.weight.value.fill(1.0);
  const auto y = conv_layer(Tensor<double>({3, 3, 1}, 1.0), layer);
  const std::vector<double> expect{4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y[i], expect[i]);
}

TEST(Conv, MatchesDirectLoops) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto layer = Conv2d<double>::same(3, 5, 3, rng);
    gradcheck::randomize(layer, rng);
    const auto x = uniform<double>({6, 5, 3}, -1, 1, rng);
    expect_close(conv_layer(x, layer), oracle::conv_layer(x, layer), 1e-6);
  }
}

TEST(AllKinds, PreserveShapeAtStrideOne) {
  Rng rng(2);
  const auto x = uniform<double>({2, 5, 6, 8}, -1, 1, rng);
  EXPECT_EQ(outlook_attention(x, OutlookAttention<double>::create(8, 2, 3, 1, rng)).shape(), x.shape());
  EXPECT_EQ(local_self_attention(x, LocalSelfAttention<double>::create(8, 2, 3, rng)).shape(), x.shape());
  EXPECT_EQ(conv_layer(x, Conv2d<double>::same(8, 8, 3, rng)).shape(), x.shape());
  const auto t = x.reshaped({2, 30, 8});
  EXPECT_EQ(self_attention(t, SelfAttention<double>::create(8, 2, rng)).shape(), t.shape());
}

TEST(Madds, WorkedExamples) {
  EXPECT_EQ(madds({28, 28, 192, 3, 6}, AttentionKind::outlook), 132314112u);
  EXPECT_EQ(madds({14, 14, 384, 3, 12}, AttentionKind::self_attention), 145108992u);
  EXPECT_EQ(madds({28, 28, 384, 3, 6}, AttentionKind::local_self_attention), 467841024u);
}

TEST(Madds, ClosedFormsOnRandomQueries) {
  std::mt19937_64 rng(123);
  auto draw = [&](std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
  };
  for (int trial = 0; trial < 20; ++trial) {
    const std::uint64_t h = draw(1, 64), w = draw(1, 64), n = draw(1, 16), c = n * draw(1, 64);
    const std::uint64_t k = 2 * draw(0, 3) + 1;
    const CostQuery q{h, w, c, k, n};
    const std::uint64_t tokens = h * w;
    EXPECT_EQ(madds(q, AttentionKind::self_attention),
              4 * tokens * c * c + 2 * tokens * tokens * c);
    EXPECT_EQ(madds(q, AttentionKind::local_self_attention),
              4 * tokens * c * c + 2 * tokens * k * k * c);
    EXPECT_EQ(madds(q, AttentionKind::outlook),
              tokens * c * (2 * c + n * k * k * k * k) + tokens * k * k * c);
    EXPECT_EQ(outlook_madds_strided(q, 1), madds(q, AttentionKind::outlook));
  }
}

TEST(Madds, OutlookCheaperThanLocalAttentionWhenNK4Below2C) {
  for (std::uint64_t h = 1; h <= 64; ++h)
    for (std::uint64_t w = 1; w <= 64; w += 3) {
      const CostQuery q{h, w, 384, 3, 6};
      EXPECT_LT(madds(q, AttentionKind::outlook), madds(q, AttentionKind::local_self_attention));
    }
}

TEST(MeasuredMadds, SelfAndLocalAttentionMatchClosedForms) {
  const CostQuery sa{14, 14, 384, 3, 12};
  EXPECT_EQ(measured_madds(AttentionKind::self_attention, sa), madds(sa, AttentionKind::self_attention));
  const CostQuery lsa{12, 12, 48, 3, 6};
  EXPECT_EQ(measured_madds(AttentionKind::local_self_attention, lsa),
            madds(lsa, AttentionKind::local_self_attention));
}

TEST(MeasuredMadds, OutlookCountsFullAggregationProduct) {
  // the K^2 x K^2 by K^2 x C product per window and head costs HW K^4 C, where
  // the closed form carries HW K^2 C; everything else matches term by term
  const CostQuery q{28, 28, 192, 3, 6};
  const std::uint64_t hw = 784, c = 192, k2 = 9;
  EXPECT_EQ(measured_madds(AttentionKind::outlook, q),
            madds(q, AttentionKind::outlook) - hw * k2 * c + hw * k2 * k2 * c);
}

TEST(MeasuredMadds, ConvolutionMatchesClosedForm) {
  const CostQuery q{10, 9, 16, 3, 1};
  EXPECT_EQ(measured_madds(AttentionKind::convolution, q), madds(q, AttentionKind::convolution));
}
