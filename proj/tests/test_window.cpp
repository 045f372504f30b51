// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "volo/init.hpp"
#include "volo/window.hpp"

using namespace volo;

namespace {

double inner(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(WindowGeometry, CountsAndValidation) {
  EXPECT_EQ(WindowGeometry::centered(3, 2, 28, 28).windows(), 196u);
  EXPECT_EQ(WindowGeometry::centered(3, 1, 28, 28).windows(), 784u);
  EXPECT_EQ((WindowGeometry{3, 0, 1, 5, 7}).out_width(), 5u);
  EXPECT_THROW(WindowGeometry::centered(2, 1, 4, 4), GeometryError);
  EXPECT_THROW(WindowGeometry::centered(0, 1, 4, 4), GeometryError);
  EXPECT_THROW(WindowGeometry::centered(3, 0, 4, 4), GeometryError);
  WindowGeometry big{5, 0, 1, 3, 3};
  EXPECT_THROW(big.validate(), GeometryError);
}

TEST(Unfold, SingleTokenK1IsIdentity) {
  const Tensor<double> x({1, 1, 4}, std::vector<double>{1, 2, 3, 4});
  const auto u = unfold3(x, WindowGeometry{1, 0, 1, 1, 1});
  ASSERT_EQ(u.shape(), (Shape{1, 1, 4}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(u[i], x[i]);
}

TEST(Unfold, CornerWindowOfTwoByTwo) {
  const Tensor<double> x({2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  const auto u = unfold3(x, WindowGeometry::centered(3, 1, 2, 2));
  ASSERT_EQ(u.shape(), (Shape{4, 9, 1}));
  const std::vector<double> expect{0, 0, 0, 0, 1, 2, 0, 3, 4};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(u[i], expect[i]) << "offset " << i;
}

TEST(Unfold, StrideTwoOnStageOneGrid) {
  const auto g = WindowGeometry::centered(3, 2, 28, 28);
  EXPECT_EQ(g.out_height(), 14u);
  const auto u = unfold3(Tensor<double>({28, 28, 2}, 1.0), g);
  EXPECT_EQ(u.shape(), (Shape{196, 9, 2}));
}

TEST(Fold, CoverageCounts) {
  const auto g = WindowGeometry::centered(3, 1, 3, 3);
  const auto f = fold3(unfold3(Tensor<double>({3, 3, 1}, 1.0), g), g);
  const std::vector<double> expect{4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(f[i], expect[i]);
}

TEST(Fold, K1RoundTripIsIdentity) {
  Rng rng(2);
  const auto x = uniform<double>({4, 5, 3}, -1, 1, rng);
  const WindowGeometry g{1, 0, 1, 4, 5};
  const auto y = fold3(unfold3(x, g), g);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Fold, SingleTokenKeepsOnlyCentreEntry) {
  const auto g = WindowGeometry::centered(3, 1, 1, 1);
  Tensor<double> y({1, 9, 1});
  for (std::size_t u = 0; u < 9; ++u) y[u] = double(u + 1);
  const auto f = fold3(y, g);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0], 5.0);
}

TEST(Fold, InconsistentStackIsShapeError) {
  const auto g = WindowGeometry::centered(3, 1, 3, 3);
  EXPECT_THROW(fold3(Tensor<double>({8, 9, 1}), g), ShapeError);
  EXPECT_THROW(fold3(Tensor<double>({9, 4, 1}), g), ShapeError);
}

TEST(WindowOps, AdjointOverRandomGeometries) {
  std::mt19937_64 pick(11);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    auto draw = [&](std::size_t lo, std::size_t hi) {
      return std::uniform_int_distribution<std::size_t>(lo, hi)(pick);
    };
    const std::size_t k = 2 * draw(0, 2) + 1;
    WindowGeometry g{k, draw(0, k), draw(1, 3), draw(1, 9), draw(1, 9)};
    if (g.height + 2 * g.padding < k || g.width + 2 * g.padding < k) continue;
    const std::size_t c = draw(1, 4);
    const auto x = uniform<double>({g.height, g.width, c}, -1, 1, rng);
    const auto y = uniform<double>({g.windows(), g.offsets(), c}, -1, 1, rng);
    EXPECT_NEAR(inner(unfold3(x, g), y), inner(x, fold3(y, g)), 1e-10) << "seed " << seed;
  }
}

TEST(WindowOps, FoldUnfoldIsCoverageTimesInput) {
  Rng rng(5);
  for (std::size_t s : {1u, 2u}) {
    const auto g = WindowGeometry::centered(3, s, 7, 6);
    const auto cover = fold3(unfold3(Tensor<double>({7, 6, 1}, 1.0), g), g);
    const auto x = uniform<double>({7, 6, 3}, -1, 1, rng);
    const auto y = fold3(unfold3(x, g), g);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], cover[i / 3] * x[i], 1e-14);
  }
}

TEST(WindowOps, PaddingContributesExactZeros) {
  const auto g = WindowGeometry::centered(5, 1, 3, 3);
  const auto u = unfold3(Tensor<double>({3, 3, 1}, 7.0), g);
  std::size_t zeros = 0;
  for (double v : u.data()) {
    EXPECT_TRUE(v == 0.0 || v == 7.0);
    zeros += v == 0.0;
  }
  EXPECT_EQ(zeros, 9u * 25u - 9u * 9u);
}

TEST(WindowOps, Linearity) {
  Rng rng(8);
  const auto g = WindowGeometry::centered(3, 2, 6, 5);
  const auto x = uniform<double>({6, 5, 2}, -1, 1, rng);
  const auto z = uniform<double>({6, 5, 2}, -1, 1, rng);
  const double a = 0.75, b = -1.5;
  Tensor<double> mix(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + b * z[i];
  const auto ux = unfold3(x, g), uz = unfold3(z, g), um = unfold3(mix, g);
  for (std::size_t i = 0; i < um.size(); ++i) EXPECT_NEAR(um[i], a * ux[i] + b * uz[i], 1e-12);
  const auto fx = fold3(ux, g), fz = fold3(uz, g), fm = fold3(um, g);
  for (std::size_t i = 0; i < fm.size(); ++i) EXPECT_NEAR(fm[i], a * fx[i] + b * fz[i], 1e-12);
}

TEST(AvgPool, CeilModeMeans) {
  const Tensor<double> x({1, 3, 3, 1}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto p = avg_pool(x, 2);
  ASSERT_EQ(p.shape(), (Shape{1, 2, 2, 1}));
  EXPECT_DOUBLE_EQ(p[0], 3.0);
  EXPECT_DOUBLE_EQ(p[1], 4.5);
  EXPECT_DOUBLE_EQ(p[2], 7.5);
  EXPECT_DOUBLE_EQ(p[3], 9.0);
}

TEST(Patchify, GathersNonOverlappingBlocks) {
  Tensor<double> x({1, 4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) x[i] = double(i);
  Tape<double> tape;
  const auto p = ops::patchify(tape.constant(x), 2).value();
  ASSERT_EQ(p.shape(), (Shape{1, 2, 2, 4}));
  const std::vector<double> first{0, 1, 4, 5}, last{10, 11, 14, 15};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(p[i], first[i]);
    EXPECT_EQ(p[12 + i], last[i]);
  }
  EXPECT_THROW(ops::patchify(tape.constant(Tensor<double>({1, 5, 4, 1})), 2), ShapeError);
}
