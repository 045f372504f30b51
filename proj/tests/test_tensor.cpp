// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "volo/autodiff.hpp"
#include "volo/init.hpp"
#include "volo/ops.hpp"
#include "volo/oracle.hpp"

using namespace volo;

namespace {

Tensor<double> mat(Shape s, std::vector<double> v) { return Tensor<double>(std::move(s), std::move(v)); }

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const auto b = mat({2, 2}, {1, 2, 3, 4});
  const auto c = matmul(mat({2, 2}, {1, 0, 0, 1}), b);
  EXPECT_EQ(c.shape(), b.shape());
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(c[i], b[i]);
}

TEST(Matmul, RowTimesColumn) {
  const auto c = matmul(mat({1, 2}, {1, 2}), mat({2, 1}, {3, 4}));
  ASSERT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c[0], 11.0);
}

TEST(Matmul, CounterAddsMKN) {
  MAddCounter counter;
  matmul(Tensor<double>({4, 5}, 1.0), Tensor<double>({5, 6}, 1.0), &counter);
  EXPECT_EQ(counter.total(), 120u);
  matmul(Tensor<double>({3, 2}, 1.0), Tensor<double>({2, 7}, 1.0), &counter);
  EXPECT_EQ(counter.total(), 120u + 42u);
  counter.reset();
  EXPECT_EQ(counter.total(), 0u);
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor<double>({2, 3}), Tensor<double>({4, 5}));
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("2x3"), std::string::npos) << what;
    EXPECT_NE(what.find("4x5"), std::string::npos) << what;
  }
}

TEST(Softmax, Examples) {
  Tape<double> tape;
  auto a = ops::softmax(tape.constant(mat({2}, {0, 0})));
  EXPECT_DOUBLE_EQ(a.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(a.value()[1], 0.5);
  auto b = ops::softmax(tape.constant(mat({2}, {std::log(2.0), 0})));
  EXPECT_NEAR(b.value()[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b.value()[1], 1.0 / 3.0, 1e-15);
  auto c = ops::softmax(tape.constant(mat({2}, {1000, 0})));
  EXPECT_NEAR(c.value()[0], 1.0, 1e-12);
  EXPECT_NEAR(c.value()[1], 0.0, 1e-12);
  EXPECT_FALSE(std::isnan(c.value()[1]));
}

TEST(Softmax, SlicesSumToOneIncludingExtremes) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tape<double> td;
    Tape<float> tf;
    auto x = uniform<double>({4, 7, 5}, -1e4, 1e4, rng);
    for (int axis : {0, 1, 2}) {
      const auto yd = ops::softmax(td.constant(x), axis).value();
      const auto yf = ops::softmax(tf.constant(x.cast<float>()), axis).value();
      const Shape& s = x.shape();
      const auto st = kernel::strides_of(s);
      for (std::size_t base = 0; base < x.size(); ++base) {
        std::size_t coord = (base / st[axis]) % s[axis];
        if (coord != 0) continue;
        double sd = 0.0, sf = 0.0;
        for (std::size_t j = 0; j < s[axis]; ++j) {
          sd += yd[base + j * st[axis]];
          sf += yf[base + j * st[axis]];
        }
        EXPECT_NEAR(sd, 1.0, 1e-12);
        EXPECT_NEAR(sf, 1.0, 1e-6);
      }
    }
  }
}

TEST(LayerNorm, Examples) {
  Tape<double> tape;
  auto ones = tape.constant(Tensor<double>({2}, 1.0));
  auto zeros = tape.constant(Tensor<double>({2}, 0.0));
  auto flat = ops::layer_norm(tape.constant(mat({1, 2}, {5, 5})), ones, zeros);
  EXPECT_EQ(flat.value()[0], 0.0);
  EXPECT_EQ(flat.value()[1], 0.0);
  auto unit = ops::layer_norm(tape.constant(mat({1, 2}, {1, 3})), ones, zeros, 0.0);
  EXPECT_DOUBLE_EQ(unit.value()[0], -1.0);
  EXPECT_DOUBLE_EQ(unit.value()[1], 1.0);
  auto c = ops::layer_norm(tape.constant(mat({2, 2}, {1, 3, -4, 9})), zeros,
                           tape.constant(Tensor<double>({2}, 0.25)));
  for (double v : c.value().data()) EXPECT_EQ(v, 0.25);
}

TEST(Linear, Examples) {
  Tape<double> tape;
  Rng rng(1);
  const auto x = uniform<double>({3, 4, 5}, -1, 1, rng);
  Tensor<double> eye({5, 5});
  for (std::size_t i = 0; i < 5; ++i) eye[i * 5 + i] = 1.0;
  auto same = ops::linear(tape.constant(x), tape.constant(eye), tape.constant(Tensor<double>({5})));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(same.value()[i], x[i]);

  auto y = ops::linear(tape.constant(mat({1, 2}, {1, 1})), tape.constant(mat({2, 1}, {1, 2})),
                       tape.constant(mat({1}, {3})));
  EXPECT_EQ(y.value()[0], 6.0);
}

TEST(Linear, CounterForStageOneProjection) {
  Tape<float> tape;
  tape.set_grad_enabled(false);
  ops::linear(tape.constant(Tensor<float>({1, 28, 28, 192})), tape.constant(Tensor<float>({192, 192})));
  EXPECT_EQ(tape.counter().total(), 28901376u);
}

TEST(Linear, CounterIgnoresNonMatmulOps) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({3, 4}, 1.0));
  auto y = ops::gelu(ops::softmax(ops::add(x, x)));
  ops::sum(ops::mul(y, y));
  EXPECT_EQ(tape.counter().total(), 0u);
}

TEST(Backward, SumGivesOnes) {
  Tape<double> tape;
  auto x = tape.input(mat({2, 3}, {1, -2, 3, 0.5, 7, -1}));
  tape.backward(ops::sum(x));
  const auto g = tape.grad(x);
  for (double v : g.data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, HalfSquaredNormGivesInput) {
  Tape<double> tape;
  const auto v = mat({4}, {1, -2, 3, 0.5});
  auto x = tape.input(v);
  tape.backward(ops::scale(ops::sum(ops::mul(x, x)), 0.5));
  const auto g = tape.grad(x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(g[i], v[i]);
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto x = uniform<double>({3, 4}, -1, 1, rng);
    auto w = uniform<double>({4, 5}, -1, 1, rng);
    auto r = uniform<double>({3, 5}, -1, 1, rng);
    auto loss = [&](Tape<double>& t, Var<double> xv) {
      return ops::sum(ops::mul(ops::softmax(ops::linear(xv, t.constant(w))), t.constant(r)));
    };
    Tape<double> tape;
    auto xv = tape.input(x);
    tape.backward(loss(tape, xv));
    const auto analytic = tape.grad(xv);
    const auto numeric = oracle::finite_diff_grad(
        [&] {
          Tape<double> t;
          return loss(t, t.constant(x)).value();
        },
        {&x});
    double diff = 0.0, scale = 1e-12;
    for (std::size_t i = 0; i < x.size(); ++i) {
      diff = std::max(diff, std::abs(analytic[i] - numeric[0][i]));
      scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[0][i])});
    }
    EXPECT_LT(diff / scale, 1e-4) << "seed " << seed;
  }
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape<double> tape;
  auto x = tape.input(Tensor<double>({2}, 1.0));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Backward, EveryParameterGetsGradientOfItsShape) {
  Rng rng(0);
  auto w = weight_param<double>("w", {3, 2}, rng);
  auto b = zeros_param<double>("b", {2});
  Tape<double> tape;
  auto y = ops::linear(tape.constant(uniform<double>({4, 3}, -1, 1, rng)), tape.param(w), tape.param(b));
  tape.backward(ops::sum(y));
  EXPECT_EQ(w.grad.shape(), w.value.shape());
  EXPECT_EQ(b.grad.shape(), b.value.shape());
  for (double g : b.grad.data()) EXPECT_EQ(g, 4.0);
}

TEST(Layout, ReshapePermuteRoundTripsAreExact) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = uniform<double>({2, 3, 4, 5}, -1, 1, rng);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    const auto back = permute(permute(x, perm), inverse_permutation(perm));
    ASSERT_EQ(back.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(back[i], x[i]);
    const auto r = x.reshaped({6, 20}).reshaped({2, 3, 4, 5});
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(r[i], x[i]);

    auto sorted = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      return v;
    };
    const auto p = permute(x, perm);
    EXPECT_EQ(sorted({p.data().begin(), p.data().end()}), sorted({x.data().begin(), x.data().end()}));
  }
}

TEST(Tensor, ConstructionValidatesSize) {
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_EQ(Tensor<float>({3, 4}).size(), 12u);
}
