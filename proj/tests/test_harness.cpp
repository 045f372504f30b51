// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <string>
#include <sys/wait.h>

#include "volo/bench.hpp"
#include "volo/data.hpp"
#include "volo/gradcheck.hpp"
#include "volo/train.hpp"
#include "volo/verify.hpp"

using namespace volo;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(VOLO_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

SyntheticDataset small_data(std::size_t per_class, double noise = 0.25, std::uint64_t seed = 0) {
  SyntheticSpec s;
  s.per_class = per_class;
  s.noise = noise;
  s.seed = seed;
  return make_synthetic(s);
}

}  // namespace

TEST(Synthetic, NoiselessImagesMatchTheirTemplate) {
  EXPECT_EQ(nearest_template_accuracy(small_data(5, 0.0)), 1.0);
}

TEST(Synthetic, DefaultNoiseKeepsClassesSeparable) {
  EXPECT_GE(nearest_template_accuracy(small_data(10)), 0.99);
}

TEST(Synthetic, DeterministicAndBalanced) {
  const auto a = small_data(4, 0.25, 7), b = small_data(4, 0.25, 7), c = small_data(4, 0.25, 8);
  EXPECT_TRUE(std::ranges::equal(a.images.data(), b.images.data()));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(std::ranges::equal(a.images.data(), c.images.data()));
  for (std::size_t k = 0; k < 10; ++k)
    EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), int(k)), 4);
}

TEST(Synthetic, PixelMeanTracksTemplateMean) {
  SyntheticSpec s;
  s.image_size = 8;
  s.per_class = 1000;
  const auto d = make_synthetic(s);
  ASSERT_EQ(d.size(), 10000u);
  const auto px = d.images.data(), tp = d.templates.data();
  const double mean = std::accumulate(px.begin(), px.end(), 0.0) / double(px.size());
  const double target = std::accumulate(tp.begin(), tp.end(), 0.0) / double(tp.size());
  EXPECT_NEAR(mean, target, 0.1);
}

TEST(Synthetic, RejectsEmptySpecs) {
  SyntheticSpec s;
  s.classes = 0;
  EXPECT_THROW(make_synthetic(s), std::invalid_argument);
  s = {};
  s.noise = -1.0;
  EXPECT_THROW(make_synthetic(s), std::invalid_argument);
}

TEST(Gradcheck, SuitePassesAndIsDeterministic) {
  gradcheck::Options opt;
  opt.seeds = 1;
  const auto a = gradcheck::run(opt), b = gradcheck::run(opt);
  EXPECT_TRUE(a.passed()) << a.table();
  ASSERT_EQ(a.cases.size(), b.cases.size());
  for (std::size_t i = 0; i < a.cases.size(); ++i) EXPECT_EQ(a.cases[i].error, b.cases[i].error);
}

TEST(Gradcheck, DetectsInjectedFault) {
  gradcheck::Options opt;
  opt.seeds = 1;
  opt.inject_fault = true;
  const auto r = gradcheck::run(opt);
  EXPECT_FALSE(r.passed());
  std::size_t failing = 0;
  for (const auto& c : r.cases) {
    if (!c.pass) {
      ++failing;
      EXPECT_NE(c.name.find("fault"), std::string::npos) << c.name;
    }
  }
  EXPECT_EQ(failing, 1u);
}

TEST(Bench, OneRowPerKindAndShape) {
  const std::vector<AttentionKind> kinds{AttentionKind::outlook, AttentionKind::self_attention,
                                         AttentionKind::local_self_attention,
                                         AttentionKind::convolution};
  const std::vector<CostQuery> shapes{{4, 4, 8, 3, 2}, {6, 6, 8, 3, 2}};
  const auto rows = run_bench(kinds, shapes, 1, 2);
  ASSERT_EQ(rows.size(), 8u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].kind, kinds[i / 2]);
    EXPECT_EQ(rows[i].shape.height, shapes[i % 2].height);
    EXPECT_GE(rows[i].median_ms, 0.0);
    EXPECT_GT(rows[i].measured_madds, 0u);
  }
  const auto csv = bench_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  EXPECT_EQ(csv.rfind("kind,height", 0), 0u);
}

TEST(Training, ScheduleWarmsUpThenDecays) {
  TrainOptions o;
  o.steps = 100;
  o.warmup = 10;
  o.lr = 1.0;
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 0), 0.1);
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 9), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 10), 1.0);
  EXPECT_NEAR(scheduled_lr(o, 100), 0.1, 1e-12);
  for (std::size_t s = 11; s < 100; ++s) EXPECT_LE(scheduled_lr(o, s), scheduled_lr(o, s - 1));
}

TEST(Training, ZeroLearningRateKeepsLossConstant) {
  auto c = presets::tiny();
  c.drop_path_max = 0.0;
  const auto data = small_data(2);
  TrainOptions o;
  o.steps = 3;
  o.lr = 0.0;
  o.batch = 32;
  const auto r = train_toy(c, data, o);
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.records[1].loss, r.records[0].loss);
  EXPECT_EQ(r.records[2].loss, r.records[0].loss);
}

TEST(Training, SameSeedGivesIdenticalCurves) {
  const auto data = small_data(4);
  TrainOptions o;
  o.steps = 6;
  o.batch = 8;
  o.warmup = 2;
  const auto a = train_toy(presets::tiny(), data, o), b = train_toy(presets::tiny(), data, o);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].loss, b.records[i].loss);
    EXPECT_TRUE(std::isfinite(a.records[i].loss));
  }
  EXPECT_EQ(a.final_accuracy, b.final_accuracy);
}

TEST(Training, DivergenceAborts) {
  const auto data = small_data(2);
  TrainOptions o;
  o.steps = 30;
  o.lr = 1e30;
  o.warmup = 0;
  EXPECT_THROW(train_toy(presets::tiny(), data, o), TrainingDiverged);
}

TEST(Training, RejectsMismatchedData) {
  SyntheticSpec s;
  s.image_size = 16;
  s.per_class = 1;
  EXPECT_THROW(train_toy(presets::tiny(), make_synthetic(s), TrainOptions{}), ConfigError);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("inspect d1"), 0);
  EXPECT_EQ(run_cli("inspect d1 --json"), 0);
  EXPECT_EQ(run_cli("inspect d9"), 2);
  EXPECT_EQ(run_cli("inspect d1 --no-such-flag"), 2);
  EXPECT_EQ(run_cli("inspect d1 --resolution 100"), 2);
  EXPECT_EQ(run_cli("oracle-check --seeds 3"), 0);
  EXPECT_EQ(run_cli("oracle-check --max-size 40"), 2);
  EXPECT_EQ(run_cli("gradcheck --seeds 1 --inject-fault"), 1);
  EXPECT_EQ(run_cli("bench --kinds oa,sa --resolution 4 --channels 8 --heads 2 --reps 1"), 0);
  EXPECT_EQ(run_cli("bench --kinds xx"), 2);
  EXPECT_EQ(run_cli("gen-data --classes 2 --per-class 1 --resolution 8"), 0);
  EXPECT_EQ(run_cli("train-toy --steps 1 --per-class 1 --batch 4"), 0);
  EXPECT_EQ(run_cli("train-toy --steps 30 --per-class 1 --lr 1e30"), 1);
  EXPECT_EQ(run_cli(""), 2);
}
