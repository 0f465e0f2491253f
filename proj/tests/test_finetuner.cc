#include <gtest/gtest.h>

#include <cmath>

#include "support.h"
#include "tstereo/finetuner.h"
#include "tstereo/selector.h"

using namespace tstereo;
using namespace tstereo::testing;

namespace {

ProbeResult probe_at(int u, int v, double disparity) {
  ProbeResult p;
  p.touch.u = u;
  p.touch.v = v;
  p.derived_disparity_px = disparity;
  p.success = true;
  return p;
}

const PatchTarget* find(const TactileLabel& l, int x, int y) {
  for (const auto& t : l.patch)
    if (t.x == x && t.y == y) return &t;
  return nullptr;
}

}  // namespace

TEST(TactileLabel, GaussianBlendWeights) {
  FinetuneConfig cfg;  // p = 7, sigma = 12
  cfg.patch_radius = 12;
  const Image prior(40, 40, 10.0);
  const TactileLabel l = build_tactile_label(probe_at(20, 20, 30.0), prior, cfg);
  EXPECT_EQ(l.patch.front().x, 20);
  EXPECT_EQ(l.patch.front().weight, 1.0);
  EXPECT_EQ(l.patch.front().target, 30.0);
  const PatchTarget* side = find(l, 32, 20);
  ASSERT_NE(side, nullptr);
  EXPECT_NEAR(side->weight, 0.60653, 1e-5);
  EXPECT_NEAR(side->weight, std::exp(-0.5), 1e-15);
  EXPECT_NEAR(side->target, 10.0 + 20.0 * std::exp(-0.5), 1e-12);
  const PatchTarget* corner = find(l, 27, 27);
  ASSERT_NE(corner, nullptr);
  EXPECT_NEAR(corner->weight, std::exp(-98.0 / 288.0), 1e-15);
  EXPECT_NEAR(corner->weight, 0.71160, 1e-4);
}

TEST(TactileLabel, ClippedAtBorderAndMonotone) {
  FinetuneConfig cfg;
  cfg.patch_radius = 3;
  cfg.patch_sigma = 2.0;
  const Image prior(10, 10, 4.0);
  const TactileLabel l = build_tactile_label(probe_at(0, 1, 9.0), prior, cfg);
  EXPECT_EQ(l.patch.size(), 4u * 5u);  // columns 0..3, rows 0..4
  for (const auto& t : l.patch) {
    EXPECT_GE(t.target, 4.0);
    EXPECT_LE(t.target, 9.0);
    const double r2 = t.x * t.x + (t.y - 1) * (t.y - 1);
    EXPECT_NEAR(t.target, 4.0 + 5.0 * std::exp(-r2 / 8.0), 1e-12);
  }
  ProbeResult failed = probe_at(1, 1, 5.0);
  failed.success = false;
  EXPECT_THROW(build_tactile_label(failed, prior, cfg), std::invalid_argument);
}

TEST(TactileLoss, Branches) {
  FinetuneConfig cfg;
  cfg.patch_radius = 2;
  const Image prior(10, 10, 6.0);
  std::vector<TactileLabel> labels{build_tactile_label(probe_at(5, 5, 6.0), prior, cfg)};
  EXPECT_EQ(tactile_loss(Image(10, 10, 6.0), labels, cfg), 0.0);
  EXPECT_DOUBLE_EQ(tactile_loss(Image(10, 10, 6.5), labels, cfg), 0.125);
  EXPECT_DOUBLE_EQ(tactile_loss(Image(10, 10, 8.0), labels, cfg), 1.5);
  EXPECT_THROW(tactile_loss(prior, std::vector<TactileLabel>{}, cfg), std::invalid_argument);
}

TEST(TactileLoss, ModesAgreeForSinglePixelPatch) {
  FinetuneConfig cfg;
  cfg.patch_radius = 0;
  const Image prior(8, 8, 3.0);
  std::vector<TactileLabel> labels{build_tactile_label(probe_at(2, 3, 5.5), prior, cfg),
                                   build_tactile_label(probe_at(6, 6, 1.0), prior, cfg)};
  Image pred(8, 8, 2.5);
  pred.at(6, 6) = 1.2;
  const double patch = tactile_loss(pred, labels, cfg);
  cfg.mode = TactileMode::kPixel;
  EXPECT_EQ(tactile_loss(pred, labels, cfg), patch);
}

TEST(PseudoMask, ThresholdIsInclusive) {
  EXPECT_EQ(pseudo_mask(Image(3, 3, 1.0), 0.9999), Mask(3, 3, 1));
  EXPECT_EQ(pseudo_mask(Image(3, 3, 0.9999), 0.9999), Mask(3, 3, 1));
  EXPECT_EQ(pseudo_mask(Image(3, 3, 0.99), 0.9999), Mask(3, 3, 0));
}

TEST(Regularization, Cases) {
  const Image prior(4, 4, 2.0);
  const Mask all(4, 4, 1);
  EXPECT_EQ(regularization_loss(prior, prior, all, 1.0), 0.0);
  EXPECT_EQ(regularization_loss(Image(4, 4, 9.0), prior, Mask(4, 4, 0), 1.0), 0.0);
  EXPECT_DOUBLE_EQ(regularization_loss(Image(4, 4, 3.0), prior, all, 1.0), 0.5);
}

class FinetuneFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    views = {shifted_pair(1, 32, 16, 4), shifted_pair(2, 32, 16, 4)};
    for (int i = 0; i < 2; ++i) views[i].scene_id = 3000 + i;
    // The lower half of each view actually sits at disparity 6.
    for (auto& v : views)
      for (int y = 8; y < 16; ++y)
        for (int x = 0; x < 32; ++x) v.gt_disparity.at(x, y) = 6.0;
    hyps = DisparityHypotheses::uniform(1, 8);
    pretrained = random_state(4, {}, 3, 1.0, 0.3);
    pretrained.role = ModelRole::kPretrained;
    for (const auto& v : views)
      for (int k = 0; k < 4; ++k)
        probes.push_back(probe_at(10 + 4 * k, 12, 6.0)), probes.back().touch.scene_id = v.scene_id;
  }
  std::vector<SceneSample> views;
  DisparityHypotheses hyps;
  ModelState pretrained;
  std::vector<ProbeResult> probes;
};

TEST_F(FinetuneFixture, ZeroEpochsOrWeightsKeepState) {
  FinetuneConfig cfg;
  cfg.epochs = 0;
  FinetuneResult r = finetune(pretrained, views, probes, hyps, cfg);
  EXPECT_EQ(r.state.weights, pretrained.weights);
  EXPECT_EQ(r.state.role, ModelRole::kFinetuned);
  cfg.epochs = 3;
  cfg.tactile_weight = 0.0;
  cfg.regularization_weight = 0.0;
  r = finetune(pretrained, views, probes, hyps, cfg);
  EXPECT_EQ(r.state.weights, pretrained.weights);
  EXPECT_EQ(r.state.log_temperature, pretrained.log_temperature);
}

TEST_F(FinetuneFixture, RequiresPretrainedRole) {
  ModelState raw = pretrained;
  raw.role = ModelRole::kUntrained;
  EXPECT_THROW(finetune(raw, views, probes, hyps, FinetuneConfig{}), std::invalid_argument);
}

TEST_F(FinetuneFixture, LossesNonnegativeAndTactileFalls) {
  FinetuneConfig cfg;
  cfg.adam.learning_rate = 1e-2;
  cfg.epochs = 15;
  cfg.patch_radius = 2;
  cfg.patch_sigma = 2.0;
  const FinetuneResult r = finetune(pretrained, views, probes, hyps, cfg);
  ASSERT_FALSE(r.diverged) << r.diagnostic;
  ASSERT_EQ(r.log.size(), 15u);
  EXPECT_EQ(r.labels_used, 8);
  for (const auto& e : r.log) {
    EXPECT_GE(e.tactile, 0.0);
    EXPECT_GE(e.regularization, -1e-12);
    EXPECT_GE(e.combined, 0.0);
  }
  EXPECT_LT(r.log.back().tactile, r.log.front().tactile);
}

TEST_F(FinetuneFixture, RegularizationHoldsConfidentPixels) {
  FinetuneConfig cfg;
  cfg.adam.learning_rate = 1e-2;
  cfg.epochs = 10;
  cfg.regularization_weight = 50.0;
  cfg.pseudo_threshold = 0.9;
  cfg.confidence_radius = 1.0;
  const FinetuneResult r = finetune(pretrained, views, probes, hyps, cfg);
  double in = 0.0, out = 0.0;
  long nin = 0, nout = 0;
  for (const auto& v : views) {
    const StereoFeatures f = compute_features(v, pretrained.descriptor);
    const Inference before = infer(f, pretrained, hyps);
    const Image after = infer(f, r.state, hyps).disparity;
    const Mask mp = pseudo_mask(
        confidence_map(before.probability, before.disparity, hyps, cfg.confidence_radius),
        cfg.pseudo_threshold);
    for (std::size_t i = 0; i < mp.size(); ++i) {
      const double d = std::abs(after[i] - before.disparity[i]);
      if (mp[i]) in += d, ++nin;
      else out += d, ++nout;
    }
  }
  ASSERT_GT(nin, 0);
  ASSERT_GT(nout, 0);
  EXPECT_LE(in / nin, out / nout);
}

TEST(FinetuneConfig, Validation) {
  FinetuneConfig cfg;
  cfg.patch_radius = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(tactile_mode_from_name("pixel"), TactileMode::kPixel);
}
