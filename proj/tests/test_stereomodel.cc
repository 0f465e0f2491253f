#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "support.h"
#include "tstereo/io.h"
#include "tstereo/stereomodel.h"

using namespace tstereo;
using namespace tstereo::testing;

TEST(Descriptor, ConstantPatchIsZero) {
  const Image flat(9, 9, 0.42);
  for (double v : extract_descriptor(flat, 4, 4, 2)) EXPECT_EQ(v, 0.0);
}

TEST(Descriptor, NormalizedPatchHasUnitNorm) {
  const SceneSample s = noise_pair(3, 12, 12);
  const auto d = extract_descriptor(s.left, 6, 6, 2);
  double n = 0.0;
  for (double v : d) n += v * v;
  EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
}

TEST(Descriptor, HandComputed3x3) {
  // 0..8 laid out row-major; mean 4, centered values -4..4, norm sqrt(60).
  Image img(3, 3);
  for (int i = 0; i < 9; ++i) img[i] = i;
  const auto d = extract_descriptor(img, 1, 1, 1);
  ASSERT_EQ(d.size(), 9u);
  for (int i = 0; i < 9; ++i) EXPECT_NEAR(d[i], (i - 4) / std::sqrt(60.0), 1e-15);
  const auto raw = extract_descriptor(img, 1, 1, 1, false);
  for (int i = 0; i < 9; ++i) EXPECT_NEAR(raw[i], i - 4.0, 1e-15);
}

TEST(Descriptor, EdgeClampedSampling) {
  Image img(3, 1);
  img[0] = 0.0;
  img[1] = 1.0;
  img[2] = 2.0;
  // Radius 1 at (0, 0): columns {0, 0, 1} on each of three clamped rows.
  const auto raw = extract_descriptor(img, 0, 0, 1, false);
  const double mean = 1.0 / 3.0;
  for (int r = 0; r < 3; ++r) {
    EXPECT_NEAR(raw[r * 3 + 0], -mean, 1e-15);
    EXPECT_NEAR(raw[r * 3 + 1], -mean, 1e-15);
    EXPECT_NEAR(raw[r * 3 + 2], 1.0 - mean, 1e-15);
  }
}

TEST(ScoreVolume, IdentityEmbeddingPeaksAtTrueShift) {
  const SceneSample s = shifted_pair(11, 24, 12, 5);
  ModelState st;
  st.descriptor = DescriptorConfig{};
  st.embed_dim = st.feature_dim = st.descriptor.dim();
  st.weights.assign(st.embed_dim * st.feature_dim, 0.0);
  for (int i = 0; i < st.embed_dim; ++i) st.weights[i * st.feature_dim + i] = 1.0;
  st.set_temperature(1.0);
  const auto hyps = DisparityHypotheses::uniform(1, 8);
  const Volume sv = score_volume(s, st, hyps);
  for (int y = 2; y < 10; ++y) {
    for (int x = 10; x < 22; ++x) {
      const auto p = sv.pixel(x, y);
      const int best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      EXPECT_EQ(hyps.values[best], 5.0) << x << "," << y;
    }
  }
}

TEST(ScoreVolume, SentinelLeftOfImage) {
  const SceneSample s = noise_pair(2, 16, 8);
  const ModelState st = random_state(4, {}, 1, 1.0, 0.5);
  const auto hyps = DisparityHypotheses::uniform(1, 8);
  const Volume sv = score_volume(s, st, hyps);
  // Column 2 has valid shifts 1 and 2 only.
  for (int k = 0; k < hyps.size(); ++k) {
    if (hyps.values[k] > 2.0)
      EXPECT_EQ(sv.at(2, 3, k), kInvalidShiftScore);
    else
      EXPECT_NE(sv.at(2, 3, k), kInvalidShiftScore);
  }
}

TEST(ScoreVolume, LargeTemperatureShrinksScores) {
  const SceneSample s = noise_pair(5, 16, 8);
  ModelState st = random_state(4, {}, 2, 1.0, 1.0);
  const auto hyps = DisparityHypotheses::uniform(1, 4);
  const Volume a = score_volume(s, st, hyps);
  st.set_temperature(1e6);
  const Volume b = score_volume(s, st, hyps);
  for (int x = 4; x < 16; ++x) {
    for (int k = 0; k < hyps.size(); ++k) {
      EXPECT_LT(std::abs(b.at(x, 4, k)), 1e-5);
      EXPECT_NEAR(b.at(x, 4, k), a.at(x, 4, k) * 1e-6, 1e-15);
    }
  }
}

TEST(ScoreVolume, BrightnessOffsetInvariant) {
  SceneSample s = noise_pair(8, 16, 10);
  const ModelState st = random_state(4, {}, 4, 1.0, 0.3);
  const auto hyps = DisparityHypotheses::uniform(1, 6);
  const Inference a = infer(compute_features(s, st.descriptor), st, hyps);
  for (auto& v : s.left.values()) v += 0.25;
  for (auto& v : s.right.values()) v += 0.25;
  const Inference b = infer(compute_features(s, st.descriptor), st, hyps);
  for (std::size_t i = 0; i < a.disparity.size(); ++i)
    EXPECT_NEAR(a.disparity[i], b.disparity[i], 1e-9);
}

TEST(Softmax, EqualScoresGiveUniform) {
  Volume s(2, 1, 5, 3.7);
  const Volume p = softmax_over_hypotheses(s);
  for (double v : p.values()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Softmax, DominantScore) {
  Volume s(1, 1, 4, 0.0);
  s.at(0, 0, 2) = 20.0;
  const Volume p = softmax_over_hypotheses(s);
  EXPECT_GT(p.at(0, 0, 2), 0.999);
  EXPECT_NEAR(p.at(0, 0, 2), 1.0 / (1.0 + 3.0 * std::exp(-20.0)), 1e-15);
}

TEST(Softmax, SentinelUnderflows) {
  Volume s(1, 1, 3, 0.0);
  s.at(0, 0, 0) = kInvalidShiftScore;
  const Volume p = softmax_over_hypotheses(s);
  EXPECT_LT(p.at(0, 0, 0), 1e-300);
  EXPECT_NEAR(p.at(0, 0, 1), 0.5, 1e-15);
}

TEST(Predict, Expectations) {
  const auto hyps = DisparityHypotheses::uniform(12, 96);
  Volume onehot(1, 1, hyps.size(), 0.0);
  onehot.at(0, 0, 40 - 12) = 1.0;
  EXPECT_DOUBLE_EQ(predict_disparity(onehot, hyps)[0], 40.0);

  Volume uniform(1, 1, hyps.size(), 1.0 / hyps.size());
  EXPECT_NEAR(predict_disparity(uniform, hyps)[0], 54.0, 1e-12);

  Volume half(1, 1, hyps.size(), 0.0);
  half.at(0, 0, 20 - 12) = 0.5;
  half.at(0, 0, 40 - 12) = 0.5;
  EXPECT_DOUBLE_EQ(predict_disparity(half, hyps)[0], 30.0);
}

TEST(Entropy, UniformIsLogD) {
  Volume p(1, 1, 8, 1.0 / 8);
  EXPECT_NEAR(entropy_map(p)[0], std::log(8.0), 1e-14);
  Volume onehot(1, 1, 8, 0.0);
  onehot.at(0, 0, 3) = 1.0;
  EXPECT_EQ(entropy_map(onehot)[0], 0.0);
}

TEST(SmoothL1, Branches) {
  EXPECT_DOUBLE_EQ(smooth_l1(0.5, 1.0), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(-2.0, 1.0), 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1(1.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(smooth_l1_derivative(0.5, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(smooth_l1_derivative(-3.0, 1.0), -1.0);
}

TEST(Gradients, MatchFiniteDifferences) {
  for (LossKind kind : {LossKind::kEntropy, LossKind::kTactile, LossKind::kRegularization,
                        LossKind::kDense}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const GradientInstance g = gradient_instance(seed, kind);
      const auto a = analytic_gradient(g.state, g.features, g.hyps, g.objective);
      const auto n = numeric_gradient(g.state, g.features, g.hyps, g.objective, 1e-4);
      EXPECT_LT(relative_error(a, n), 1e-4) << loss_kind_name(kind) << " seed " << seed;
    }
  }
}

TEST(Gradients, ZeroAtExactFit) {
  const GradientInstance g = gradient_instance(3, LossKind::kDense);
  const Image pred = infer(g.features, g.state, g.hyps).disparity;
  const LossGradient lg =
      loss_gradients(g.state, g.features, g.hyps, dense_smooth_l1_objective(pred));
  EXPECT_EQ(lg.loss, 0.0);
  for (double v : lg.grad_weights) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(lg.grad_temperature, 0.0);
}

TEST(Gradients, EntropyVanishesWhenSaturated) {
  // A very cold softmax on a perfectly shifted pair is one-hot almost
  // everywhere, so the entropy gradient at an interior pixel is negligible.
  const SceneSample s = shifted_pair(21, 24, 12, 4);
  ModelState st;
  st.embed_dim = st.feature_dim = st.descriptor.dim();
  st.weights.assign(st.embed_dim * st.feature_dim, 0.0);
  for (int i = 0; i < st.embed_dim; ++i) st.weights[i * st.feature_dim + i] = 1.0;
  st.set_temperature(1e-3);
  const auto hyps = DisparityHypotheses::uniform(1, 8);
  const StereoFeatures f = compute_features(s, st.descriptor);
  const int pixel = 6 * 24 + 14;
  const Image anchor(24, 12, 0.0);
  const LossGradient lg = loss_gradients(st, f, hyps, entropy_objective(std::vector<int>{pixel}, anchor, 0.0));
  double n = lg.grad_temperature * lg.grad_temperature;
  for (double v : lg.grad_weights) n += v * v;
  EXPECT_LT(std::sqrt(n), 1e-6);
}

TEST(Gradients, ThreadedMatchesSerial) {
  const GradientInstance g = gradient_instance(9, LossKind::kRegularization);
  const LossGradient a = loss_gradients(g.state, g.features, g.hyps, g.objective, {1});
  const LossGradient b = loss_gradients(g.state, g.features, g.hyps, g.objective, {3});
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  for (std::size_t i = 0; i < a.grad_weights.size(); ++i)
    EXPECT_NEAR(a.grad_weights[i], b.grad_weights[i], 1e-10);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> p{1.0, -2.0};
  AdamMoments m;
  adam_step(p, std::vector<double>{0.0, 0.0}, m, AdamConfig{0.1});
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
}

TEST(Adam, HandTracedSteps) {
  std::vector<double> p{0.0};
  AdamMoments m;
  const AdamConfig cfg{0.1};
  adam_step(p, std::vector<double>{1.0}, m, cfg);
  EXPECT_NEAR(p[0], -0.09999999900000002, 1e-15);
  adam_step(p, std::vector<double>{0.5}, m, cfg);
  EXPECT_NEAR(p[0], -0.19321796170183891, 1e-14);
}

TEST(Adam, TemperatureMovesInLogSpace) {
  ModelState st = random_state(2, {}, 1, 1.0, 0.5);
  LossGradient g;
  g.grad_weights.assign(st.weights.size(), 0.0);
  g.grad_temperature = 2.0;  // dL/dlog(tau) = tau * 2 = 1
  AdamMoments m;
  const double before = st.log_temperature;
  apply_adam(st, g, m, AdamConfig{0.01});
  EXPECT_NEAR(st.log_temperature, before - 0.01, 1e-9);
}

TEST(Pretrain, ZeroLearningRateKeepsState) {
  std::vector<SceneSample> train{shifted_pair(1, 20, 10, 3)};
  const ModelState init = random_state(3, {}, 5, 1.0, 0.5);
  PretrainConfig cfg;
  cfg.adam.learning_rate = 0.0;
  cfg.max_epochs = 2;
  cfg.target_epe = 0.0;
  const PretrainResult r =
      pretrain(init, train, train, DisparityHypotheses::uniform(1, 6), cfg);
  EXPECT_EQ(r.state.weights, init.weights);
  EXPECT_EQ(r.state.log_temperature, init.log_temperature);
  EXPECT_EQ(r.state.role, ModelRole::kPretrained);
  EXPECT_FALSE(r.reached_target);
}

TEST(Pretrain, LearnsAShiftAndIsDeterministic) {
  std::vector<SceneSample> train{shifted_pair(1, 24, 12, 3), shifted_pair(2, 24, 12, 5)};
  std::vector<SceneSample> val{shifted_pair(3, 24, 12, 4)};
  const auto hyps = DisparityHypotheses::uniform(1, 6);
  const ModelState init = pca_state(train, 6, {}, 1.0, 0.1);
  PretrainConfig cfg;
  cfg.max_epochs = 20;
  cfg.target_epe = 0.3;
  const PretrainResult a = pretrain(init, train, val, hyps, cfg);
  const PretrainResult b = pretrain(init, train, val, hyps, cfg);
  EXPECT_EQ(a.state, b.state);
  EXPECT_LT(a.validation_epe, diffuse_epe(val[0], infer(compute_features(val[0], init.descriptor),
                                                          init, hyps).disparity));
}

TEST(ModelIo, RoundTripIsBitExact) {
  ModelState st = random_state(5, DescriptorConfig{3, true}, 77, 0.7, 0.123456789);
  st.role = ModelRole::kFinetuned;
  EXPECT_EQ(decode_model(encode_model(st)), st);
  const auto path = std::filesystem::temp_directory_path() / "tstereo_model_rt.bin";
  save_model(path, st);
  EXPECT_EQ(load_model(path), st);
  EXPECT_TRUE(std::filesystem::exists(path.string() + ".txt"));
}

TEST(ModelIo, RejectsTruncation) {
  const std::string bytes = encode_model(random_state(2, {}, 1, 1.0, 1.0));
  EXPECT_THROW(decode_model(bytes.substr(0, bytes.size() - 3)), ParseError);
  EXPECT_THROW(decode_model(""), ParseError);
}

TEST(Hypotheses, Validation) {
  EXPECT_THROW(DisparityHypotheses{{1.0}}.validate(), std::invalid_argument);
  EXPECT_THROW((DisparityHypotheses{{1.0, 1.0}}.validate()), std::invalid_argument);
  const auto h = DisparityHypotheses::for_rig(CameraRig{});
  EXPECT_EQ(h.min(), 8.0);
  EXPECT_EQ(h.max(), 40.0);
  EXPECT_EQ(h.size(), 33);
}
