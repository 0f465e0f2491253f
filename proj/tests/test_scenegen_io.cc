#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "tstereo/io.h"
#include "tstereo/scenegen.h"

using namespace tstereo;

namespace {

SceneConfig plain_config() {
  SceneConfig cfg;
  cfg.rig = CameraRig{600.0, 0.055, 96, 48, 12.0, 48.0};
  cfg.fixed_background_disparity = 20.0;
  return cfg;
}

ObjectSpec square(Material m, double disparity) {
  ObjectSpec o;
  o.material = m;
  o.center_x = 60;
  o.center_y = 24;
  o.half_width = 10;
  o.half_height = 10;
  o.disparity = disparity;
  return o;
}

// Best integer shift matching left(x) against right(x - d) over a window.
int best_shift(const SceneSample& s, int x0, int x1, int y0, int y1) {
  int best = -1;
  double best_err = 1e300;
  for (int d = 12; d <= 48; ++d) {
    double err = 0.0;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) err += std::abs(s.left.at(x, y) - s.right.at(x - d, y));
    if (err < best_err) best_err = err, best = d;
  }
  return best;
}

}  // namespace

TEST(Rig, DepthConversion) {
  const CameraRig rig{600.0, 0.055, 320, 240, 12.0, 96.0};
  EXPECT_DOUBLE_EQ(disparity_to_depth(33.0, rig), 1.0);
  EXPECT_DOUBLE_EQ(depth_to_disparity(1.0, rig), 33.0);
  EXPECT_DOUBLE_EQ(disparity_to_depth(66.0, rig), 0.5);
  EXPECT_THROW(disparity_to_depth(0.0, rig), std::domain_error);
  EXPECT_THROW(depth_to_disparity(-1.0, rig), std::domain_error);
  for (double d = 12.0; d <= 96.0; d += 0.37) {
    const double back = depth_to_disparity(disparity_to_depth(d, rig), rig);
    EXPECT_LT(std::abs(back - d) / d, 1e-9);
  }
}

TEST(Scene, NoObjectsIsFlatBackground) {
  SceneConfig cfg;
  cfg.num_diffuse = cfg.num_transparent = 0;
  const SceneSample s = generate_scene(0, cfg);
  for (double v : s.gt_disparity.values()) EXPECT_EQ(v, s.background_disparity);
}

TEST(Scene, DiffuseSquareMatchesAtItsDisparity) {
  SceneConfig cfg = plain_config();
  cfg.objects = {square(Material::kDiffuse, 40.0)};
  const SceneSample s = generate_scene(1, cfg);
  EXPECT_EQ(s.gt_disparity.at(60, 24), 40.0);
  EXPECT_EQ(s.gt_disparity.at(5, 5), 20.0);
  EXPECT_EQ(best_shift(s, 54, 67, 18, 31), 40);
  // Pixel-exact consistency inside the object away from its boundary.
  for (int y = 18; y < 31; ++y)
    for (int x = 54; x < 67; ++x)
      EXPECT_LT(std::abs(s.left.at(x, y) - s.right.at(x - 40, y)), 1e-6);
}

TEST(Scene, TransparentSquareMatchesBackground) {
  SceneConfig cfg = plain_config();
  cfg.objects = {square(Material::kTransparent, 40.0)};
  const SceneSample s = generate_scene(2, cfg);
  EXPECT_EQ(s.gt_disparity.at(60, 24), 40.0);
  EXPECT_EQ(s.label(60, 24), Material::kTransparent);
  EXPECT_EQ(best_shift(s, 54, 67, 18, 31), 20);
}

TEST(Scene, Deterministic) {
  SceneConfig cfg;
  const SceneSample a = generate_scene(7, cfg), b = generate_scene(7, cfg);
  EXPECT_EQ(a.left, b.left);
  EXPECT_EQ(a.right, b.right);
  EXPECT_EQ(a.material, b.material);
  EXPECT_NE(generate_scene(8, cfg).left, a.left);
}

TEST(Scene, RejectsOutOfRangeObjects) {
  SceneConfig cfg;
  cfg.object_disparity_max = 400.0;
  EXPECT_THROW(generate_scene(1, cfg), std::invalid_argument);
}

TEST(Warp, IdentityShiftAndOcclusion) {
  std::mt19937_64 rng(3);
  Image left(20, 4);
  for (auto& v : left.values()) v = std::uniform_real_distribution<double>(0, 1)(rng);
  EXPECT_EQ(warp_right_from_left(left, Image(20, 4, 0.0)).image, left);
  const WarpResult shifted = warp_right_from_left(left, Image(20, 4, 5.0));
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 20; ++x) {
      if (x < 15)
        EXPECT_EQ(shifted.image.at(x, y), left.at(x + 5, y));
      else
        EXPECT_EQ(shifted.image.at(x, y), 0.0);
    }
  // Column 10 at disparity 6 and column 14 at disparity 10 both land on 4.
  Image d(20, 4, 2.0);
  for (int y = 0; y < 4; ++y) {
    d.at(10, y) = 6.0;
    d.at(14, y) = 10.0;
  }
  const WarpResult two = warp_right_from_left(left, d);
  for (int y = 0; y < 4; ++y) {
    EXPECT_EQ(two.writer_disparity.at(4, y), 10.0);
    EXPECT_EQ(two.image.at(4, y), left.at(14, y));
  }
}

TEST(Pfm, RoundTripAndFixture) {
  std::mt19937_64 rng(9);
  Image m(7, 5);
  for (auto& v : m.values()) v = static_cast<float>(std::normal_distribution<double>(0, 30)(rng));
  m.at(2, 2) = kInvalidDisparity;
  const Image back = decode_pfm(encode_pfm(m));
  ASSERT_TRUE(back.same_shape(m));
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (std::isnan(m[i])) EXPECT_TRUE(std::isnan(back[i]));
    else EXPECT_EQ(back[i], m[i]);
  }

  // Hand-built 2x2 file: bottom row first, little-endian.
  std::string bytes = "Pf\n2 2\n-1.0\n";
  for (float f : {3.0f, 4.0f, 1.0f, 2.5f}) {
    char b[4];
    std::memcpy(b, &f, 4);
    bytes.append(b, 4);
  }
  const Image fx = decode_pfm(bytes);
  EXPECT_EQ(fx.at(0, 0), 1.0);
  EXPECT_EQ(fx.at(1, 0), 2.5);
  EXPECT_EQ(fx.at(0, 1), 3.0);
  EXPECT_EQ(fx.at(1, 1), 4.0);
  EXPECT_EQ(encode_pfm(fx), bytes);
}

TEST(Pfm, ParseErrors) {
  EXPECT_THROW(decode_pfm(""), ParseError);
  EXPECT_THROW(decode_pfm("P5\n1 1\n255\n"), ParseError);
  try {
    decode_pfm("Pf\n2 2\n-1.0\n\x01\x02");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
}

TEST(Pgm, SixteenBitRoundTrip) {
  PgmImage img{3, 2, 65535, {0, 1, 256, 65535, 1234, 42}};
  const PgmImage back = decode_pgm(encode_pgm(img));
  EXPECT_EQ(back.pixels, img.pixels);
  EXPECT_EQ(back.maxval, 65535);
  PgmImage small{2, 1, 255, {7, 200}};
  EXPECT_EQ(decode_pgm(encode_pgm(small)).pixels, small.pixels);
  EXPECT_THROW(decode_pgm("P5\n3 2\n65535\n\x00"), ParseError);
}

TEST(SceneFiles, MaterialAndLabelRoundTrip) {
  const SceneSample s = generate_scene(4, SceneConfig{});
  const auto dir = std::filesystem::temp_directory_path() / "tstereo_io_rt";
  std::filesystem::create_directories(dir);
  save_material_pgm(dir / "m.pgm", s.material);
  save_labels_pgm(dir / "o.pgm", s.object_id);
  save_image_pgm(dir / "l.pgm", s.left);
  EXPECT_EQ(load_material_pgm(dir / "m.pgm"), s.material);
  EXPECT_EQ(load_labels_pgm(dir / "o.pgm"), s.object_id);
  EXPECT_EQ(load_image_pgm(dir / "l.pgm"), s.left);  // already on the 16-bit grid
}
