#include <gtest/gtest.h>

#include <cmath>
#include <json.hpp>
#include <map>
#include <random>

#include "tstereo/evaluator.h"

using namespace tstereo;

namespace {

// focal * baseline = 33, so disparity 33 is one metre.
const CameraRig kRig{600.0, 0.055, 2, 1, 12.0, 96.0};

Image row(double a, double b) {
  Image m(2, 1);
  m[0] = a;
  m[1] = b;
  return m;
}

}  // namespace

TEST(Metrics, Epe) {
  const Image gt = row(20.0, 30.0);
  EXPECT_EQ(epe(gt, gt), 0.0);
  EXPECT_EQ(epe(row(21.0, 31.0), gt), 1.0);
  EXPECT_NEAR(epe(row(21.0, 27.0), gt), 2.0, 1e-12);
}

TEST(Metrics, Bad1IsStrict) {
  const Image gt = row(20.0, 30.0);
  EXPECT_EQ(bad1(row(20.5, 29.5), gt), 0.0);
  EXPECT_EQ(bad1(row(21.0, 29.0), gt), 0.0);
  EXPECT_NEAR(bad1(row(22.0, 30.0), gt), 0.5, 1e-12);
}

TEST(Metrics, DepthMetrics) {
  const Image gt = row(33.0, 33.0);
  EXPECT_EQ(abs_depth_err_mm(gt, gt, kRig), 0.0);
  EXPECT_EQ(frac_gt_4mm(gt, gt, kRig), 0.0);
  EXPECT_EQ(delta105(gt, gt, kRig), 1.0);
  // 1.005 m versus 1 m: a 5 mm error on one pixel of two.
  const Image pred = row(33.0 / 1.005, 33.0);
  EXPECT_NEAR(frac_gt_4mm(pred, gt, kRig), 0.5, 1e-12);
  EXPECT_NEAR(abs_depth_err_mm(pred, gt, kRig), 2.5, 1e-9);
  // 4.9% relative error everywhere still counts.
  EXPECT_EQ(delta105(row(33.0 / 1.049, 33.0 / 0.951), gt, kRig), 1.0);
  EXPECT_EQ(delta105(row(33.0 / 1.06, 33.0), gt, kRig), 0.5);
}

TEST(Metrics, MaskAndInvalidPixels) {
  const Image gt = row(20.0, kInvalidDisparity);
  EXPECT_EQ(epe(row(23.0, 99.0), gt), 3.0);
  Mask m(2, 1, 0);
  EXPECT_EQ(epe(row(23.0, 99.0), row(20.0, 30.0), m), 0.0);
  m[1] = 1;
  EXPECT_EQ(epe(row(23.0, 99.0), row(20.0, 30.0), m), 69.0);
}

namespace {

SceneSample labelled_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SceneSample s;
  const int w = 12, h = 8;
  s.rig = CameraRig{600.0, 0.055, w, h, 12.0, 96.0};
  s.left = s.right = Image(w, h);
  s.gt_disparity = Image(w, h);
  s.material = Mask(w, h);
  s.object_id = Grid<int>(w, h, 0);
  ObjectSpec glass;
  glass.material = Material::kTransparent;
  glass.class_id = 2;
  ObjectSpec box;
  box.material = Material::kDiffuse;
  box.class_id = 1;
  s.objects = {glass, box};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      s.gt_disparity.at(x, y) = 20.0 + 40.0 * u(rng);
      const int id = x < 4 ? 0 : (x < 8 ? 1 : 2);
      s.object_id.at(x, y) = id;
      Material m = id == 0 ? Material::kBackground
                           : (id == 1 ? Material::kTransparent : Material::kDiffuse);
      if (x == 4 || x == 8) m = Material::kBoundary;
      s.material.at(x, y) = static_cast<unsigned char>(m);
    }
  return s;
}

}  // namespace

TEST(Report, SplitsPartitionAllPixels) {
  const SceneSample s = labelled_scene(1);
  Image pred = s.gt_disparity;
  std::mt19937_64 rng(2);
  for (auto& v : pred.values()) v += std::normal_distribution<double>(0.0, 2.0)(rng);
  const MetricReport r = evaluate(pred, s);
  EXPECT_EQ(r.all.pixels, 96);
  EXPECT_EQ(r.transparent.pixels + r.diffuse.pixels + r.background.pixels, r.all.pixels);
  EXPECT_EQ(r.transparent.pixels, 32);  // boundary column goes to its object
  const double weighted = (r.transparent.epe_px * r.transparent.pixels +
                           r.diffuse.epe_px * r.diffuse.pixels +
                           r.background.epe_px * r.background.pixels) /
                          r.all.pixels;
  EXPECT_NEAR(weighted, r.all.epe_px, 1e-12);
  for (const SplitMetrics* m : {&r.all, &r.transparent, &r.diffuse}) {
    EXPECT_GE(m->bad1, 0.0);
    EXPECT_LE(m->bad1, 1.0);
    EXPECT_GE(m->delta105, 0.0);
    EXPECT_LE(m->delta105, 1.0);
  }
  EXPECT_EQ(r.class_error_mm.count("transparent/2"), 1u);
  EXPECT_EQ(r.class_error_mm.count("diffuse/1"), 1u);
  EXPECT_EQ(r.class_error_mm.count("background"), 1u);

  const MetricReport inner = evaluate(pred, s, false);
  EXPECT_EQ(inner.all.pixels, 80);
}

TEST(Report, OrderInvariantAndIdenticalRows) {
  const SceneSample s = labelled_scene(3);
  const Image pred(s.width(), s.height(), 30.0);
  MetricAccumulator a, b;
  a.add(pred, s);
  a.add(pred, labelled_scene(4));
  b.add(pred, labelled_scene(4));
  b.add(pred, s);
  const MetricReport ra = a.report(), rb = b.report();
  EXPECT_NEAR(ra.all.epe_px, rb.all.epe_px, 1e-12);
  EXPECT_NEAR(ra.all.abs_depth_mm, rb.all.abs_depth_mm, 1e-9);
  const ReportRows rows{{"utility", ra}, {"random", ra}};
  // Strip the label column and compare the remaining row bodies.
  std::map<std::string, std::vector<std::string>> bodies;
  const std::string csv = format_report_csv(rows);
  std::size_t pos = csv.find('\n') + 1;
  while (pos < csv.size()) {
    const std::size_t end = csv.find('\n', pos);
    const std::string line = csv.substr(pos, end - pos);
    const std::size_t comma = line.find(',');
    bodies[line.substr(0, comma)].push_back(line.substr(comma));
    pos = end + 1;
  }
  ASSERT_EQ(bodies.size(), 2u);
  EXPECT_FALSE(bodies["random"].empty());
  EXPECT_EQ(bodies["utility"], bodies["random"]);
}

TEST(Report, JsonCarriesSchemaVersion) {
  const ReportRows rows{{"pretrained", evaluate(labelled_scene(5).gt_disparity, labelled_scene(5))}};
  const auto j = nlohmann::json::parse(format_report_json(rows));
  EXPECT_EQ(j.at("schema_version").get<int>(), kReportSchemaVersion);
  EXPECT_FALSE(format_report_text(rows).empty());
}

TEST(Summary, MeanAndSampleStd) {
  MetricReport a, b;
  a.transparent.epe_px = 2.0;
  b.transparent.epe_px = 4.0;
  const auto rows = summarize({{"utility", {a, b}}});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].runs, 2);
  EXPECT_DOUBLE_EQ(rows[0].mean_transparent.epe_px, 3.0);
  EXPECT_DOUBLE_EQ(rows[0].std_transparent.epe_px, std::sqrt(2.0));
  EXPECT_NE(format_summary_csv(rows).find("utility"), std::string::npos);
}
