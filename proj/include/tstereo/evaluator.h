#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tstereo/image.h"
#include "tstereo/scenegen.h"

namespace tstereo {

// Pixel-level metric helpers. `mask` selects pixels (empty mask = all);
// pixels with invalid GT or prediction are skipped. Empty selections give 0.
double epe(const Image& pred, const Image& gt, const Mask& mask = {});
double bad1(const Image& pred, const Image& gt, const Mask& mask = {});
double abs_depth_err_mm(const Image& pred, const Image& gt, const CameraRig& rig,
                        const Mask& mask = {});
double frac_gt_4mm(const Image& pred, const Image& gt, const CameraRig& rig,
                   const Mask& mask = {});
double delta105(const Image& pred, const Image& gt, const CameraRig& rig,
                const Mask& mask = {});

struct SplitMetrics {
  double epe_px = 0.0;
  double bad1 = 0.0;
  double abs_depth_mm = 0.0;
  double frac_gt_4mm = 0.0;
  double delta105 = 0.0;
  long pixels = 0;
};

struct MetricReport {
  SplitMetrics all;
  SplitMetrics transparent;
  SplitMetrics diffuse;
  SplitMetrics background;
  // Mean absolute depth error (mm) per object, keyed "<material>/<class_id>";
  // pixels of every instance of that class are pooled.
  std::map<std::string, double> class_error_mm;
};

// Sums per-pixel errors across any number of (prediction, scene) pairs;
// boundary pixels count toward the surface they lie on.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(bool include_boundary = true)
      : include_boundary_(include_boundary) {}
  void add(const Image& pred, const SceneSample& sample);
  MetricReport report() const;

 private:
  struct Sums {
    double abs_disp = 0.0;
    double abs_depth = 0.0;
    long bad1 = 0;
    long gt4mm = 0;
    long delta = 0;
    long n = 0;
    void add(double disp_err, double depth_err, double rel_err);
    SplitMetrics finish() const;
  };
  bool include_boundary_;
  Sums all_, transparent_, diffuse_, background_;
  std::map<std::string, Sums> classes_;
};

MetricReport evaluate(const Image& pred, const SceneSample& sample,
                      bool include_boundary = true);

// Rows are (label, report) in presentation order.
using ReportRows = std::vector<std::pair<std::string, MetricReport>>;

std::string format_report_csv(const ReportRows& rows);
std::string format_report_text(const ReportRows& rows);
std::string format_report_json(const ReportRows& rows);
inline constexpr int kReportSchemaVersion = 1;

// Mean and sample standard deviation per label across repeated runs.
struct SummaryRow {
  std::string label;
  int runs = 0;
  SplitMetrics mean_all, std_all;
  SplitMetrics mean_transparent, std_transparent;
  SplitMetrics mean_diffuse, std_diffuse;
};
std::vector<SummaryRow> summarize(
    const std::vector<std::pair<std::string, std::vector<MetricReport>>>& runs);
std::string format_summary_csv(const std::vector<SummaryRow>& rows);
std::string format_summary_text(const std::vector<SummaryRow>& rows);

}  // namespace tstereo
