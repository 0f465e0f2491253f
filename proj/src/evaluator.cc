#include "tstereo/evaluator.h"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace tstereo {

namespace {

constexpr double kFourMm = 0.004;

// Visits selected pixels with valid GT and a positive prediction.
template <typename Fn>
void for_valid(const Image& pred, const Image& gt, const Mask& mask, Fn&& fn) {
  if (!pred.same_shape(gt)) throw std::invalid_argument("prediction/GT shape mismatch");
  const bool masked = mask.size() > 0;
  if (masked && (mask.width() != gt.width() || mask.height() != gt.height()))
    throw std::invalid_argument("mask shape mismatch");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (masked && !mask[i]) continue;
    if (!is_valid(gt[i]) || !is_valid(pred[i]) || pred[i] <= 0.0 || gt[i] <= 0.0) continue;
    fn(pred[i], gt[i]);
  }
}

template <typename Fn>
double mean_over(const Image& pred, const Image& gt, const Mask& mask, Fn&& value) {
  double s = 0.0;
  long n = 0;
  for_valid(pred, gt, mask, [&](double p, double g) {
    s += value(p, g);
    ++n;
  });
  return n > 0 ? s / static_cast<double>(n) : 0.0;
}

}  // namespace

double epe(const Image& pred, const Image& gt, const Mask& mask) {
  return mean_over(pred, gt, mask, [](double p, double g) { return std::abs(p - g); });
}

double bad1(const Image& pred, const Image& gt, const Mask& mask) {
  return mean_over(pred, gt, mask,
                   [](double p, double g) { return std::abs(p - g) > 1.0 ? 1.0 : 0.0; });
}

double abs_depth_err_mm(const Image& pred, const Image& gt, const CameraRig& rig,
                        const Mask& mask) {
  return mean_over(pred, gt, mask, [&](double p, double g) {
    return 1000.0 * std::abs(disparity_to_depth(p, rig) - disparity_to_depth(g, rig));
  });
}

double frac_gt_4mm(const Image& pred, const Image& gt, const CameraRig& rig,
                   const Mask& mask) {
  return mean_over(pred, gt, mask, [&](double p, double g) {
    return std::abs(disparity_to_depth(p, rig) - disparity_to_depth(g, rig)) > kFourMm ? 1.0
                                                                                       : 0.0;
  });
}

double delta105(const Image& pred, const Image& gt, const CameraRig& rig, const Mask& mask) {
  return mean_over(pred, gt, mask, [&](double p, double g) {
    const double z = disparity_to_depth(p, rig), zt = disparity_to_depth(g, rig);
    return std::abs(z - zt) / zt < 0.05 ? 1.0 : 0.0;
  });
}

void MetricAccumulator::Sums::add(double disp_err, double depth_err, double rel_err) {
  abs_disp += disp_err;
  abs_depth += depth_err;
  bad1 += disp_err > 1.0 ? 1 : 0;
  gt4mm += depth_err > kFourMm ? 1 : 0;
  delta += rel_err < 0.05 ? 1 : 0;
  ++n;
}

SplitMetrics MetricAccumulator::Sums::finish() const {
  SplitMetrics m;
  m.pixels = n;
  if (n == 0) return m;
  const double dn = static_cast<double>(n);
  m.epe_px = abs_disp / dn;
  m.bad1 = static_cast<double>(bad1) / dn;
  m.abs_depth_mm = 1000.0 * abs_depth / dn;
  m.frac_gt_4mm = static_cast<double>(gt4mm) / dn;
  m.delta105 = static_cast<double>(delta) / dn;
  return m;
}

void MetricAccumulator::add(const Image& pred, const SceneSample& sample) {
  const Image& gt = sample.gt_disparity;
  if (!pred.same_shape(gt)) throw std::invalid_argument("prediction/GT shape mismatch");
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      const double p = pred.at(x, y), g = gt.at(x, y);
      if (!is_valid(g) || !is_valid(p) || p <= 0.0 || g <= 0.0) continue;
      if (!include_boundary_ && sample.label(x, y) == Material::kBoundary) continue;
      const double z = disparity_to_depth(p, sample.rig);
      const double zt = disparity_to_depth(g, sample.rig);
      const double disp_err = std::abs(p - g);
      const double depth_err = std::abs(z - zt);
      const double rel = depth_err / zt;
      all_.add(disp_err, depth_err, rel);
      const Material m = sample.surface_material(x, y);
      Sums& split = m == Material::kTransparent ? transparent_
                    : m == Material::kDiffuse   ? diffuse_
                                                : background_;
      split.add(disp_err, depth_err, rel);
      const int id = sample.object_id.at(x, y);
      std::string key = "background";
      if (id > 0) {
        const ObjectSpec& o = sample.objects[static_cast<std::size_t>(id - 1)];
        key = std::string(material_name(o.material)) + "/" + std::to_string(o.class_id);
      }
      classes_[key].add(disp_err, depth_err, rel);
    }
  }
}

MetricReport MetricAccumulator::report() const {
  MetricReport r;
  r.all = all_.finish();
  r.transparent = transparent_.finish();
  r.diffuse = diffuse_.finish();
  r.background = background_.finish();
  for (const auto& [k, s] : classes_) r.class_error_mm[k] = s.finish().abs_depth_mm;
  return r;
}

MetricReport evaluate(const Image& pred, const SceneSample& sample, bool include_boundary) {
  MetricAccumulator acc(include_boundary);
  acc.add(pred, sample);
  return acc.report();
}

// ---- tables ----

namespace {

struct SplitRef {
  const char* name;
  const SplitMetrics MetricReport::*field;
};
constexpr SplitRef kSplits[] = {{"all", &MetricReport::all},
                                {"trans", &MetricReport::transparent},
                                {"diffuse", &MetricReport::diffuse}};

std::string fmt(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
}

}  // namespace

std::string format_report_csv(const ReportRows& rows) {
  std::ostringstream out;
  out << "label,split,epe_px,bad1,abs_depth_mm,frac_gt_4mm,delta105,pixels\n";
  for (const auto& [label, r] : rows) {
    for (const auto& s : kSplits) {
      const SplitMetrics& m = r.*(s.field);
      out << label << "," << s.name << "," << fmt(m.epe_px, 6) << "," << fmt(m.bad1, 6) << ","
          << fmt(m.abs_depth_mm, 6) << "," << fmt(m.frac_gt_4mm, 6) << ","
          << fmt(m.delta105, 6) << "," << m.pixels << "\n";
    }
  }
  return out.str();
}

std::string format_report_text(const ReportRows& rows) {
  std::size_t label_w = 5;
  for (const auto& row : rows) label_w = std::max(label_w, row.first.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(label_w)) << "label" << std::right;
  for (const auto& s : kSplits)
    for (const char* col : {"EPE", "Bad1", "mm", ">4mm", "d1.05"})
      out << pad(std::string(s.name) + ":" + col, 14);
  out << "\n";
  for (const auto& [label, r] : rows) {
    out << std::left << std::setw(static_cast<int>(label_w)) << label << std::right;
    for (const auto& s : kSplits) {
      const SplitMetrics& m = r.*(s.field);
      out << pad(fmt(m.epe_px, 3), 14) << pad(fmt(m.bad1, 3), 14)
          << pad(fmt(m.abs_depth_mm, 3), 14) << pad(fmt(m.frac_gt_4mm, 3), 14)
          << pad(fmt(m.delta105, 3), 14);
    }
    out << "\n";
  }
  return out.str();
}

std::string format_report_json(const ReportRows& rows) {
  auto split_json = [](const SplitMetrics& m) {
    return nlohmann::ordered_json{{"epe_px", m.epe_px},         {"bad1", m.bad1},
                                  {"abs_depth_mm", m.abs_depth_mm},
                                  {"frac_gt_4mm", m.frac_gt_4mm}, {"delta105", m.delta105},
                                  {"pixels", m.pixels}};
  };
  nlohmann::ordered_json doc;
  doc["schema_version"] = kReportSchemaVersion;
  doc["rows"] = nlohmann::ordered_json::array();
  for (const auto& [label, r] : rows) {
    nlohmann::ordered_json row;
    row["label"] = label;
    row["all"] = split_json(r.all);
    row["trans"] = split_json(r.transparent);
    row["diffuse"] = split_json(r.diffuse);
    row["background"] = split_json(r.background);
    row["class_error_mm"] = r.class_error_mm;
    doc["rows"].push_back(row);
  }
  return doc.dump(2) + "\n";
}

std::vector<SummaryRow> summarize(
    const std::vector<std::pair<std::string, std::vector<MetricReport>>>& runs) {
  auto stats = [](const std::vector<MetricReport>& reports,
                  const SplitMetrics MetricReport::*field, SplitMetrics& mean,
                  SplitMetrics& sd) {
    const double n = static_cast<double>(reports.size());
    auto one = [&](double SplitMetrics::*f, double& m, double& s) {
      m = 0.0;
      for (const auto& r : reports) m += (r.*field).*f;
      m /= n;
      s = 0.0;
      for (const auto& r : reports) s += ((r.*field).*f - m) * ((r.*field).*f - m);
      s = reports.size() > 1 ? std::sqrt(s / (n - 1.0)) : 0.0;
    };
    one(&SplitMetrics::epe_px, mean.epe_px, sd.epe_px);
    one(&SplitMetrics::bad1, mean.bad1, sd.bad1);
    one(&SplitMetrics::abs_depth_mm, mean.abs_depth_mm, sd.abs_depth_mm);
    one(&SplitMetrics::frac_gt_4mm, mean.frac_gt_4mm, sd.frac_gt_4mm);
    one(&SplitMetrics::delta105, mean.delta105, sd.delta105);
    long pixels = 0;
    for (const auto& r : reports) pixels += (r.*field).pixels;
    mean.pixels = pixels;
  };
  std::vector<SummaryRow> out;
  for (const auto& [label, reports] : runs) {
    if (reports.empty()) throw std::invalid_argument("summary row '" + label + "' has no runs");
    SummaryRow row;
    row.label = label;
    row.runs = static_cast<int>(reports.size());
    stats(reports, &MetricReport::all, row.mean_all, row.std_all);
    stats(reports, &MetricReport::transparent, row.mean_transparent, row.std_transparent);
    stats(reports, &MetricReport::diffuse, row.mean_diffuse, row.std_diffuse);
    out.push_back(row);
  }
  return out;
}

namespace {

struct SummarySplit {
  const char* name;
  const SplitMetrics SummaryRow::*mean;
  const SplitMetrics SummaryRow::*sd;
};
constexpr SummarySplit kSummarySplits[] = {
    {"all", &SummaryRow::mean_all, &SummaryRow::std_all},
    {"trans", &SummaryRow::mean_transparent, &SummaryRow::std_transparent},
    {"diffuse", &SummaryRow::mean_diffuse, &SummaryRow::std_diffuse}};

}  // namespace

std::string format_summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "label,split,runs,epe_mean,epe_std,bad1_mean,bad1_std,abs_depth_mm_mean,"
         "abs_depth_mm_std,frac_gt_4mm_mean,frac_gt_4mm_std,delta105_mean,delta105_std\n";
  for (const auto& r : rows) {
    for (const auto& s : kSummarySplits) {
      const SplitMetrics& m = r.*(s.mean);
      const SplitMetrics& d = r.*(s.sd);
      out << r.label << "," << s.name << "," << r.runs << "," << fmt(m.epe_px, 6) << ","
          << fmt(d.epe_px, 6) << "," << fmt(m.bad1, 6) << "," << fmt(d.bad1, 6) << ","
          << fmt(m.abs_depth_mm, 6) << "," << fmt(d.abs_depth_mm, 6) << ","
          << fmt(m.frac_gt_4mm, 6) << "," << fmt(d.frac_gt_4mm, 6) << ","
          << fmt(m.delta105, 6) << "," << fmt(d.delta105, 6) << "\n";
    }
  }
  return out.str();
}

std::string format_summary_text(const std::vector<SummaryRow>& rows) {
  std::size_t label_w = 5;
  for (const auto& r : rows) label_w = std::max(label_w, r.label.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(label_w)) << "label" << std::right
      << pad("runs", 6);
  for (const auto& s : kSummarySplits)
    for (const char* col : {"EPE", "Bad1", "mm"}) out << pad(std::string(s.name) + ":" + col, 18);
  out << "\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(label_w)) << r.label << std::right
        << pad(std::to_string(r.runs), 6);
    for (const auto& s : kSummarySplits) {
      const SplitMetrics& m = r.*(s.mean);
      const SplitMetrics& d = r.*(s.sd);
      out << pad(fmt(m.epe_px, 3) + "+-" + fmt(d.epe_px, 3), 18)
          << pad(fmt(m.bad1, 3) + "+-" + fmt(d.bad1, 3), 18)
          << pad(fmt(m.abs_depth_mm, 2) + "+-" + fmt(d.abs_depth_mm, 2), 18);
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace tstereo
