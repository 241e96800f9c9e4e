#include "clab/plots.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "clab/synthetic.hpp"

namespace clab {
namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 160, kTop = 40, kBottom = 55;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string tick_label(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << v;
  return s.str();
}

}  // namespace

std::string line_plot_svg(const PlotSpec& spec, std::span<const Series> series) {
  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo, y_lo = x_lo, y_hi = -x_lo;
  auto tx = [&](double x) { return spec.log_x ? std::log10(x) : x; };
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      if (!std::isfinite(y) || (spec.log_x && x <= 0)) continue;
      x_lo = std::min(x_lo, tx(x));
      x_hi = std::max(x_hi, tx(x));
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
    }
  }
  if (!std::isfinite(x_lo)) x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  if (x_hi == x_lo) x_lo -= 0.5, x_hi += 0.5;
  if (y_hi == y_lo) y_lo -= 0.5, y_hi += 0.5;
  const double pad = 0.05 * (y_hi - y_lo);
  y_lo -= pad;
  y_hi += pad;

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (tx(x) - x_lo) / (x_hi - x_lo) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph; };

  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(spec.title)
      << "</text>\n";
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";

  for (int i = 0; i <= 4; ++i) {
    const double fy = y_lo + (y_hi - y_lo) * i / 4.0;
    const double fx = x_lo + (x_hi - x_lo) * i / 4.0;
    const double xv = spec.log_x ? std::pow(10.0, fx) : fx;
    svg << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft + pw << "\" y1=\"" << py(fy) << "\" y2=\"" << py(fy)
        << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">" << tick_label(fy)
        << "</text>\n";
    svg << "<text x=\"" << px(xv) << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">" << tick_label(xv)
        << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">"
      << escape(spec.x_label) << "</text>\n";
  svg << "<text transform=\"translate(18," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(spec.y_label) << "</text>\n";

  std::size_t drawn = 0;
  for (const auto& s : series) {
    if (s.points.empty()) continue;
    const char* color = kPalette[drawn % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (auto [x, y] : s.points) {
      if (!std::isfinite(y) || (spec.log_x && x <= 0)) continue;
      svg << px(x) << ',' << py(y) << ' ';
    }
    svg << "\"/>\n";
    if (spec.markers) {
      for (auto [x, y] : s.points) {
        if (!std::isfinite(y) || (spec.log_x && x <= 0)) continue;
        svg << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
    }
    const double ly = kTop + 10 + 18.0 * static_cast<double>(drawn);
    svg << "<line x1=\"" << kLeft + pw + 12 << "\" x2=\"" << kLeft + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << kLeft + pw + 38 << "\" y=\"" << ly + 4 << "\">" << escape(s.label) << "</text>\n";
    ++drawn;
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string loss_curve_svg(const RunRecord& record) {
  std::vector<Series> s(4);
  s[0].label = "total";
  s[1].label = "regression";
  s[2].label = "classification";
  s[3].label = "auxiliary";
  for (const auto& r : record.steps) {
    const double t = static_cast<double>(r.step);
    s[0].points.emplace_back(t, r.loss.total);
    s[1].points.emplace_back(t, r.loss.regression_loss);
    s[2].points.emplace_back(t, r.loss.classification_loss);
    if (r.auxiliary_computed) s[3].points.emplace_back(t, r.loss.auxiliary_loss);
  }
  return line_plot_svg({"Training losses", "step", "loss"}, s);
}

std::string weight_schedule_svg(const RunRecord& record) {
  Series s{"w(t)", {}};
  for (const auto& r : record.steps) s.points.emplace_back(static_cast<double>(r.step), r.loss.auxiliary_weight);
  return line_plot_svg({"Auxiliary loss weight", "step", "weight"}, std::span(&s, 1));
}

std::string alignment_gap_svg(const RunRecord& record) {
  Series s{"alignment gap", {}};
  for (auto [t, g] : record.alignment_gap_curve) s.points.emplace_back(static_cast<double>(t), g);
  return line_plot_svg({"Intra minus inter video similarity", "step", "gap"}, std::span(&s, 1));
}

std::string pr_curve_svg(const EvalResult& eval) {
  std::vector<Series> s;
  for (const auto& [k, curve] : eval.pr_curves) {
    Series one;
    std::ostringstream label;
    label << (k >= 0 && static_cast<std::size_t>(k) < kNumShapeClasses ? shape_name(static_cast<ShapeClass>(k)) : "class " + std::to_string(k));
    auto ap = eval.per_class_ap.find(k);
    if (ap != eval.per_class_ap.end()) label << " AP " << std::fixed << std::setprecision(3) << ap->second;
    one.label = label.str();
    for (const auto& p : curve) one.points.emplace_back(p.recall, p.precision);
    s.push_back(std::move(one));
  }
  return line_plot_svg({"Precision / recall at IoU 0.5", "recall", "precision"}, s);
}

std::string sweep_svg(SweepAxis axis, std::span<const SweepRun> runs) {
  Series s{"mAP", {}};
  for (const auto& r : runs) {
    if (r.eval) s.points.emplace_back(r.value, r.eval->map);
  }
  const bool log_x = axis != SweepAxis::kCabDlwGrid;
  return line_plot_svg({"Sweep over " + sweep_axis_name(axis), sweep_axis_name(axis), "val mAP", log_x, true},
                       std::span(&s, 1));
}

}  // namespace clab
