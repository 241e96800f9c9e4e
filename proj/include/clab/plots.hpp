#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clab/evaluation.hpp"
#include "clab/training.hpp"

namespace clab {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool markers = false;
};

// Static SVG line chart; empty series are skipped.
std::string line_plot_svg(const PlotSpec& spec, std::span<const Series> series);

std::string loss_curve_svg(const RunRecord& record);
// The logged auxiliary weight per step.
std::string weight_schedule_svg(const RunRecord& record);
std::string alignment_gap_svg(const RunRecord& record);
std::string pr_curve_svg(const EvalResult& eval);
// mAP against the swept value, one point per successful run.
std::string sweep_svg(SweepAxis axis, std::span<const SweepRun> runs);

}  // namespace clab
