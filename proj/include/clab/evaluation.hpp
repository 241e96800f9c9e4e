#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "clab/boxes.hpp"
#include "clab/detector.hpp"
#include "clab/synthetic.hpp"

namespace clab {

struct FrameEvaluation {
  std::vector<Detection> detections;
  std::vector<GroundTruthBox> truths;
};

struct PrPoint {
  double recall = 0;
  double precision = 0;
};

struct ClassMatches {
  std::size_t detections = 0;
  std::size_t truths = 0;
  std::size_t true_positives = 0;
  std::vector<PrPoint> curve;  // one point per detection in score order
};

// Greedy matching in score order (ties in input order): a detection is a true
// positive when its best IoU against the still-unmatched truths of its frame is
// >= iou_threshold.
ClassMatches match_class(std::span<const FrameEvaluation> frames, int class_id, double iou_threshold = 0.5);

// All-points interpolated AP (area under the monotone precision envelope).
// Empty when the class has no ground truth.
std::optional<double> average_precision(std::span<const FrameEvaluation> frames, int class_id,
                                        double iou_threshold = 0.5);

// Single-frame, single-class form: class ids are ignored.
std::optional<double> average_precision(const std::vector<Detection>& detections,
                                        const std::vector<GroundTruthBox>& truths, double iou_threshold = 0.5);

double area_under_envelope(std::span<const PrPoint> curve);

struct EvalCounts {
  std::size_t detections = 0;
  std::size_t ground_truths = 0;
  std::size_t matches = 0;
};

struct EvalResult {
  std::map<int, double> per_class_ap;  // classes with at least one ground truth
  double map = 0;
  std::vector<std::pair<std::int64_t, double>> alignment_gap_curve;
  EvalCounts counts;
  std::map<int, std::vector<PrPoint>> pr_curves;
};

EvalResult evaluate_detections(std::span<const FrameEvaluation> frames, std::size_t num_classes,
                               double iou_threshold = 0.5);

// Runs inference on every frame of every video.
EvalResult evaluate_model(const DetectorParams<float>& params, const DetectorConfig& cfg, const Dataset& dataset,
                          std::size_t chunk = 16);

}  // namespace clab
