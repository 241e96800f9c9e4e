#include "clab/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace clab {

ClassMatches match_class(std::span<const FrameEvaluation> frames, int class_id, double iou_threshold) {
  struct Candidate {
    double score;
    std::size_t frame;
    const Detection* det;
  };
  std::vector<Candidate> candidates;
  std::vector<std::vector<const GroundTruthBox*>> truths(frames.size());
  ClassMatches out;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (const auto& d : frames[f].detections) {
      if (d.class_id == class_id) candidates.push_back({d.score, f, &d});
    }
    for (const auto& t : frames[f].truths) {
      if (t.class_id == class_id) truths[f].push_back(&t);
    }
    out.truths += truths[f].size();
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> used(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) used[f].assign(truths[f].size(), false);
  out.detections = candidates.size();
  std::size_t fp = 0;
  for (const auto& c : candidates) {
    double best = -1.0;
    std::size_t best_idx = 0;
    for (std::size_t j = 0; j < truths[c.frame].size(); ++j) {
      if (used[c.frame][j]) continue;
      const double o = iou(c.det->box, truths[c.frame][j]->box);
      if (o > best) best = o, best_idx = j;
    }
    if (best >= iou_threshold) {
      used[c.frame][best_idx] = true;
      ++out.true_positives;
    } else {
      ++fp;
    }
    const double tp = static_cast<double>(out.true_positives);
    out.curve.push_back({out.truths ? tp / static_cast<double>(out.truths) : 0.0, tp / (tp + static_cast<double>(fp))});
  }
  return out;
}

double area_under_envelope(std::span<const PrPoint> curve) {
  if (curve.empty()) return 0.0;
  std::vector<double> envelope(curve.size());
  double running = 0.0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    running = std::max(running, curve[i].precision);
    envelope[i] = running;
  }
  double area = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    area += (curve[i].recall - prev_recall) * envelope[i];
    prev_recall = curve[i].recall;
  }
  return area;
}

std::optional<double> average_precision(std::span<const FrameEvaluation> frames, int class_id, double iou_threshold) {
  const ClassMatches m = match_class(frames, class_id, iou_threshold);
  if (m.truths == 0) return std::nullopt;
  return area_under_envelope(m.curve);
}

std::optional<double> average_precision(const std::vector<Detection>& detections,
                                        const std::vector<GroundTruthBox>& truths, double iou_threshold) {
  FrameEvaluation frame{detections, truths};
  for (auto& d : frame.detections) d.class_id = 0;
  for (auto& t : frame.truths) t.class_id = 0;
  return average_precision(std::span<const FrameEvaluation>(&frame, 1), 0, iou_threshold);
}

EvalResult evaluate_detections(std::span<const FrameEvaluation> frames, std::size_t num_classes, double iou_threshold) {
  EvalResult result;
  for (const auto& f : frames) {
    result.counts.detections += f.detections.size();
    result.counts.ground_truths += f.truths.size();
    for (const auto& t : f.truths) {
      if (t.class_id < 0 || static_cast<std::size_t>(t.class_id) >= num_classes) {
        throw std::invalid_argument("evaluate: ground-truth class " + std::to_string(t.class_id) +
                                    " outside the detector's " + std::to_string(num_classes) + " classes");
      }
    }
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    const ClassMatches m = match_class(frames, static_cast<int>(k), iou_threshold);
    result.counts.matches += m.true_positives;
    if (m.truths == 0) continue;
    const double ap = area_under_envelope(m.curve);
    result.per_class_ap[static_cast<int>(k)] = ap;
    result.pr_curves[static_cast<int>(k)] = m.curve;
    sum += ap;
  }
  result.map = result.per_class_ap.empty() ? 0.0 : sum / static_cast<double>(result.per_class_ap.size());
  return result;
}

EvalResult evaluate_model(const DetectorParams<float>& params, const DetectorConfig& cfg, const Dataset& dataset,
                          std::size_t chunk) {
  if (dataset.num_classes != cfg.num_classes) {
    throw std::invalid_argument("evaluate: dataset has " + std::to_string(dataset.num_classes) +
                                " classes, checkpoint has " + std::to_string(cfg.num_classes));
  }
  std::vector<FrameEvaluation> frames;
  std::vector<const Image*> pending;
  auto flush = [&] {
    if (pending.empty()) return;
    auto dets = infer(params, cfg, frames_to_tensor(pending));
    for (std::size_t i = 0; i < dets.size(); ++i) frames[frames.size() - pending.size() + i].detections = std::move(dets[i]);
    pending.clear();
  };
  for (const auto& video : dataset.videos) {
    for (std::size_t f = 0; f < video.num_frames(); ++f) {
      frames.push_back({{}, video.annotations[f]});
      pending.push_back(&video.frames[f]);
      if (pending.size() == chunk) flush();
    }
  }
  flush();
  return evaluate_detections(frames, cfg.num_classes);
}

}  // namespace clab
