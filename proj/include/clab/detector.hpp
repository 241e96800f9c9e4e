#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <span>
#include <vector>

#include "clab/boxes.hpp"
#include "clab/nn.hpp"
#include "clab/tensor.hpp"

namespace clab {

// Each stage is one stride-2 3x3 convolution followed by ReLU, so stage s has
// cumulative stride 2^(s+1).
struct BackboneConfig {
  std::vector<std::size_t> stage_channels{32, 64, 128};
  std::size_t tap_stage = 1;  // output of this stage feeds the auxiliary branch
  std::size_t in_channels = 3;

  void validate() const;
  std::size_t tap_channels() const { return stage_channels.at(tap_stage); }
  std::size_t stride() const { return std::size_t{1} << stage_channels.size(); }
  bool operator==(const BackboneConfig&) const = default;
};

struct DetectorConfig {
  BackboneConfig backbone;
  std::size_t num_classes = 3;
  std::size_t head_channels = 64;
  double score_threshold = 0.05;
  double nms_threshold = 0.5;
  std::size_t max_detections = 100;

  void validate() const;
  // Head channels per cell: background + classes logits, then (dx, dy, log dw, log dh).
  std::size_t outputs_per_cell() const { return num_classes + 1 + 4; }
  double cell_size() const { return static_cast<double>(backbone.stride()); }
  bool operator==(const DetectorConfig&) const = default;
};

template <typename T>
struct DetectorParams {
  std::vector<Conv2d<T>> stages;
  Conv2d<T> head_hidden;  // 3x3, final stage -> head_channels
  Conv2d<T> head_out;     // 1x1, head_channels -> outputs_per_cell

  DetectorParams() = default;
  explicit DetectorParams(const DetectorConfig& cfg);
  NamedTensors<T> named() { return collect<NamedTensors<T>>(*this); }
  ConstNamedTensors<T> named() const { return collect<ConstNamedTensors<T>>(*this); }

 private:
  template <typename Out, typename Self>
  static Out collect(Self& self) {
    Out out;
    for (std::size_t s = 0; s < self.stages.size(); ++s) {
      append_named(out, "backbone.stage" + std::to_string(s), self.stages[s]);
    }
    append_named(out, "head.hidden", self.head_hidden);
    append_named(out, "head.out", self.head_out);
    return out;
  }
};

template <typename T>
DetectorParams<T> init_detector_params(const DetectorConfig& cfg, Rng& rng);

template <typename T>
struct BackboneTrace {
  Tensor<T> input;
  std::vector<Tensor<T>> stages;  // post-ReLU output of every computed stage

  const Tensor<T>& final_feature() const { return stages.back(); }
};

// Runs stages [0, last_stage]; all stages when last_stage is unset.
template <typename T>
BackboneTrace<T> backbone_forward(const DetectorParams<T>& params, const Tensor<T>& images,
                                  std::optional<std::size_t> last_stage = std::nullopt);

// stage_grads[s] is the loss gradient arriving at the output of stage s from
// outside the backbone (an empty tensor means none). Accumulates into `grads`.
template <typename T>
void backbone_backward(const DetectorParams<T>& params, const BackboneTrace<T>& trace,
                       std::vector<Tensor<T>> stage_grads, DetectorParams<T>& grads);

template <typename T>
struct HeadTrace {
  Tensor<T> hidden;  // post-ReLU
  Tensor<T> output;  // [B, outputs_per_cell, Hc, Wc]
};

template <typename T>
HeadTrace<T> head_forward(const DetectorParams<T>& params, const Tensor<T>& final_feature);

template <typename T>
Tensor<T> head_backward(const DetectorParams<T>& params, const Tensor<T>& final_feature, const HeadTrace<T>& trace,
                        const Tensor<T>& grad_output, DetectorParams<T>& grads);

template <typename T>
struct DetectionLoss {
  T regression = 0;
  T classification = 0;
  std::size_t positive_cells = 0;
  Tensor<T> grad;  // d(regression + classification) / d head output
};

// Cross-entropy summed over all cells and smooth-L1 box regression summed over
// positive cells, both divided by the positive-cell count (at least 1).
// A cell is positive when a target center falls in it; the largest-area target wins when several do.
template <typename T>
DetectionLoss<T> detection_loss(const Tensor<T>& head_output, std::size_t num_classes, double cell_size,
                                std::span<const std::vector<GroundTruthBox>> targets);

// Greedy class-wise suppression; output sorted by score, ties kept in input order.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold);

std::vector<Detection> decode_detections(const Tensor<float>& head_output, std::size_t image, const DetectorConfig& cfg,
                                         std::size_t image_height, std::size_t image_width);

// Backbone, head, score threshold and class-wise NMS. Never touches the auxiliary
// branch. images: [B, 3, H, W] in [0, 1].
std::vector<std::vector<Detection>> infer(const DetectorParams<float>& params, const DetectorConfig& cfg,
                                          const Tensor<float>& images);

}  // namespace clab
