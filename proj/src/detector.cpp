#include "clab/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace clab {

void BackboneConfig::validate() const {
  if (stage_channels.empty()) throw std::invalid_argument("backbone: at least one stage required");
  for (auto c : stage_channels) {
    if (c == 0) throw std::invalid_argument("backbone: stage widths must be >= 1");
  }
  if (tap_stage >= stage_channels.size()) {
    throw std::invalid_argument("backbone: tap_stage " + std::to_string(tap_stage) + " is not a valid stage index");
  }
  if (in_channels == 0) throw std::invalid_argument("backbone: in_channels must be >= 1");
}

void DetectorConfig::validate() const {
  backbone.validate();
  if (num_classes == 0 || head_channels == 0) throw std::invalid_argument("detector: num_classes and head_channels must be >= 1");
  if (!(score_threshold >= 0.0 && score_threshold < 1.0)) throw std::invalid_argument("detector: score_threshold must lie in [0, 1)");
  if (!(nms_threshold > 0.0 && nms_threshold <= 1.0)) throw std::invalid_argument("detector: nms_threshold must lie in (0, 1]");
}

template <typename T>
DetectorParams<T>::DetectorParams(const DetectorConfig& cfg) {
  cfg.validate();
  std::size_t in = cfg.backbone.in_channels;
  for (auto out : cfg.backbone.stage_channels) {
    stages.emplace_back(ConvGeometry{in, out, 3, 2, 1});
    in = out;
  }
  head_hidden = Conv2d<T>(ConvGeometry{in, cfg.head_channels, 3, 1, 1});
  head_out = Conv2d<T>(ConvGeometry{cfg.head_channels, cfg.outputs_per_cell(), 1, 1, 0});
}

template <typename T>
DetectorParams<T> init_detector_params(const DetectorConfig& cfg, Rng& rng) {
  DetectorParams<T> p(cfg);
  for (auto& s : p.stages) init_params(s, rng);
  init_params(p.head_hidden, rng);
  init_params(p.head_out, rng);
  // Small output weights and a background prior of 0.99 keep the first steps of
  // the positive-normalized classification loss bounded.
  for (auto& w : p.head_out.weight.values()) w *= T(0.01);
  p.head_out.bias[0] = static_cast<T>(std::log(99.0 * static_cast<double>(cfg.num_classes)));
  return p;
}

template <typename T>
BackboneTrace<T> backbone_forward(const DetectorParams<T>& params, const Tensor<T>& images,
                                  std::optional<std::size_t> last_stage) {
  const std::size_t last = last_stage.value_or(params.stages.size() - 1);
  if (last >= params.stages.size()) throw std::invalid_argument("backbone_forward: stage index out of range");
  BackboneTrace<T> trace;
  trace.input = images;
  for (std::size_t s = 0; s <= last; ++s) {
    Tensor<T> y = conv2d_forward(params.stages[s], s == 0 ? images : trace.stages.back());
    relu_inplace(y);
    trace.stages.push_back(std::move(y));
  }
  return trace;
}

template <typename T>
void backbone_backward(const DetectorParams<T>& params, const BackboneTrace<T>& trace,
                       std::vector<Tensor<T>> stage_grads, DetectorParams<T>& grads) {
  if (stage_grads.size() != trace.stages.size()) {
    throw std::invalid_argument("backbone_backward: one gradient slot per computed stage required");
  }
  Tensor<T> carry;
  for (std::size_t s = trace.stages.size(); s-- > 0;) {
    Tensor<T> g = std::move(stage_grads[s]);
    if (!carry.empty()) {
      if (g.empty()) {
        g = std::move(carry);
      } else {
        accumulate(g, carry);
      }
    }
    carry = Tensor<T>();
    if (g.empty()) continue;
    require_shape(g, trace.stages[s].shape(), "backbone stage gradient");
    relu_backward_inplace(trace.stages[s], g);
    const Tensor<T>& in = s == 0 ? trace.input : trace.stages[s - 1];
    conv2d_backward(params.stages[s], in, g, grads.stages[s], s == 0 ? nullptr : &carry);
  }
}

template <typename T>
HeadTrace<T> head_forward(const DetectorParams<T>& params, const Tensor<T>& final_feature) {
  HeadTrace<T> trace;
  trace.hidden = conv2d_forward(params.head_hidden, final_feature);
  relu_inplace(trace.hidden);
  trace.output = conv2d_forward(params.head_out, trace.hidden);
  return trace;
}

template <typename T>
Tensor<T> head_backward(const DetectorParams<T>& params, const Tensor<T>& final_feature, const HeadTrace<T>& trace,
                        const Tensor<T>& grad_output, DetectorParams<T>& grads) {
  Tensor<T> g_hidden;
  conv2d_backward(params.head_out, trace.hidden, grad_output, grads.head_out, &g_hidden);
  relu_backward_inplace(trace.hidden, g_hidden);
  Tensor<T> g_final;
  conv2d_backward(params.head_hidden, final_feature, g_hidden, grads.head_hidden, &g_final);
  return g_final;
}

namespace {

struct CellTarget {
  const GroundTruthBox* truth = nullptr;
};

template <typename T>
T smooth_l1(T d, T* grad) {
  const T a = std::abs(d);
  if (a < T(1)) {
    *grad = d;
    return T(0.5) * d * d;
  }
  *grad = d > T(0) ? T(1) : T(-1);
  return a - T(0.5);
}

}  // namespace

template <typename T>
DetectionLoss<T> detection_loss(const Tensor<T>& head_output, std::size_t num_classes, double cell_size,
                                std::span<const std::vector<GroundTruthBox>> targets) {
  const std::size_t channels = num_classes + 5;
  if (head_output.rank() != 4 || head_output.dim(1) != channels || head_output.dim(0) != targets.size()) {
    throw std::invalid_argument("detection_loss: head output " + shape_string(head_output.shape()) +
                                " does not match " + std::to_string(targets.size()) + " target lists and " +
                                std::to_string(num_classes) + " classes");
  }
  for (T v : head_output.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("detection_loss: non-finite head output");
  }
  const std::size_t batch = head_output.dim(0), gh = head_output.dim(2), gw = head_output.dim(3);
  const std::size_t cells = gh * gw;

  // Assignment.
  std::vector<CellTarget> assigned(batch * cells);
  std::size_t positives = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (const auto& gt : targets[b]) {
      if (gt.class_id < 0 || static_cast<std::size_t>(gt.class_id) >= num_classes) {
        throw std::invalid_argument("detection_loss: target class " + std::to_string(gt.class_id) + " out of range");
      }
      const auto col = std::min<std::size_t>(gw - 1, static_cast<std::size_t>(std::max(0.0, gt.box.center_x() / cell_size)));
      const auto row = std::min<std::size_t>(gh - 1, static_cast<std::size_t>(std::max(0.0, gt.box.center_y() / cell_size)));
      auto& slot = assigned[b * cells + row * gw + col];
      if (!slot.truth) ++positives;
      if (!slot.truth || gt.box.area() > slot.truth->box.area()) slot.truth = &gt;
    }
  }

  DetectionLoss<T> out;
  out.positive_cells = positives;
  out.grad = Tensor<T>(head_output.shape());
  const T cls_norm = T(1) / static_cast<T>(std::max<std::size_t>(1, positives));
  const T reg_norm = positives ? T(1) / static_cast<T>(positives) : T(0);
  std::vector<T> probs(num_classes + 1);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* out_b = head_output.outer(b).data();
    T* grad_b = out.grad.outer(b).data();
    for (std::size_t cell = 0; cell < cells; ++cell) {
      const std::size_t row = cell / gw, col = cell % gw;
      const GroundTruthBox* gt = assigned[b * cells + cell].truth;
      const std::size_t label = gt ? static_cast<std::size_t>(gt->class_id) + 1 : 0;

      T max_logit = out_b[cell];
      for (std::size_t k = 1; k <= num_classes; ++k) max_logit = std::max(max_logit, out_b[k * cells + cell]);
      T sum = 0;
      for (std::size_t k = 0; k <= num_classes; ++k) {
        probs[k] = std::exp(out_b[k * cells + cell] - max_logit);
        sum += probs[k];
      }
      out.classification += (std::log(sum) + max_logit - out_b[label * cells + cell]) * cls_norm;
      for (std::size_t k = 0; k <= num_classes; ++k) {
        grad_b[k * cells + cell] = (probs[k] / sum - (k == label ? T(1) : T(0))) * cls_norm;
      }

      if (!gt) continue;
      const double cs = cell_size;
      const T target[4] = {static_cast<T>((gt->box.center_x() - (col + 0.5) * cs) / cs),
                           static_cast<T>((gt->box.center_y() - (row + 0.5) * cs) / cs),
                           static_cast<T>(std::log(gt->box.width() / cs)),
                           static_cast<T>(std::log(gt->box.height() / cs))};
      for (std::size_t j = 0; j < 4; ++j) {
        const std::size_t idx = (num_classes + 1 + j) * cells + cell;
        T g;
        out.regression += smooth_l1(out_b[idx] - target[j], &g) * reg_norm;
        grad_b[idx] = g * reg_norm;
      }
    }
  }
  return out;
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
  std::stable_sort(detections.begin(), detections.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto& d : detections) {
    bool keep = true;
    for (const auto& k : kept) {
      if (k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> decode_detections(const Tensor<float>& head_output, std::size_t image, const DetectorConfig& cfg,
                                         std::size_t image_height, std::size_t image_width) {
  const std::size_t gh = head_output.dim(2), gw = head_output.dim(3), cells = gh * gw;
  const std::size_t k_max = cfg.num_classes;
  const double cs = cfg.cell_size();
  const float* out = head_output.outer(image).data();
  std::vector<Detection> dets;
  std::vector<double> probs(k_max + 1);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    double max_logit = out[cell];
    for (std::size_t k = 1; k <= k_max; ++k) max_logit = std::max<double>(max_logit, out[k * cells + cell]);
    double sum = 0;
    for (std::size_t k = 0; k <= k_max; ++k) {
      probs[k] = std::exp(static_cast<double>(out[k * cells + cell]) - max_logit);
      sum += probs[k];
    }
    std::size_t best = 1;
    for (std::size_t k = 2; k <= k_max; ++k) {
      if (probs[k] > probs[best]) best = k;
    }
    const double score = probs[best] / sum;
    if (score < cfg.score_threshold) continue;
    const std::size_t row = cell / gw, col = cell % gw;
    const double dx = out[(k_max + 1) * cells + cell], dy = out[(k_max + 2) * cells + cell];
    const double dw = std::clamp<double>(out[(k_max + 3) * cells + cell], -4.0, 4.0);
    const double dh = std::clamp<double>(out[(k_max + 4) * cells + cell], -4.0, 4.0);
    const double cx = (col + 0.5 + dx) * cs, cy = (row + 0.5 + dy) * cs;
    const double w = cs * std::exp(dw), h = cs * std::exp(dh);
    Box box{std::clamp(cx - w / 2, 0.0, static_cast<double>(image_width)),
            std::clamp(cy - h / 2, 0.0, static_cast<double>(image_height)),
            std::clamp(cx + w / 2, 0.0, static_cast<double>(image_width)),
            std::clamp(cy + h / 2, 0.0, static_cast<double>(image_height))};
    if (!box.valid()) continue;
    dets.push_back({box, static_cast<int>(best - 1), score});
  }
  auto kept = nms(std::move(dets), cfg.nms_threshold);
  if (kept.size() > cfg.max_detections) kept.resize(cfg.max_detections);
  return kept;
}

std::vector<std::vector<Detection>> infer(const DetectorParams<float>& params, const DetectorConfig& cfg,
                                          const Tensor<float>& images) {
  if (images.rank() != 4 || images.dim(1) != cfg.backbone.in_channels) {
    throw std::invalid_argument("infer: images " + shape_string(images.shape()) + " do not match the detector input");
  }
  const auto trace = backbone_forward(params, images);
  const auto head = head_forward(params, trace.final_feature());
  if (head.output.dim(1) != cfg.outputs_per_cell()) {
    throw std::invalid_argument("infer: parameters do not match the detector config");
  }
  std::vector<std::vector<Detection>> results;
  for (std::size_t b = 0; b < images.dim(0); ++b) {
    results.push_back(decode_detections(head.output, b, cfg, images.dim(2), images.dim(3)));
  }
  return results;
}

#define CLAB_INSTANTIATE_DETECTOR(T)                                                                               \
  template struct DetectorParams<T>;                                                                              \
  template DetectorParams<T> init_detector_params<T>(const DetectorConfig&, Rng&);                                \
  template BackboneTrace<T> backbone_forward<T>(const DetectorParams<T>&, const Tensor<T>&,                       \
                                                std::optional<std::size_t>);                                       \
  template void backbone_backward<T>(const DetectorParams<T>&, const BackboneTrace<T>&, std::vector<Tensor<T>>,   \
                                     DetectorParams<T>&);                                                          \
  template HeadTrace<T> head_forward<T>(const DetectorParams<T>&, const Tensor<T>&);                              \
  template Tensor<T> head_backward<T>(const DetectorParams<T>&, const Tensor<T>&, const HeadTrace<T>&,            \
                                      const Tensor<T>&, DetectorParams<T>&);                                      \
  template DetectionLoss<T> detection_loss<T>(const Tensor<T>&, std::size_t, double,                              \
                                              std::span<const std::vector<GroundTruthBox>>);

CLAB_INSTANTIATE_DETECTOR(float)
CLAB_INSTANTIATE_DETECTOR(double)

}  // namespace clab
