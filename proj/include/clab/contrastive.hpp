#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "clab/nn.hpp"
#include "clab/tensor.hpp"

namespace clab {

// Auxiliary branch: conv3x3 -> ReLU -> adaptive avg pool (1x1) -> flatten
// -> linear -> ReLU -> linear -> ReLU.
struct CabConfig {
  std::size_t in_channels = 0;  // channels of the tapped backbone feature map
  std::size_t conv_channels = 512;
  std::size_t proj_hidden = 256;
  std::size_t proj_out = 128;
  double temperature = 0.1;

  // Throws std::invalid_argument on zero dimensions or a non-positive temperature.
  void validate() const;
  bool operator==(const CabConfig&) const = default;
};

template <typename T>
struct CabParams {
  Conv2d<T> conv;
  Linear<T> proj1;
  Linear<T> proj2;

  CabParams() = default;
  explicit CabParams(const CabConfig& cfg);

  NamedTensors<T> named() { return collect<NamedTensors<T>>(*this); }
  ConstNamedTensors<T> named() const { return collect<ConstNamedTensors<T>>(*this); }

 private:
  template <typename Out, typename Self>
  static Out collect(Self& self) {
    Out out;
    append_named(out, "cab.conv", self.conv);
    append_named(out, "cab.proj1", self.proj1);
    append_named(out, "cab.proj2", self.proj2);
    return out;
  }
};

template <typename T>
CabParams<T> init_cab_params(const CabConfig& cfg, Rng& rng);

// Intermediate activations kept for the backward pass.
template <typename T>
struct CabTrace {
  Tensor<T> conv;    // post-ReLU [B, conv_channels, H, W]
  Tensor<T> pooled;  // [B, conv_channels]
  Tensor<T> hidden;  // post-ReLU [B, proj_hidden]
  Tensor<T> output;  // post-ReLU [B, proj_out]
};

template <typename T>
CabTrace<T> cab_forward_trace(const CabParams<T>& params, const Tensor<T>& feature_map);

// feature_map: [B, in_channels, H, W] -> embeddings [B, proj_out], all entries >= 0.
template <typename T>
Tensor<T> cab_forward(const CabParams<T>& params, const Tensor<T>& feature_map) {
  return cab_forward_trace(params, feature_map).output;
}

// Accumulates parameter gradients and returns the gradient w.r.t. the feature map.
template <typename T>
Tensor<T> cab_backward(const CabParams<T>& params, const Tensor<T>& feature_map, const CabTrace<T>& trace,
                       const Tensor<T>& grad_embeddings, CabParams<T>& grads);

inline constexpr double kCosineEpsilon = 1e-12;

// u.v / max(|u||v|, 1e-12)
template <typename T>
T cosine_sim(std::span<const T> u, std::span<const T> v);

// Checks the contrastive batch layout: at least two distinct videos, each with at
// least two frames. Returns the number of distinct videos.
std::size_t validate_contrastive_layout(std::span<const int> video_index);

template <typename T>
struct InfoNceResult {
  T loss = 0;
  Tensor<T> grad;  // d loss / d embeddings, same shape as the embeddings
};

// Multi-positive InfoNCE. Every frame is an anchor; every other frame of the same
// video is a positive; the denominator for anchor a runs over every frame k != a.
// The loss is the mean over all (anchor, positive) pairs.
// embeddings: [M, D], video_index: [M].
template <typename T>
InfoNceResult<T> info_nce_loss_with_grad(const Tensor<T>& embeddings, std::span<const int> video_index,
                                         T temperature);

template <typename T>
T info_nce_loss(const Tensor<T>& embeddings, std::span<const int> video_index, T temperature);

// Reference evaluation by explicit loops in double precision. Shares no code with
// info_nce_loss beyond the Tensor container.
double info_nce_oracle(const Tensor<double>& embeddings, std::span<const int> video_index, double temperature);

// Mean cosine similarity of intra-video pairs minus mean over inter-video pairs.
template <typename T>
double alignment_gap(const Tensor<T>& embeddings, std::span<const int> video_index);

}  // namespace clab
