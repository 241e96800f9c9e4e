#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "clab/rng.hpp"
#include "clab/tensor.hpp"

namespace clab {

struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;

  std::size_t output_extent(std::size_t in) const { return (in + 2 * padding - kernel) / stride + 1; }
  bool operator==(const ConvGeometry&) const = default;
};

// weight: [out, in, k, k], bias: [out]
template <typename T>
struct Conv2d {
  ConvGeometry geometry;
  Tensor<T> weight;
  Tensor<T> bias;

  Conv2d() = default;
  explicit Conv2d(const ConvGeometry& g)
      : geometry(g),
        weight({g.out_channels, g.in_channels, g.kernel, g.kernel}),
        bias({g.out_channels}) {}
};

// weight: [out, in], bias: [out]
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out) : weight({out, in}), bias({out}) {}
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
};

// Fan-in scaled uniform weights (bound sqrt(6 / fan_in)), zero biases.
template <typename T>
void init_fan_in_uniform(Tensor<T>& weight, Tensor<T>& bias, std::size_t fan_in, Rng& rng);

template <typename T>
void init_params(Conv2d<T>& conv, Rng& rng) {
  init_fan_in_uniform(conv.weight, conv.bias,
                      conv.geometry.in_channels * conv.geometry.kernel * conv.geometry.kernel, rng);
}
template <typename T>
void init_params(Linear<T>& fc, Rng& rng) {
  init_fan_in_uniform(fc.weight, fc.bias, fc.in_features(), rng);
}

// x: [B, Cin, H, W] -> [B, Cout, H', W']
template <typename T>
Tensor<T> conv2d_forward(const Conv2d<T>& conv, const Tensor<T>& x);

// Accumulates parameter gradients into `grads`; writes the input gradient when
// `grad_input` is non-null.
template <typename T>
void conv2d_backward(const Conv2d<T>& conv, const Tensor<T>& x, const Tensor<T>& grad_out,
                     Conv2d<T>& grads, Tensor<T>* grad_input);

// x: [B, in] -> [B, out]
template <typename T>
Tensor<T> linear_forward(const Linear<T>& fc, const Tensor<T>& x);

template <typename T>
void linear_backward(const Linear<T>& fc, const Tensor<T>& x, const Tensor<T>& grad_out, Linear<T>& grads,
                     Tensor<T>* grad_input);

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.values()) v = v > T(0) ? v : T(0);
}

// Masks grad by (output > 0); `output` is the post-ReLU activation.
template <typename T>
void relu_backward_inplace(const Tensor<T>& output, Tensor<T>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(output[i] > T(0))) grad[i] = T(0);
  }
}

// Adaptive average pooling to 1x1 followed by flatten: [B, C, H, W] -> [B, C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out);

template <typename T>
Conv2d<T> zeros_like(const Conv2d<T>& c) {
  return Conv2d<T>(c.geometry);
}
template <typename T>
Linear<T> zeros_like(const Linear<T>& l) {
  return Linear<T>(l.in_features(), l.out_features());
}

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>*>>;
template <typename T>
using ConstNamedTensors = std::vector<std::pair<std::string, const Tensor<T>*>>;

// Works for const and mutable layers; `Out` is the matching NamedTensors flavour.
template <typename Out, typename Layer>
void append_named(Out& out, const std::string& prefix, Layer& layer) {
  out.emplace_back(prefix + ".weight", &layer.weight);
  out.emplace_back(prefix + ".bias", &layer.bias);
}

}  // namespace clab
