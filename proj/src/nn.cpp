#include "clab/nn.hpp"

#include <Eigen/Core>
#include <cmath>

namespace clab {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Unfolds one image [C, H, W] into columns [C*k*k, Ho*Wo].
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width,
            const ConvGeometry& g, std::size_t out_h, std::size_t out_w, T* col) {
  const std::size_t k = g.kernel;
  const long pad = static_cast<long>(g.padding);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = image + c * height * width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= static_cast<long>(height)) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = plane + iy * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<long>(width)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t height, std::size_t width,
            const ConvGeometry& g, std::size_t out_h, std::size_t out_w, T* image) {
  const std::size_t k = g.kernel;
  const long pad = static_cast<long>(g.padding);
  std::fill(image, image + channels * height * width, T(0));
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = image + c * height * width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(height)) continue;
          const T* src = row + oy * out_w;
          T* dst = plane + iy * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<long>(width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv_input(const Conv2d<T>& conv, const Tensor<T>& x) {
  const auto& g = conv.geometry;
  if (x.rank() != 4 || x.dim(1) != g.in_channels) {
    throw std::invalid_argument("conv2d: input " + shape_string(x.shape()) + " does not match " +
                                std::to_string(g.in_channels) + " input channels");
  }
  require_shape(conv.weight, {g.out_channels, g.in_channels, g.kernel, g.kernel}, "conv2d weight");
  require_shape(conv.bias, {g.out_channels}, "conv2d bias");
  if (x.dim(2) + 2 * g.padding < g.kernel || x.dim(3) + 2 * g.padding < g.kernel) {
    throw std::invalid_argument("conv2d: input " + shape_string(x.shape()) + " smaller than kernel");
  }
}

}  // namespace

template <typename T>
void init_fan_in_uniform(Tensor<T>& weight, Tensor<T>& bias, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& w : weight.values()) w = static_cast<T>(rng.uniform(-bound, bound));
  bias.fill(T(0));
}

template <typename T>
Tensor<T> conv2d_forward(const Conv2d<T>& conv, const Tensor<T>& x) {
  check_conv_input(conv, x);
  const auto& g = conv.geometry;
  const std::size_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = g.output_extent(h), ow = g.output_extent(w);
  const std::size_t patch = g.in_channels * g.kernel * g.kernel;
  Tensor<T> out({batch, g.out_channels, oh, ow});
  AlignedVector<T> col(patch * oh * ow);
  ConstMatrixMap<T> weight(conv.weight.data(), g.out_channels, patch);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(conv.bias.data(), g.out_channels);
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(x.outer(b).data(), g.in_channels, h, w, g, oh, ow, col.data());
    MatrixMap<T> result(out.outer(b).data(), g.out_channels, oh * ow);
    result.noalias() = weight * ConstMatrixMap<T>(col.data(), patch, oh * ow);
    result.colwise() += bias;
  }
  return out;
}

template <typename T>
void conv2d_backward(const Conv2d<T>& conv, const Tensor<T>& x, const Tensor<T>& grad_out,
                     Conv2d<T>& grads, Tensor<T>* grad_input) {
  check_conv_input(conv, x);
  const auto& g = conv.geometry;
  const std::size_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = g.output_extent(h), ow = g.output_extent(w);
  const std::size_t patch = g.in_channels * g.kernel * g.kernel;
  require_shape(grad_out, {batch, g.out_channels, oh, ow}, "conv2d grad_out");
  require_shape(grads.weight, conv.weight.shape(), "conv2d weight grad");
  if (grad_input) *grad_input = Tensor<T>(x.shape());

  AlignedVector<T> col(patch * oh * ow);
  ConstMatrixMap<T> weight(conv.weight.data(), g.out_channels, patch);
  MatrixMap<T> dweight(grads.weight.data(), g.out_channels, patch);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dbias(grads.bias.data(), g.out_channels);
  for (std::size_t b = 0; b < batch; ++b) {
    ConstMatrixMap<T> dy(grad_out.outer(b).data(), g.out_channels, oh * ow);
    im2col(x.outer(b).data(), g.in_channels, h, w, g, oh, ow, col.data());
    ConstMatrixMap<T> cols(col.data(), patch, oh * ow);
    dweight.noalias() += dy * cols.transpose();
    dbias += dy.rowwise().sum();
    if (grad_input) {
      MatrixMap<T> dcol(col.data(), patch, oh * ow);
      dcol.noalias() = weight.transpose() * dy;
      col2im(col.data(), g.in_channels, h, w, g, oh, ow, grad_input->outer(b).data());
    }
  }
}

template <typename T>
Tensor<T> linear_forward(const Linear<T>& fc, const Tensor<T>& x) {
  if (x.rank() != 2 || x.dim(1) != fc.in_features()) {
    throw std::invalid_argument("linear: input " + shape_string(x.shape()) + " does not match " +
                                std::to_string(fc.in_features()) + " input features");
  }
  require_shape(fc.bias, {fc.out_features()}, "linear bias");
  const std::size_t batch = x.dim(0);
  Tensor<T> out({batch, fc.out_features()});
  ConstMatrixMap<T> in(x.data(), batch, fc.in_features());
  ConstMatrixMap<T> weight(fc.weight.data(), fc.out_features(), fc.in_features());
  MatrixMap<T> result(out.data(), batch, fc.out_features());
  result.noalias() = in * weight.transpose();
  result.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(fc.bias.data(), fc.out_features());
  return out;
}

template <typename T>
void linear_backward(const Linear<T>& fc, const Tensor<T>& x, const Tensor<T>& grad_out, Linear<T>& grads,
                     Tensor<T>* grad_input) {
  const std::size_t batch = x.dim(0);
  require_shape(grad_out, {batch, fc.out_features()}, "linear grad_out");
  require_shape(grads.weight, fc.weight.shape(), "linear weight grad");
  ConstMatrixMap<T> in(x.data(), batch, fc.in_features());
  ConstMatrixMap<T> dy(grad_out.data(), batch, fc.out_features());
  MatrixMap<T>(grads.weight.data(), fc.out_features(), fc.in_features()).noalias() += dy.transpose() * in;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grads.bias.data(), fc.out_features()) += dy.colwise().sum();
  if (grad_input) {
    *grad_input = Tensor<T>(x.shape());
    ConstMatrixMap<T> weight(fc.weight.data(), fc.out_features(), fc.in_features());
    MatrixMap<T>(grad_input->data(), batch, fc.in_features()).noalias() = dy * weight;
  }
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(2) == 0 || x.dim(3) == 0) {
    throw std::invalid_argument("global_avg_pool: expected non-empty [B, C, H, W], got " + shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), channels = x.dim(1), area = x.dim(2) * x.dim(3);
  Tensor<T> out({batch, channels});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T* plane = x.data() + (b * channels + c) * area;
      T sum = 0;
      for (std::size_t i = 0; i < area; ++i) sum += plane[i];
      out[b * channels + c] = sum / static_cast<T>(area);
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  const std::size_t batch = input_shape.at(0), channels = input_shape.at(1);
  const std::size_t area = input_shape.at(2) * input_shape.at(3);
  require_shape(grad_out, {batch, channels}, "global_avg_pool grad_out");
  Tensor<T> grad(input_shape);
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    const T v = grad_out[bc] / static_cast<T>(area);
    std::fill(grad.data() + bc * area, grad.data() + (bc + 1) * area, v);
  }
  return grad;
}

#define CLAB_INSTANTIATE_NN(T)                                                                        \
  template void init_fan_in_uniform<T>(Tensor<T>&, Tensor<T>&, std::size_t, Rng&);                   \
  template Tensor<T> conv2d_forward<T>(const Conv2d<T>&, const Tensor<T>&);                         \
  template void conv2d_backward<T>(const Conv2d<T>&, const Tensor<T>&, const Tensor<T>&, Conv2d<T>&, \
                                   Tensor<T>*);                                                      \
  template Tensor<T> linear_forward<T>(const Linear<T>&, const Tensor<T>&);                         \
  template void linear_backward<T>(const Linear<T>&, const Tensor<T>&, const Tensor<T>&, Linear<T>&, \
                                   Tensor<T>*);                                                      \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                           \
  template Tensor<T> global_avg_pool_backward<T>(const Shape&, const Tensor<T>&);

CLAB_INSTANTIATE_NN(float)
CLAB_INSTANTIATE_NN(double)

}  // namespace clab
