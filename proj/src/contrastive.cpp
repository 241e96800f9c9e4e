#include "clab/contrastive.hpp"

#include <Eigen/Core>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace clab {

void CabConfig::validate() const {
  if (in_channels == 0 || conv_channels == 0 || proj_hidden == 0 || proj_out == 0) {
    throw std::invalid_argument("cab: all dimensions must be >= 1");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("cab: temperature must be > 0, got " + std::to_string(temperature));
  }
}

template <typename T>
CabParams<T>::CabParams(const CabConfig& cfg)
    : conv(ConvGeometry{cfg.in_channels, cfg.conv_channels, 3, 1, 1}),
      proj1(cfg.conv_channels, cfg.proj_hidden),
      proj2(cfg.proj_hidden, cfg.proj_out) {}

template <typename T>
CabParams<T> init_cab_params(const CabConfig& cfg, Rng& rng) {
  cfg.validate();
  CabParams<T> p(cfg);
  init_params(p.conv, rng);
  init_params(p.proj1, rng);
  init_params(p.proj2, rng);
  return p;
}

template <typename T>
CabTrace<T> cab_forward_trace(const CabParams<T>& params, const Tensor<T>& feature_map) {
  if (feature_map.rank() != 4 || feature_map.dim(2) == 0 || feature_map.dim(3) == 0) {
    throw std::invalid_argument("cab_forward: expected [B, C, H, W] with H, W >= 1, got " +
                                shape_string(feature_map.shape()));
  }
  if (params.proj1.in_features() != params.conv.geometry.out_channels ||
      params.proj2.in_features() != params.proj1.out_features()) {
    throw std::invalid_argument("cab_forward: inconsistent parameter shapes");
  }
  CabTrace<T> trace;
  trace.conv = conv2d_forward(params.conv, feature_map);
  relu_inplace(trace.conv);
  trace.pooled = global_avg_pool(trace.conv);
  trace.hidden = linear_forward(params.proj1, trace.pooled);
  relu_inplace(trace.hidden);
  trace.output = linear_forward(params.proj2, trace.hidden);
  relu_inplace(trace.output);
  return trace;
}

template <typename T>
Tensor<T> cab_backward(const CabParams<T>& params, const Tensor<T>& feature_map, const CabTrace<T>& trace,
                       const Tensor<T>& grad_embeddings, CabParams<T>& grads) {
  Tensor<T> g = grad_embeddings;
  relu_backward_inplace(trace.output, g);
  Tensor<T> g_hidden;
  linear_backward(params.proj2, trace.hidden, g, grads.proj2, &g_hidden);
  relu_backward_inplace(trace.hidden, g_hidden);
  Tensor<T> g_pooled;
  linear_backward(params.proj1, trace.pooled, g_hidden, grads.proj1, &g_pooled);
  Tensor<T> g_conv = global_avg_pool_backward(trace.conv.shape(), g_pooled);
  relu_backward_inplace(trace.conv, g_conv);
  Tensor<T> g_input;
  conv2d_backward(params.conv, feature_map, g_conv, grads.conv, &g_input);
  return g_input;
}

template <typename T>
T cosine_sim(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size()) {
    throw std::invalid_argument("cosine_sim: length mismatch " + std::to_string(u.size()) + " vs " +
                                std::to_string(v.size()));
  }
  T dot = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  const T denom = std::max(std::sqrt(uu) * std::sqrt(vv), static_cast<T>(kCosineEpsilon));
  return dot / denom;
}

std::size_t validate_contrastive_layout(std::span<const int> video_index) {
  std::map<int, std::size_t> counts;
  for (int v : video_index) ++counts[v];
  if (counts.size() < 2) {
    throw std::invalid_argument("contrastive loss needs at least 2 videos in the batch, got " +
                                std::to_string(counts.size()));
  }
  for (const auto& [video, n] : counts) {
    if (n < 2) {
      throw std::invalid_argument("contrastive loss needs at least 2 frames per video; video " +
                                  std::to_string(video) + " has " + std::to_string(n));
    }
  }
  return counts.size();
}

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void check_embeddings(const Tensor<T>& embeddings, std::span<const int> video_index) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != video_index.size() || embeddings.dim(1) == 0) {
    throw std::invalid_argument("info_nce: embeddings " + shape_string(embeddings.shape()) +
                                " do not match " + std::to_string(video_index.size()) + " video indices");
  }
  for (T v : embeddings.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("info_nce: non-finite embedding entry");
  }
  validate_contrastive_layout(video_index);
}

}  // namespace

template <typename T>
InfoNceResult<T> info_nce_loss_with_grad(const Tensor<T>& embeddings, std::span<const int> video_index,
                                         T temperature) {
  if (!(temperature > T(0))) throw std::invalid_argument("info_nce: temperature must be > 0");
  check_embeddings(embeddings, video_index);
  const auto m = static_cast<Eigen::Index>(embeddings.dim(0));
  const auto d = static_cast<Eigen::Index>(embeddings.dim(1));
  Eigen::Map<const RowMatrix<T>> z(embeddings.data(), m, d);

  Eigen::Matrix<T, Eigen::Dynamic, 1> norms = z.rowwise().norm();
  RowMatrix<T> gram = z * z.transpose();
  RowMatrix<T> denom = norms * norms.transpose();
  const T eps = static_cast<T>(kCosineEpsilon);
  const auto clamped = (denom.array() <= eps).eval();
  RowMatrix<T> sim = gram.array() / denom.array().max(eps);

  // coeff(a, b) = d loss / d sim(a, b), treating the matrix as non-symmetric.
  RowMatrix<T> coeff = RowMatrix<T>::Zero(m, m);
  std::size_t pairs = 0;
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) {
      if (a != b && video_index[a] == video_index[b]) ++pairs;
    }
  }
  const T inv_pairs = T(1) / static_cast<T>(pairs);
  T loss = 0;
  for (Eigen::Index a = 0; a < m; ++a) {
    T shift = -std::numeric_limits<T>::infinity();
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k != a) shift = std::max(shift, sim(a, k) / temperature);
    }
    T sum = 0;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k != a) sum += std::exp(sim(a, k) / temperature - shift);
    }
    const T log_denominator = shift + std::log(sum);
    std::size_t positives = 0;
    for (Eigen::Index p = 0; p < m; ++p) {
      if (p != a && video_index[p] == video_index[a]) {
        loss += (log_denominator - sim(a, p) / temperature) * inv_pairs;
        coeff(a, p) -= inv_pairs / temperature;
        ++positives;
      }
    }
    const T scale = static_cast<T>(positives) * inv_pairs / temperature;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k != a) coeff(a, k) += scale * std::exp(sim(a, k) / temperature - log_denominator);
    }
  }

  // sim(a, b) = z_a.z_b / max(n_a n_b, eps)
  // unclamped: d sim / d z_a = z_b / (n_a n_b) - sim * z_a / n_a^2
  // clamped:   d sim / d z_a = z_b / eps
  RowMatrix<T> sym = coeff + coeff.transpose();
  RowMatrix<T> grad = RowMatrix<T>::Zero(m, d);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) {
      if (a == b || sym(a, b) == T(0)) continue;
      if (clamped(a, b)) {
        grad.row(a) += sym(a, b) / eps * z.row(b);
      } else {
        grad.row(a) += sym(a, b) * (z.row(b) / denom(a, b) - sim(a, b) / (norms(a) * norms(a)) * z.row(a));
      }
    }
  }

  InfoNceResult<T> result;
  result.loss = loss;
  result.grad = Tensor<T>(embeddings.shape());
  Eigen::Map<RowMatrix<T>>(result.grad.data(), m, d) = grad;
  return result;
}

template <typename T>
T info_nce_loss(const Tensor<T>& embeddings, std::span<const int> video_index, T temperature) {
  return info_nce_loss_with_grad(embeddings, video_index, temperature).loss;
}

template <typename T>
double alignment_gap(const Tensor<T>& embeddings, std::span<const int> video_index) {
  check_embeddings(embeddings, video_index);
  const std::size_t m = embeddings.dim(0);
  double intra = 0, inter = 0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      const double s = static_cast<double>(cosine_sim(embeddings.outer(a), embeddings.outer(b)));
      if (video_index[a] == video_index[b]) {
        intra += s;
        ++n_intra;
      } else {
        inter += s;
        ++n_inter;
      }
    }
  }
  return intra / static_cast<double>(n_intra) - inter / static_cast<double>(n_inter);
}

#define CLAB_INSTANTIATE_CONTRASTIVE(T)                                                                      \
  template struct CabParams<T>;                                                                             \
  template CabParams<T> init_cab_params<T>(const CabConfig&, Rng&);                                         \
  template CabTrace<T> cab_forward_trace<T>(const CabParams<T>&, const Tensor<T>&);                         \
  template Tensor<T> cab_backward<T>(const CabParams<T>&, const Tensor<T>&, const CabTrace<T>&,             \
                                     const Tensor<T>&, CabParams<T>&);                                      \
  template T cosine_sim<T>(std::span<const T>, std::span<const T>);                                         \
  template InfoNceResult<T> info_nce_loss_with_grad<T>(const Tensor<T>&, std::span<const int>, T);          \
  template T info_nce_loss<T>(const Tensor<T>&, std::span<const int>, T);                                   \
  template double alignment_gap<T>(const Tensor<T>&, std::span<const int>);

CLAB_INSTANTIATE_CONTRASTIVE(float)
CLAB_INSTANTIATE_CONTRASTIVE(double)

}  // namespace clab
