#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "clab/contrastive.hpp"

namespace clab {

double info_nce_oracle(const Tensor<double>& embeddings, std::span<const int> video_index, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("info_nce_oracle: temperature must be > 0");
  const std::size_t frames = video_index.size();
  if (embeddings.rank() != 2 || embeddings.dim(0) != frames) {
    throw std::invalid_argument("info_nce_oracle: embedding count does not match video_index");
  }
  const std::size_t dim = embeddings.dim(1);

  std::vector<int> seen;
  for (std::size_t i = 0; i < frames; ++i) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < frames; ++j) count += video_index[j] == video_index[i] ? 1 : 0;
    if (count < 2) {
      throw std::invalid_argument("info_nce_oracle: video " + std::to_string(video_index[i]) +
                                  " has a single frame");
    }
    bool known = false;
    for (int v : seen) known = known || v == video_index[i];
    if (!known) seen.push_back(video_index[i]);
  }
  if (seen.size() < 2) throw std::invalid_argument("info_nce_oracle: need at least 2 videos");

  auto sim = [&](std::size_t a, std::size_t b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double x = embeddings[a * dim + k];
      const double y = embeddings[b * dim + k];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    double denom = std::sqrt(na) * std::sqrt(nb);
    if (denom < 1e-12) denom = 1e-12;
    return dot / denom;
  };

  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t anchor = 0; anchor < frames; ++anchor) {
    for (std::size_t positive = 0; positive < frames; ++positive) {
      if (positive == anchor || video_index[positive] != video_index[anchor]) continue;
      double denominator = 0.0;
      for (std::size_t k = 0; k < frames; ++k) {
        if (k != anchor) denominator += std::exp(sim(anchor, k) / temperature);
      }
      const double numerator = std::exp(sim(anchor, positive) / temperature);
      total += -std::log(numerator / denominator);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

}  // namespace clab
