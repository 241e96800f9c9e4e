#include <algorithm>
#include <cmath>
#include <numeric>

#include "clab/contrastive.hpp"
#include "clab/verification.hpp"
#include "doctest.h"

using namespace clab;

namespace {

// Frozen from tests/oracles/derived_values.py.
constexpr double kCosineOneZeroOneOne = 0.70710678118654746;

std::vector<int> layout(std::size_t n, std::size_t t) {
  std::vector<int> idx;
  for (std::size_t v = 0; v < n; ++v) idx.insert(idx.end(), t, static_cast<int>(v));
  return idx;
}

Tensor<double> random_embeddings(std::size_t rows, std::size_t dim, Rng& rng) {
  Tensor<double> z({rows, dim});
  for (auto& v : z.values()) v = rng.normal();
  return z;
}

double sim(std::initializer_list<double> u, std::initializer_list<double> v) {
  const std::vector<double> a(u), b(v);
  return cosine_sim<double>(a, b);
}

}  // namespace

TEST_SUITE("contrastive") {
  TEST_CASE("cosine similarity examples") {
    CHECK(sim({0.3, -2.0, 1.0}, {0.3, -2.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(sim({1, 0}, {0, 1}) == 0.0);
    CHECK(std::abs(sim({1, 0}, {1, 1}) - kCosineOneZeroOneOne) < 1e-15);
    CHECK(sim({1, 2}, {3, -1}) == sim({3, -1}, {1, 2}));
    CHECK(sim({2, 4}, {3, -1}) == doctest::Approx(sim({1, 2}, {3, -1})).epsilon(1e-15));
    CHECK(sim({0, 0}, {1, 1}) == 0.0);  // epsilon keeps zero vectors finite
    CHECK_THROWS_AS(sim({1, 0}, {1, 0, 0}), std::invalid_argument);
  }

  TEST_CASE("default CAB emits 128-dimensional non-negative features") {
    CabConfig cfg;
    cfg.in_channels = 16;
    Rng rng(1);
    const auto params = init_cab_params<float>(cfg, rng);
    Tensor<float> fmap({2, 16, 4, 4});
    for (auto& v : fmap.values()) v = static_cast<float>(rng.uniform());
    const auto out = cab_forward(params, fmap);
    CHECK(out.shape() == Shape{2, 128});
    for (float v : out.values()) CHECK(v >= 0.0f);
  }

  TEST_CASE("CAB edge cases") {
    const CabConfig cfg{3, 8, 6, 4, 0.1};
    CabParams<double> zero(cfg);
    Rng rng(2);
    Tensor<double> fmap({2, 3, 5, 5});
    for (auto& v : fmap.values()) v = rng.normal();
    const auto zero_out = cab_forward(zero, fmap);
    for (double v : zero_out.values()) CHECK(v == 0.0);

    auto params = init_cab_params<double>(cfg, rng);
    Tensor<double> big({1, 3, 7, 7}), small({1, 3, 1, 1});
    const double channel_value[3] = {0.4, -1.2, 2.0};
    for (std::size_t c = 0; c < 3; ++c) {
      small[c] = channel_value[c];
      for (std::size_t i = 0; i < 49; ++i) big[c * 49 + i] = channel_value[c];
    }
    // Pooling a constant map returns the constant at any size.
    const auto pooled_big = global_avg_pool(big), pooled_small = global_avg_pool(small);
    for (std::size_t c = 0; c < 3; ++c) CHECK(pooled_big[c] == doctest::Approx(pooled_small[c]).epsilon(1e-14));
    // With zero padding only the centre tap sees the same input everywhere, so
    // the end-to-end size invariance holds for a centre-only kernel.
    for (std::size_t i = 0; i < params.conv.weight.size(); ++i) {
      if (i % 9 != 4) params.conv.weight[i] = 0.0;
    }
    const auto a = cab_forward(params, small);
    const auto b = cab_forward(params, big);
    REQUIRE(a.shape() == b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));
    CHECK_THROWS_AS(cab_forward(params, Tensor<double>({1, 4, 5, 5})), std::invalid_argument);
    CHECK_THROWS_AS(CabConfig({3, 8, 6, 4, 0.0}).validate(), std::invalid_argument);
    CHECK_THROWS_AS(CabConfig({0, 8, 6, 4, 0.1}).validate(), std::invalid_argument);
  }

  TEST_CASE("identical embeddings give log(NT - 1)") {
    Tensor<double> z({4, 3}, 0.7);
    CHECK(info_nce_loss(z, layout(2, 2), 0.1) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(info_nce_oracle(z, layout(2, 2), 0.1) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    for (std::size_t n : {2, 3, 4}) {
      for (std::size_t t : {2, 3}) {
        Tensor<double> w({n * t, 5}, -0.3);
        CHECK(std::abs(info_nce_loss(w, layout(n, t), 0.5) - std::log(double(n * t - 1))) < 1e-9);
      }
    }
  }

  TEST_CASE("frozen two-video value") {
    Tensor<double> z({4, 2}, std::vector<double>{1, 0, 1, 0, 0, 1, 0, 1});
    CHECK(std::abs(info_nce_loss(z, layout(2, 2), 0.1) - kFrozenInfoNceTwoVideos) < 1e-15);
    CHECK(std::abs(info_nce_oracle(z, layout(2, 2), 0.1) - kFrozenInfoNceTwoVideos) < 1e-15);
    Tensor<float> zf({4, 2}, std::vector<float>{1, 0, 1, 0, 0, 1, 0, 1});
    CHECK(info_nce_loss(zf, layout(2, 2), 0.1f) == doctest::Approx(kFrozenInfoNceTwoVideos).epsilon(1e-3));
  }

  TEST_CASE("loss matches the oracle on random batches") {
    const CheckResult r = check_oracle_equivalence(99);
    INFO(r.detail);
    CHECK(r.passed);
  }

  TEST_CASE("perturbed loss is caught by the oracle check") {
    const CheckResult r = check_mutation_detected(99);
    INFO(r.detail);
    CHECK(r.passed);
  }

  TEST_CASE("permutation and scale invariance") {
    Rng rng(5);
    const auto idx = layout(3, 3);
    const auto z = random_embeddings(9, 8, rng);
    const double base = info_nce_loss(z, idx, 0.1);

    std::vector<std::size_t> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[1], perm[6]);
    Tensor<double> zp({9, 8});
    std::vector<int> idx_p(9);
    for (std::size_t i = 0; i < 9; ++i) {
      std::copy(z.outer(perm[i]).begin(), z.outer(perm[i]).end(), zp.outer(i).begin());
      idx_p[i] = idx[perm[i]];
    }
    CHECK(std::abs(info_nce_loss(zp, idx_p, 0.1) - base) < 1e-12);

    for (double alpha : {1e-3, 0.5, 7.0, 1e4}) {
      Tensor<double> zs = z;
      for (auto& v : zs.values()) v *= alpha;
      CHECK(std::abs(info_nce_loss(zs, idx, 0.1) - base) < 1e-9);
    }
  }

  TEST_CASE("separated clusters lower the loss") {
    Tensor<double> same({4, 2}, std::vector<double>{1, 0, 1, 0, 1, 0, 1, 0});
    Tensor<double> apart({4, 2}, std::vector<double>{1, 0, 1, 0, 0, 1, 0, 1});
    CHECK(info_nce_loss(apart, layout(2, 2), 0.1) < info_nce_loss(same, layout(2, 2), 0.1));
  }

  TEST_CASE("loss is finite and positive across the temperature grid") {
    Rng rng(6);
    const auto z = random_embeddings(6, 16, rng);
    for (double tau : {0.05, 0.1, 0.5, 1.0}) {
      const double l = info_nce_loss(z, layout(3, 2), tau);
      CHECK(std::isfinite(l));
      CHECK(l > 0);
    }
  }

  TEST_CASE("layout errors") {
    Tensor<double> z({4, 2}, 1.0);
    CHECK_THROWS_AS(info_nce_loss(z, std::vector<int>{0, 0, 0, 1}, 0.1), std::invalid_argument);  // single-frame video
    CHECK_THROWS_AS(info_nce_oracle(z, std::vector<int>{0, 0, 0, 1}, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(info_nce_loss(z, std::vector<int>{0, 0, 0, 0}, 0.1), std::invalid_argument);  // single video
    CHECK_THROWS_AS(info_nce_loss(z, std::vector<int>{0, 0, 1}, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(info_nce_loss(z, layout(2, 2), 0.0), std::invalid_argument);
  }

  TEST_CASE("alignment gap") {
    Tensor<double> same({4, 3}, 0.5);
    CHECK(alignment_gap(same, layout(2, 2)) == doctest::Approx(0.0).epsilon(1e-15));
    Tensor<double> ortho({6, 3}, std::vector<double>{1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1});
    CHECK(alignment_gap(ortho, layout(3, 2)) == doctest::Approx(1.0).epsilon(1e-15));

    Rng rng(7);
    const auto idx = layout(3, 3);
    const auto z = random_embeddings(9, 4, rng);
    double intra = 0, inter = 0;
    int n_intra = 0, n_inter = 0;
    for (std::size_t i = 0; i < 9; ++i) {
      for (std::size_t j = i + 1; j < 9; ++j) {
        double dot = 0, ni = 0, nj = 0;
        for (std::size_t d = 0; d < 4; ++d) {
          dot += z[i * 4 + d] * z[j * 4 + d];
          ni += z[i * 4 + d] * z[i * 4 + d];
          nj += z[j * 4 + d] * z[j * 4 + d];
        }
        const double c = dot / std::sqrt(ni * nj);
        if (idx[i] == idx[j]) intra += c, ++n_intra;
        else inter += c, ++n_inter;
      }
    }
    CHECK(alignment_gap(z, idx) == doctest::Approx(intra / n_intra - inter / n_inter).epsilon(1e-12));
  }

  TEST_CASE("gradients match central differences") {
    for (const CheckResult& r : {check_info_nce_gradient(3), check_cab_gradient(4)}) {
      INFO(r.name << ": " << r.detail);
      CHECK(r.passed);
    }
  }

  TEST_CASE("float and double paths agree") {
    Rng rng(8);
    const auto z = random_embeddings(6, 8, rng);
    const double d = info_nce_loss(z, layout(2, 3), 0.1);
    const float f = info_nce_loss(z.cast<float>(), layout(2, 3), 0.1f);
    CHECK(f == doctest::Approx(d).epsilon(1e-5));
  }
}
