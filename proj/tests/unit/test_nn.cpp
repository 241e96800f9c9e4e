#include <cmath>
#include <cstdint>

#include "clab/nn.hpp"
#include "doctest.h"

using namespace clab;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

// Direct seven-loop convolution.
Tensor<double> naive_conv(const Conv2d<double>& c, const Tensor<double>& x) {
  const auto& g = c.geometry;
  const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = g.output_extent(h), ow = g.output_extent(w);
  Tensor<double> y({b, g.out_channels, oh, ow});
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = c.bias[o];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ki = 0; ki < g.kernel; ++ki)
              for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const auto yi = static_cast<std::ptrdiff_t>(i * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
                const auto xj = static_cast<std::ptrdiff_t>(j * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
                if (yi < 0 || xj < 0 || yi >= static_cast<std::ptrdiff_t>(h) || xj >= static_cast<std::ptrdiff_t>(w)) continue;
                acc += c.weight[((o * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj] *
                       x[((n * g.in_channels + ci) * h + yi) * w + xj];
              }
          y[((n * g.out_channels + o) * oh + i) * ow + j] = acc;
        }
  return y;
}

double weighted_sum(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("convolution matches a direct loop for stride 1 and 2") {
    Rng rng(3);
    for (std::size_t stride : {1, 2}) {
      Conv2d<double> c({3, 5, 3, stride, 1});
      init_params(c, rng);
      for (auto& v : c.bias.values()) v = rng.normal();
      const auto x = random_tensor({2, 3, 7, 6}, rng);
      const auto fast = conv2d_forward(c, x);
      const auto slow = naive_conv(c, x);
      REQUIRE(fast.shape() == slow.shape());
      for (std::size_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("convolution gradients match central differences") {
    Rng rng(4);
    Conv2d<double> c({2, 3, 3, 2, 1});
    init_params(c, rng);
    auto x = random_tensor({2, 2, 5, 5}, rng);
    const auto r = random_tensor(conv2d_forward(c, x).shape(), rng);
    Conv2d<double> grads = zeros_like(c);
    Tensor<double> grad_x;
    conv2d_backward(c, x, r, grads, &grad_x);
    auto loss = [&] { return weighted_sum(conv2d_forward(c, x), r); };
    const double h = 1e-5;
    auto check = [&](Tensor<double>& p, const Tensor<double>& g) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + h;
        const double up = loss();
        p[i] = keep - h;
        const double down = loss();
        p[i] = keep;
        CHECK(g[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-7));
      }
    };
    check(c.weight, grads.weight);
    check(c.bias, grads.bias);
    check(x, grad_x);
  }

  TEST_CASE("backward accumulates into existing gradients") {
    Rng rng(5);
    Conv2d<double> c({1, 2, 3, 1, 1});
    init_params(c, rng);
    const auto x = random_tensor({1, 1, 4, 4}, rng);
    const auto r = random_tensor({1, 2, 4, 4}, rng);
    Conv2d<double> once = zeros_like(c), twice = zeros_like(c);
    conv2d_backward<double>(c, x, r, once, nullptr);
    conv2d_backward<double>(c, x, r, twice, nullptr);
    conv2d_backward<double>(c, x, r, twice, nullptr);
    for (std::size_t i = 0; i < once.weight.size(); ++i) CHECK(twice.weight[i] == doctest::Approx(2 * once.weight[i]));
  }

  TEST_CASE("linear layer forward and gradients") {
    Rng rng(6);
    Linear<double> fc(4, 3);
    init_params(fc, rng);
    auto x = random_tensor({2, 4}, rng);
    const auto y = linear_forward(fc, x);
    REQUIRE(y.shape() == Shape{2, 3});
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < 3; ++o) {
        double acc = fc.bias[o];
        for (std::size_t i = 0; i < 4; ++i) acc += fc.weight[o * 4 + i] * x[n * 4 + i];
        CHECK(y[n * 3 + o] == doctest::Approx(acc).epsilon(1e-14));
      }
    const auto r = random_tensor({2, 3}, rng);
    Linear<double> grads = zeros_like(fc);
    Tensor<double> grad_x;
    linear_backward(fc, x, r, grads, &grad_x);
    const double h = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double keep = x[i];
      x[i] = keep + h;
      const double up = weighted_sum(linear_forward(fc, x), r);
      x[i] = keep - h;
      const double down = weighted_sum(linear_forward(fc, x), r);
      x[i] = keep;
      CHECK(grad_x[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-7));
    }
  }

  TEST_CASE("global average pooling and its gradient") {
    Tensor<double> x({1, 2, 2, 2}, std::vector<double>{1, 2, 3, 4, 10, 10, 10, 10});
    const auto y = global_avg_pool(x);
    CHECK(y.shape() == Shape{1, 2});
    CHECK(y[0] == 2.5);
    CHECK(y[1] == 10.0);
    const auto g = global_avg_pool_backward(x.shape(), Tensor<double>({1, 2}, std::vector<double>{4, 8}));
    CHECK(g[0] == 1.0);
    CHECK(g[7] == 2.0);
  }

  TEST_CASE("relu and its mask") {
    Tensor<double> x({4}, std::vector<double>{-1, 0, 2, -0.5});
    relu_inplace(x);
    CHECK(x == Tensor<double>({4}, std::vector<double>{0, 0, 2, 0}));
    Tensor<double> g({4}, std::vector<double>{1, 1, 1, 1});
    relu_backward_inplace(x, g);
    CHECK(g == Tensor<double>({4}, std::vector<double>{0, 0, 1, 0}));
  }

  TEST_CASE("tensor storage is aligned and shape-checked") {
    for (std::size_t n : {1, 3, 17, 1000}) {
      Tensor<float> t({n});
      CHECK(reinterpret_cast<std::uintptr_t>(t.data()) % kTensorAlignment == 0);
    }
    CHECK_THROWS_AS(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
    Tensor<double> a({2}), b({3});
    CHECK_THROWS_AS(accumulate(a, b), std::invalid_argument);
  }

  TEST_CASE("fan-in initialization is bounded and seeded") {
    Rng a(9), b(9);
    Conv2d<float> c1({8, 16}), c2({8, 16});
    init_params(c1, a);
    init_params(c2, b);
    CHECK(c1.weight == c2.weight);
    const float bound = std::sqrt(6.0f / (8 * 9));
    for (float v : c1.weight.values()) CHECK(std::abs(v) <= bound);
    for (float v : c1.bias.values()) CHECK(v == 0.0f);
  }
}
