#include <cmath>
#include <limits>

#include "clab/dlw.hpp"
#include "clab/verification.hpp"
#include "doctest.h"

using namespace clab;

TEST_SUITE("dlw") {
  const DlwConfig reference{0.005, 25000};

  TEST_CASE("schedule endpoints and midpoint") {
    CHECK(weight_at(0, reference) == 0.005);
    CHECK(weight_at(25000, reference) == 0.0);
    CHECK(weight_at(30000, reference) == 0.0);
    CHECK(weight_at(12500, reference) == 0.0025);
  }

  TEST_CASE("schedule is linear and nonincreasing") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
      const auto a = static_cast<std::int64_t>(2 * rng.uniform_index(12501));
      const auto b = static_cast<std::int64_t>(2 * rng.uniform_index(12501));
      CHECK(std::abs(weight_at((a + b) / 2, reference) - (weight_at(a, reference) + weight_at(b, reference)) / 2) < 1e-12);
    }
    double prev = weight_at(0, reference);
    for (std::int64_t t = 1; t <= 26000; t += 7) {
      const double w = weight_at(t, reference);
      CHECK(w <= prev);
      if (t < 25000) CHECK(w < prev);
      prev = w;
    }
  }

  TEST_CASE("verification check agrees") {
    const CheckResult r = check_dlw_exactness(5);
    INFO(r.detail);
    CHECK(r.passed);
  }

  TEST_CASE("constant-weight mode") {
    const DlwConfig constant{0.005, std::nullopt};
    for (std::int64_t t : {0, 1, 25000, 10000000}) CHECK(weight_at(t, constant) == 0.005);
  }

  TEST_CASE("total loss assembly") {
    const auto l = total_loss(1.0, 2.0, 3.0, 0, reference);
    CHECK(l.total == 3.015);
    CHECK(l.auxiliary_weight == 0.005);
    CHECK(l.regression_loss == 1.0);
    CHECK(l.classification_loss == 2.0);
    CHECK(l.auxiliary_loss == 3.0);

    const auto late = total_loss(0.7, 0.4, 123.0, 25000, reference);
    CHECK(late.total == 0.7 + 0.4);
    const DlwConfig off{0.0, 100};
    for (std::int64_t t : {0, 50, 100}) CHECK(total_loss(0.7, 0.4, 9.0, t, off).total == 0.7 + 0.4);
  }

  TEST_CASE("total equals the sum of its parts in the same precision") {
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
      const double r = rng.uniform(0, 3), c = rng.uniform(0, 3), a = rng.uniform(0, 5);
      const auto t = static_cast<std::int64_t>(rng.uniform_index(30000));
      const auto l = total_loss(r, c, a, t, reference);
      CHECK(l.total == r + c + l.auxiliary_weight * a);
      CHECK(l.auxiliary_weight == weight_at(t, reference));
    }
  }

  TEST_CASE("errors") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double inf = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(total_loss(nan, 1, 1, 0, reference), std::domain_error);
    CHECK_THROWS_AS(total_loss(1, inf, 1, 0, reference), std::domain_error);
    CHECK_THROWS_AS(total_loss(1, 1, nan, 0, reference), std::domain_error);
    CHECK_THROWS_AS(weight_at(-1, reference), std::invalid_argument);
    CHECK_THROWS_AS(DlwConfig({-0.1, 10}).validate(), std::invalid_argument);
    CHECK_THROWS_AS(DlwConfig({0.1, 0}).validate(), std::invalid_argument);
  }
}
