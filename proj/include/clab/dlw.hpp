#pragma once

#include <cstdint>
#include <optional>

namespace clab {

// Linear decay of the auxiliary loss weight: w(t) = w * max(0, 1 - t / k).
// An unset cutoff disables decay (constant weight w).
struct DlwConfig {
  double initial_weight = 0.005;
  std::optional<std::int64_t> cutoff_step = 25000;

  void validate() const;
  bool operator==(const DlwConfig&) const = default;
};

double weight_at(std::int64_t step, const DlwConfig& cfg);

struct LossBreakdown {
  double regression_loss = 0;
  double classification_loss = 0;
  double auxiliary_loss = 0;
  double auxiliary_weight = 0;
  double total = 0;
};

// total = regr + cls + w(t) * aux. Throws std::domain_error on a non-finite component.
LossBreakdown total_loss(double regression, double classification, double auxiliary, std::int64_t step,
                         const DlwConfig& cfg);

}  // namespace clab
