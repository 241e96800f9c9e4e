#include "clab/dlw.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace clab {

void DlwConfig::validate() const {
  if (!(initial_weight >= 0.0) || !std::isfinite(initial_weight)) {
    throw std::invalid_argument("dlw: initial weight must be finite and >= 0");
  }
  if (cutoff_step && *cutoff_step < 1) {
    throw std::invalid_argument("dlw: cutoff step must be >= 1, got " + std::to_string(*cutoff_step));
  }
}

double weight_at(std::int64_t step, const DlwConfig& cfg) {
  if (step < 0) throw std::invalid_argument("weight_at: step must be >= 0");
  if (!cfg.cutoff_step) return cfg.initial_weight;
  const double fraction = static_cast<double>(step) / static_cast<double>(*cfg.cutoff_step);
  return cfg.initial_weight * std::max(0.0, 1.0 - fraction);
}

LossBreakdown total_loss(double regression, double classification, double auxiliary, std::int64_t step,
                         const DlwConfig& cfg) {
  if (!std::isfinite(regression) || !std::isfinite(classification) || !std::isfinite(auxiliary)) {
    throw std::domain_error("total_loss: non-finite component loss at step " + std::to_string(step));
  }
  LossBreakdown out;
  out.regression_loss = regression;
  out.classification_loss = classification;
  out.auxiliary_loss = auxiliary;
  out.auxiliary_weight = weight_at(step, cfg);
  out.total = regression + classification + out.auxiliary_weight * auxiliary;
  return out;
}

}  // namespace clab
