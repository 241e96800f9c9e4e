#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "clab/tensor.hpp"
#include "clab/training.hpp"

namespace clab {

// Pinned tolerances for the verification suite.
inline constexpr double kOracleTolerance = 1e-6;           // relative, double precision
inline constexpr double kGradientTolerance = 1e-5;         // max relative error
inline constexpr double kFiniteDifferenceStep = 1e-5;      // central differences
inline constexpr double kGradientAbsTolerance = 1e-8;      // entries this close count as matching
inline constexpr double kClosedFormTolerance = 1e-9;
inline constexpr double kLinearityTolerance = 1e-12;
inline constexpr double kApTolerance = 1e-9;

// Frozen reference values from tests/oracles/derived_values.py.
inline constexpr double kFrozenInfoNceTwoVideos = 9.0795737467280874e-05;
inline constexpr double kFrozenApTpFpTp = 0.83333333333333326;

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

using InfoNceFunction = std::function<double(const Tensor<double>&, std::span<const int>, double)>;

// Random batches over N in {2,3,4}, T in {2,3}, D in {4,8,16} and the temperature
// grid; `impl` defaults to the production loss.
CheckResult check_oracle_equivalence(std::uint64_t seed, std::size_t cases = 100, InfoNceFunction impl = {});
// Deliberately wrong loss (one negative dropped from every denominator), the
// negative control for the oracle check.
double info_nce_mutant(const Tensor<double>& embeddings, std::span<const int> video_index, double temperature);
CheckResult check_mutation_detected(std::uint64_t seed);

CheckResult check_closed_form();
CheckResult check_info_nce_gradient(std::uint64_t seed);
CheckResult check_cab_gradient(std::uint64_t seed);
CheckResult check_detection_gradient(std::uint64_t seed);
CheckResult check_dlw_exactness(std::uint64_t seed);
CheckResult check_evaluator(std::uint64_t seed);
CheckResult check_cab_removal(std::uint64_t seed);
CheckResult check_zero_weight(std::uint64_t seed);
CheckResult check_zero_temperature_rejected();

// A small dataset and schedule that trains in a few seconds.
struct TinySetup {
  Dataset train;
  Dataset val;
  TrainConfig config;
};
TinySetup tiny_setup(std::uint64_t seed);

std::vector<CheckResult> run_all_checks(std::uint64_t seed);
std::string format_report(std::span<const CheckResult> results);

}  // namespace clab
