#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clab/synthetic.hpp"
#include "clab/training.hpp"
#include "json.hpp"

namespace clab {

// Everything a command needs. All fields are optional in the file; unknown keys
// are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::string train_dir = "data/train";
  std::string val_dir = "data/val";
  GenerationConfig generation;
  TrainConfig train;
  std::vector<double> temperature_grid{0.05, 0.1, 0.5, 1.0};
  std::vector<double> weight_grid{0.001, 0.005, 0.01, 0.05};

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
// Fully populated, stable serialization.
std::string normalized_config(const RunConfig& cfg);

nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const DetectorConfig& cfg);
nlohmann::json to_json(const CabConfig& cfg);
DetectorConfig detector_config_from_json(const nlohmann::json& j);
CabConfig cab_config_from_json(const nlohmann::json& j);

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace clab
