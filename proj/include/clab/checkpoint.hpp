#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "clab/contrastive.hpp"
#include "clab/detector.hpp"

namespace clab {

// Binary checkpoint, little-endian:
//   "CLABCKPT" | u32 version | u64 config_hash | i64 step | u32 len + JSON metadata
//   | u32 section count | sections
// section: u32 len + name | u32 tensor count | tensors
// tensor:  u32 len + name | u32 rank | u64 dims[rank] | f32 data[]
// Sections: "detector", "detector.momentum", and optionally "cab", "cab.momentum".
struct Checkpoint {
  std::int64_t step = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  DetectorConfig detector_config;
  DetectorParams<float> detector;
  DetectorParams<float> detector_momentum;
  std::optional<CabConfig> cab_config;
  std::optional<CabParams<float>> cab;
  std::optional<CabParams<float>> cab_momentum;

  bool has_auxiliary_branch() const { return cab.has_value(); }
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copy without the auxiliary-branch sections.
Checkpoint strip_auxiliary_branch(Checkpoint ckpt);

// Serialized detector parameters, detector optimizer state and step counter.
std::string detector_state_bytes(const Checkpoint& ckpt);

}  // namespace clab
