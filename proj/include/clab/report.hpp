#pragma once

#include <cstdint>
#include <string>

#include "clab/evaluation.hpp"
#include "clab/synthetic.hpp"
#include "json.hpp"

namespace clab {

nlohmann::json eval_to_json(const EvalResult& eval);
std::string eval_report_text(const EvalResult& eval);

// Counts of videos, frames and objects per class.
std::string dataset_inventory(const Dataset& dataset, const std::string& name);

// FNV-1a over pixels and annotations in a fixed order.
std::uint64_t content_hash(const Dataset& dataset);

std::string hex64(std::uint64_t v);

}  // namespace clab
