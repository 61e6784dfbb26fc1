#pragma once

#include <string>

#include <json.hpp>

#include "scalelab/harness.hpp"

namespace scalelab {

/// Applies a named size profile ("desk" or "paper") to a run and its dataset.
void apply_profile(const std::string& profile, TrainConfig& config, GeneratorOptions& data);

nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const GeneratorOptions& options);
nlohmann::json to_json(const ExperimentPlan& plan);

/// Keys present in `j` override the corresponding fields of `config`;
/// unknown keys are an error.
void merge_json(const nlohmann::json& j, TrainConfig& config);
void merge_json(const nlohmann::json& j, GeneratorOptions& options);
void merge_json(const nlohmann::json& j, ExperimentPlan& plan);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const nlohmann::json& j, const std::string& path);

}  // namespace scalelab
