#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fedplatoon/orchestrator.hpp"

namespace fedplatoon {

// YAML experiment files. Unknown keys are rejected and errors carry the 1-based line.
//
// A file may start from a named preset (`preset: intra-weights`) and override any field.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Fully resolved document; parse_config(dump_config(c)) reproduces c exactly.
std::string dump_config(const ExperimentConfig& config);

std::vector<std::string> preset_names();
ExperimentConfig preset(std::string_view name);  // ConfigError for unknown names

std::string to_string(TopologyKind kind);
std::string to_string(AggregationKind kind);
std::string to_string(IntraGroup group);

}  // namespace fedplatoon
