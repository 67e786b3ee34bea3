#pragma once

#include <filesystem>
#include <memory>

#include <nlohmann/json.hpp>

#include "shapdistill/policy.hpp"

namespace shapdistill {

// Policy file schema (JSON):
//   {"kind": "deterministic" | "stochastic",
//    "model": "q_network" | "softmax" | "interpretable",
//    "action_count": k, "feature_names": [...],
//    -- MLP models --
//    "layer_sizes": [...], "input_scale": [...],
//    "weights": [[row-major out x in], ...], "biases": [[...], ...],
//    -- interpretable --
//    "hyperplanes": [{"i", "j", "w", "b", "formula"}, ...]}
nlohmann::ordered_json policy_to_json(const Policy& policy);
std::unique_ptr<Policy> policy_from_json(const nlohmann::json& doc);

void save_policy(const Policy& policy, const std::filesystem::path& path);
std::unique_ptr<Policy> load_policy(const std::filesystem::path& path);

nlohmann::ordered_json hyperplane_to_json(const Hyperplane& h, const std::vector<std::string>& feature_names);
Hyperplane hyperplane_from_json(const nlohmann::json& doc);

// Shared helpers for artifact files.
nlohmann::json read_json_file(const std::filesystem::path& path);
// Same, keeping the key order from the file.
nlohmann::ordered_json read_ordered_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace shapdistill
