#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapdistill/env.hpp"
#include "shapdistill/policy.hpp"

namespace shapdistill {

struct EvalStats {
  std::string policy_id;
  int episodes = 0;
  std::vector<double> returns;
  std::vector<int> terminated;  // 1 if the episode ended by termination, 0 if truncated
  double mean = 0.0;
  double std = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
  std::uint64_t seed_base = 0;

  int termination_count() const;
};

// Episode e is seeded with seed_base + e.
EvalStats evaluate(const EnvSpec& env, const Policy& policy, int episodes, std::uint64_t seed_base,
                   std::string policy_id = "policy");

struct FidelityReport {
  std::size_t n_states = 0;
  std::size_t agreements = 0;
  double rate = 0.0;
};

FidelityReport fidelity(const Policy& original, const Policy& distilled, const std::vector<State>& states);

struct EvaluationReport {
  std::vector<EvalStats> stats;
  std::optional<FidelityReport> fidelity;
  nlohmann::ordered_json hyperplanes = nlohmann::ordered_json::array();  // formulas from the distill report
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();
};

enum class ReportFormat { kJson, kCsv };

// JSON: summary with stats, fidelity and boundary formulas.
// CSV: policy_id,episode,return with one row per episode per policy.
void export_report(const EvaluationReport& report, const std::filesystem::path& path, ReportFormat format);
nlohmann::ordered_json report_to_json(const EvaluationReport& report);
EvaluationReport import_report(const std::filesystem::path& json_path);

}  // namespace shapdistill
