#include "shapdistill/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "shapdistill/errors.hpp"
#include "shapdistill/policy_io.hpp"
#include "shapdistill/shapley.hpp"

namespace shapdistill {

int EvalStats::termination_count() const { return std::accumulate(terminated.begin(), terminated.end(), 0); }

namespace {

void fill_summary(EvalStats& stats) {
  stats.episodes = static_cast<int>(stats.returns.size());
  const double n = static_cast<double>(stats.returns.size());
  stats.mean = std::accumulate(stats.returns.begin(), stats.returns.end(), 0.0) / n;
  double var = 0.0;
  for (double r : stats.returns) var += (r - stats.mean) * (r - stats.mean);
  stats.std = std::sqrt(var / n);
  stats.min = *std::min_element(stats.returns.begin(), stats.returns.end());
  stats.max = *std::max_element(stats.returns.begin(), stats.returns.end());
}

}  // namespace

EvalStats evaluate(const EnvSpec& env, const Policy& policy, int episodes, std::uint64_t seed_base,
                   std::string policy_id) {
  if (episodes < 1) throw ContractError("evaluate: episodes must be at least 1");
  EvalStats stats;
  stats.policy_id = std::move(policy_id);
  stats.seed_base = seed_base;
  for (int e = 0; e < episodes; ++e) {
    const Trajectory traj = rollout(env, policy, seed_base + static_cast<std::uint64_t>(e));
    stats.returns.push_back(traj.total_return);
    stats.terminated.push_back(!traj.transitions.empty() && traj.transitions.back().terminated ? 1 : 0);
  }
  fill_summary(stats);
  return stats;
}

FidelityReport fidelity(const Policy& original, const Policy& distilled, const std::vector<State>& states) {
  if (states.empty()) throw ContractError("fidelity: no states");
  if (original.action_count() != distilled.action_count()) throw ContractError("fidelity: action counts differ");
  if (original.feature_count() != distilled.feature_count()) throw ContractError("fidelity: feature counts differ");
  FidelityReport out;
  out.n_states = states.size();
  for (const State& s : states) {
    if (original.act(s) == distilled.act(s)) ++out.agreements;
  }
  out.rate = static_cast<double>(out.agreements) / static_cast<double>(out.n_states);
  return out;
}

nlohmann::ordered_json report_to_json(const EvaluationReport& report) {
  nlohmann::ordered_json doc;
  doc["provenance"] = report.provenance;
  nlohmann::ordered_json policies = nlohmann::ordered_json::array();
  for (const EvalStats& s : report.stats) {
    nlohmann::ordered_json entry;
    entry["policy_id"] = s.policy_id;
    entry["episodes"] = s.episodes;
    entry["seed_base"] = s.seed_base;
    entry["mean"] = s.mean;
    entry["std"] = s.std;
    entry["min"] = s.min;
    entry["max"] = s.max;
    entry["terminations"] = s.termination_count();
    entry["returns"] = s.returns;
    entry["terminated"] = s.terminated;
    policies.push_back(std::move(entry));
  }
  doc["policies"] = std::move(policies);
  if (report.fidelity) {
    doc["fidelity"] = {{"n_states", report.fidelity->n_states},
                       {"agreements", report.fidelity->agreements},
                       {"rate", report.fidelity->rate}};
  } else {
    doc["fidelity"] = nullptr;
  }
  doc["hyperplanes"] = report.hyperplanes;
  return doc;
}

void export_report(const EvaluationReport& report, const std::filesystem::path& path, ReportFormat format) {
  if (format == ReportFormat::kJson) {
    write_text_file(path, report_to_json(report).dump(2) + "\n");
    return;
  }
  std::string csv = "policy_id,episode,return\n";
  for (const EvalStats& s : report.stats) {
    for (std::size_t e = 0; e < s.returns.size(); ++e) {
      csv += fmt::format("{},{},{}\n", s.policy_id, e, format_real(s.returns[e]));
    }
  }
  write_text_file(path, csv);
}

EvaluationReport import_report(const std::filesystem::path& json_path) {
  const nlohmann::json doc = read_json_file(json_path);
  try {
    EvaluationReport report;
    report.provenance = nlohmann::ordered_json::parse(doc.at("provenance").dump());
    for (const auto& entry : doc.at("policies")) {
      EvalStats s;
      s.policy_id = entry.at("policy_id").get<std::string>();
      s.seed_base = entry.at("seed_base").get<std::uint64_t>();
      s.returns = entry.at("returns").get<std::vector<double>>();
      s.terminated = entry.at("terminated").get<std::vector<int>>();
      s.episodes = entry.at("episodes").get<int>();
      s.mean = entry.at("mean").get<double>();
      s.std = entry.at("std").get<double>();
      s.min = entry.at("min").get<double>();
      s.max = entry.at("max").get<double>();
      report.stats.push_back(std::move(s));
    }
    if (!doc.at("fidelity").is_null()) {
      const auto& f = doc.at("fidelity");
      report.fidelity = FidelityReport{f.at("n_states").get<std::size_t>(), f.at("agreements").get<std::size_t>(),
                                       f.at("rate").get<double>()};
    }
    report.hyperplanes = nlohmann::ordered_json::parse(doc.at("hyperplanes").dump());
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(json_path.string() + ": " + e.what());
  }
}

}  // namespace shapdistill
