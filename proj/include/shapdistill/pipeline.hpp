#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapdistill/dqn.hpp"
#include "shapdistill/shapley.hpp"

namespace shapdistill {

enum class PolicySource { kBuiltinDqn, kFile, kBridge };

const char* to_string(PolicySource source);

struct BridgeSettings {
  std::vector<std::string> command;
  int timeout_ms = 10000;
};

struct ExplainStageSettings {
  int n_traj = 100;
  int states = 0;  // 0 explains every dataset state; otherwise an evenly strided subset
  ShapleyMode mode = ShapleyMode::kExact;
  int knn_k = 20;
  int permutations = 1000;
  int threads = 0;
};

struct DistillStageSettings {
  int boundary_points = 0;
  int max_iters = 300;
  double tol = 1e-10;
};

struct EvaluateStageSettings {
  int episodes = 10;
  std::uint64_t seed_base = 10000;
};

// Every stage seed derives from `seed`: the DQN trainer, the rollout seeds
// (seed, seed + 1, ...), the sampled-Shapley streams and the k-means seeding.
struct PipelineConfig {
  std::string env = "CartPole";
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";

  PolicySource policy_source = PolicySource::kBuiltinDqn;
  std::filesystem::path policy_file;
  BridgeSettings bridge;
  DqnConfig dqn;

  ExplainStageSettings explain;
  DistillStageSettings distill;
  EvaluateStageSettings evaluate;

  void validate() const;
};

// Parses the YAML config. Relative policy file paths and bridge commands are
// resolved against the config file's directory. Unknown keys are rejected.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
PipelineConfig parse_pipeline_config(const std::string& yaml_text,
                                     const std::filesystem::path& base_dir = std::filesystem::path("."));

// Resolved config as JSON (output_dir excluded) and its FNV-1a 64-bit hash.
nlohmann::ordered_json config_to_json(const PipelineConfig& config);
std::string config_hash(const PipelineConfig& config);

// Fixed artifact names inside the output directory.
namespace artifacts {
inline constexpr const char* kPolicy = "policy.json";
inline constexpr const char* kTrainingLog = "training_log.csv";
inline constexpr const char* kTrainSummary = "train.json";
inline constexpr const char* kDatasetCsv = "dataset.csv";
inline constexpr const char* kDatasetMeta = "dataset.json";
inline constexpr const char* kTrajectories = "trajectories.jsonl";
inline constexpr const char* kRecordsCsv = "records.csv";
inline constexpr const char* kRecordsMeta = "records.json";
inline constexpr const char* kDistillReport = "distill-report.json";
inline constexpr const char* kInterpretablePolicy = "interpretable-policy.json";
inline constexpr const char* kEvalJson = "eval.json";
inline constexpr const char* kEvalCsv = "eval.csv";
}  // namespace artifacts

enum class Stage { kTrain, kRollout, kExplain, kDistill, kEvaluate, kPipeline };

const char* to_string(Stage stage);
Stage stage_from_string(const std::string& name);

struct StageOutcome {
  Stage stage;
  std::vector<std::filesystem::path> written;
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();
};

// Runs one stage, or all of them in order for Stage::kPipeline. Each stage
// reads its inputs from the output directory and throws StageOrderError when
// an upstream artifact is missing.
std::vector<StageOutcome> run_stage(Stage stage, const PipelineConfig& config);

StageOutcome run_train(const PipelineConfig& config);
StageOutcome run_rollout(const PipelineConfig& config);
StageOutcome run_explain(const PipelineConfig& config);
StageOutcome run_distill(const PipelineConfig& config);
StageOutcome run_evaluate(const PipelineConfig& config);

// Output directory precedence: explicit override, then SHAPDISTILL_OUT, then
// the config value.
std::filesystem::path resolve_output_dir(const PipelineConfig& config,
                                         const std::optional<std::filesystem::path>& override_dir);

inline constexpr const char* kOutputDirEnvVar = "SHAPDISTILL_OUT";

}  // namespace shapdistill
