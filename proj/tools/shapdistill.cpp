// Command line front end for the staged distillation pipeline.
//
//   shapdistill <train|rollout|explain|distill|evaluate|pipeline> --config <path> [--out <dir>] [--seed <int>]
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration, 3 stage
// ordering, 4 numeric, 5 bridge, 6 I/O, 7 contract violation.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "shapdistill/errors.hpp"
#include "shapdistill/pipeline.hpp"

namespace {

enum ExitCode {
  kOk = 0,
  kGeneric = 1,
  kConfig = 2,
  kStageOrder = 3,
  kNumeric = 4,
  kBridge = 5,
  kIo = 6,
  kContract = 7,
};

int report(const char* label, const std::exception& e, int code) {
  std::cerr << "shapdistill: " << label << ": " << e.what() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace shapdistill;

  CLI::App app{"Distill black-box control policies into linear decision rules via Shapley vectors"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;

  for (Stage stage : {Stage::kTrain, Stage::kRollout, Stage::kExplain, Stage::kDistill, Stage::kEvaluate,
                      Stage::kPipeline}) {
    static const char* help[] = {
        "train the built-in DQN (no-op for external policies)",
        "collect on-policy states into the dataset",
        "compute Shapley vectors for dataset states",
        "cluster Shapley vectors and fit decision boundaries",
        "evaluate original and distilled policies on paired seeds",
        "run every stage in order",
    };
    CLI::App* sub = app.add_subcommand(to_string(stage), help[static_cast<int>(stage)]);
    sub->add_option("--config", config_path, "pipeline YAML config")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, fmt::format("output directory (overrides {} and the config)", kOutputDirEnvVar));
    sub->add_option("--seed", seed, "master seed override");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    const Stage stage = stage_from_string(app.get_subcommands().front()->get_name());
    PipelineConfig config = load_pipeline_config(config_path);
    if (seed) {
      config.seed = *seed;
      config.dqn.seed = *seed;
    }
    config.output_dir = resolve_output_dir(config, out_dir.empty() ? std::nullopt
                                                                   : std::optional<std::filesystem::path>(out_dir));

    std::cerr << fmt::format("shapdistill {} env={} seed={} config_hash={} out={}\n", to_string(stage), config.env,
                             config.seed, config_hash(config), config.output_dir.string());
    for (const StageOutcome& outcome : run_stage(stage, config)) {
      std::cout << fmt::format("[{}] {}\n", to_string(outcome.stage), outcome.summary.dump());
      for (const auto& path : outcome.written) std::cout << "  wrote " << path.string() << "\n";
    }
    return kOk;
  } catch (const ConfigError& e) {
    return report("config error", e, kConfig);
  } catch (const StageOrderError& e) {
    return report("stage order error", e, kStageOrder);
  } catch (const NumericError& e) {
    return report("numeric error", e, kNumeric);
  } catch (const BridgeError& e) {
    return report("bridge error", e, kBridge);
  } catch (const IoError& e) {
    return report("io error", e, kIo);
  } catch (const ContractError& e) {
    return report("contract error", e, kContract);
  } catch (const std::exception& e) {
    return report("error", e, kGeneric);
  }
}
