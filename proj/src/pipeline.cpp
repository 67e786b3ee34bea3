#include "shapdistill/pipeline.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "shapdistill/bridge.hpp"
#include "shapdistill/distill.hpp"
#include "shapdistill/errors.hpp"
#include "shapdistill/eval.hpp"
#include "shapdistill/policy_io.hpp"

namespace shapdistill {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

const char* to_string(PolicySource source) {
  switch (source) {
    case PolicySource::kBuiltinDqn: return "builtin-dqn";
    case PolicySource::kFile: return "file";
    case PolicySource::kBridge: return "bridge";
  }
  return "?";
}

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::kTrain: return "train";
    case Stage::kRollout: return "rollout";
    case Stage::kExplain: return "explain";
    case Stage::kDistill: return "distill";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kPipeline: return "pipeline";
  }
  return "?";
}

Stage stage_from_string(const std::string& name) {
  for (Stage s : {Stage::kTrain, Stage::kRollout, Stage::kExplain, Stage::kDistill, Stage::kEvaluate,
                  Stage::kPipeline}) {
    if (name == to_string(s)) return s;
  }
  throw ConfigError("unknown stage '" + name + "'");
}

void PipelineConfig::validate() const {
  make_env(env);  // throws ConfigError on unknown names
  if (policy_source == PolicySource::kFile && policy_file.empty()) {
    throw ConfigError("policy.file is required when policy.source is 'file'");
  }
  if (policy_source == PolicySource::kBridge) {
    if (bridge.command.empty()) throw ConfigError("policy.bridge.command is required when policy.source is 'bridge'");
    if (bridge.timeout_ms <= 0) throw ConfigError("policy.bridge.timeout_ms must be positive");
  }
  if (policy_source == PolicySource::kBuiltinDqn) dqn.validate();
  if (explain.n_traj < 1) throw ConfigError("explain.n_traj must be at least 1");
  if (explain.states < 0) throw ConfigError("explain.states must be non-negative");
  if (explain.knn_k < 1) throw ConfigError("explain.knn_k must be at least 1");
  if (explain.permutations < 1) throw ConfigError("explain.permutations must be at least 1");
  if (explain.threads < 0) throw ConfigError("explain.threads must be non-negative");
  if (distill.boundary_points < 0) throw ConfigError("distill.boundary_points must be non-negative");
  if (distill.max_iters < 1) throw ConfigError("distill.max_iters must be at least 1");
  if (!(distill.tol >= 0.0)) throw ConfigError("distill.tol must be non-negative");
  if (evaluate.episodes < 1) throw ConfigError("evaluate.episodes must be at least 1");
}

// ---------------------------------------------------------------------------
// YAML parsing

namespace {

class Section {
 public:
  Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(where() + " must be a mapping");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!node_ || node_.IsNull() || !node_[key]) return;
    try {
      out = node_[key].template as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(fmt::format("{}.{}: invalid value", path_, key));
    }
  }

  Section child(const char* key) {
    seen_.insert(key);
    if (!node_ || node_.IsNull() || !node_[key]) return Section(YAML::Node(), path_ + "." + key);
    return Section(node_[key], path_.empty() ? key : path_ + "." + key);
  }

  void reject_unknown() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigError(fmt::format("unknown config key '{}'", path_.empty() ? key : path_ + "." + key));
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

fs::path resolve_against(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return (base / p).lexically_normal();
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& yaml_text, const fs::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  PipelineConfig cfg;
  Section top(root, "");
  top.read("env", cfg.env);
  top.read("seed", cfg.seed);
  std::string out = cfg.output_dir.string();
  top.read("output_dir", out);
  cfg.output_dir = resolve_against(base_dir, out);

  Section pol = top.child("policy");
  std::string source = "builtin-dqn";
  pol.read("source", source);
  if (source == "builtin-dqn") {
    cfg.policy_source = PolicySource::kBuiltinDqn;
  } else if (source == "file") {
    cfg.policy_source = PolicySource::kFile;
  } else if (source == "bridge") {
    cfg.policy_source = PolicySource::kBridge;
  } else {
    throw ConfigError("policy.source must be builtin-dqn, file or bridge (got '" + source + "')");
  }
  std::string file;
  pol.read("file", file);
  cfg.policy_file = resolve_against(base_dir, file);

  Section br = pol.child("bridge");
  br.read("command", cfg.bridge.command);
  br.read("timeout_ms", cfg.bridge.timeout_ms);
  br.reject_unknown();
  if (!cfg.bridge.command.empty() && cfg.bridge.command[0].find('/') != std::string::npos) {
    cfg.bridge.command[0] = resolve_against(base_dir, cfg.bridge.command[0]).string();
  }

  Section dq = pol.child("dqn");
  DqnConfig& d = cfg.dqn;
  dq.read("gamma", d.gamma);
  dq.read("learning_rate", d.learning_rate);
  dq.read("replay_capacity", d.replay_capacity);
  dq.read("batch_size", d.batch_size);
  dq.read("target_sync_interval", d.target_sync_interval);
  dq.read("total_steps", d.total_steps);
  dq.read("epsilon_start", d.epsilon_start);
  dq.read("epsilon_end", d.epsilon_end);
  dq.read("epsilon_decay_steps", d.epsilon_decay_steps);
  dq.read("hidden_layers", d.hidden_layers);
  dq.read("learning_starts", d.learning_starts);
  dq.read("train_frequency", d.train_frequency);
  dq.read("gradient_steps", d.gradient_steps);
  dq.read("max_grad_norm", d.max_grad_norm);
  dq.read("input_scale", d.input_scale);
  dq.read("eval_interval", d.eval_interval);
  dq.read("eval_episodes", d.eval_episodes);
  dq.reject_unknown();
  pol.reject_unknown();

  Section ex = top.child("explain");
  ex.read("n_traj", cfg.explain.n_traj);
  ex.read("states", cfg.explain.states);
  std::string mode = to_string(cfg.explain.mode);
  ex.read("mode", mode);
  try {
    cfg.explain.mode = shapley_mode_from_string(mode);
  } catch (const Error&) {
    throw ConfigError("explain.mode must be exact or sampled (got '" + mode + "')");
  }
  ex.read("knn_k", cfg.explain.knn_k);
  ex.read("permutations", cfg.explain.permutations);
  ex.read("threads", cfg.explain.threads);
  ex.reject_unknown();

  Section di = top.child("distill");
  di.read("boundary_points", cfg.distill.boundary_points);
  di.read("max_iters", cfg.distill.max_iters);
  di.read("tol", cfg.distill.tol);
  di.reject_unknown();

  Section ev = top.child("evaluate");
  ev.read("episodes", cfg.evaluate.episodes);
  ev.read("seed_base", cfg.evaluate.seed_base);
  ev.reject_unknown();

  top.reject_unknown();
  cfg.dqn.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse_pipeline_config(text.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

// ---------------------------------------------------------------------------
// Provenance

ojson config_to_json(const PipelineConfig& c) {
  ojson doc;
  doc["env"] = make_env(c.env).name;
  doc["seed"] = c.seed;
  ojson pol;
  pol["source"] = to_string(c.policy_source);
  if (c.policy_source == PolicySource::kFile) pol["file"] = c.policy_file.string();
  if (c.policy_source == PolicySource::kBridge) {
    pol["bridge"] = {{"command", c.bridge.command}, {"timeout_ms", c.bridge.timeout_ms}};
  }
  if (c.policy_source == PolicySource::kBuiltinDqn) {
    const DqnConfig& d = c.dqn;
    pol["dqn"] = {{"gamma", d.gamma},
                  {"learning_rate", d.learning_rate},
                  {"replay_capacity", d.replay_capacity},
                  {"batch_size", d.batch_size},
                  {"target_sync_interval", d.target_sync_interval},
                  {"total_steps", d.total_steps},
                  {"epsilon_start", d.epsilon_start},
                  {"epsilon_end", d.epsilon_end},
                  {"epsilon_decay_steps", d.epsilon_decay_steps},
                  {"hidden_layers", d.hidden_layers},
                  {"learning_starts", d.learning_starts},
                  {"train_frequency", d.train_frequency},
                  {"gradient_steps", d.gradient_steps},
                  {"max_grad_norm", d.max_grad_norm},
                  {"input_scale", d.input_scale},
                  {"eval_interval", d.eval_interval},
                  {"eval_episodes", d.eval_episodes}};
  }
  doc["policy"] = std::move(pol);
  doc["explain"] = {{"n_traj", c.explain.n_traj},
                    {"states", c.explain.states},
                    {"mode", to_string(c.explain.mode)},
                    {"knn_k", c.explain.knn_k},
                    {"permutations", c.explain.permutations}};
  doc["distill"] = {{"boundary_points", c.distill.boundary_points},
                    {"max_iters", c.distill.max_iters},
                    {"tol", c.distill.tol}};
  doc["evaluate"] = {{"episodes", c.evaluate.episodes}, {"seed_base", c.evaluate.seed_base}};
  return doc;
}

std::string config_hash(const PipelineConfig& config) {
  const std::string text = config_to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return fmt::format("{:016x}", h);
}

fs::path resolve_output_dir(const PipelineConfig& config, const std::optional<fs::path>& override_dir) {
  if (override_dir && !override_dir->empty()) return *override_dir;
  if (const char* env = std::getenv(kOutputDirEnvVar); env != nullptr && *env != '\0') return fs::path(env);
  return config.output_dir;
}

// ---------------------------------------------------------------------------
// Stages

namespace {

ojson provenance(const PipelineConfig& c, Stage stage) {
  return {{"stage", to_string(stage)}, {"config_hash", config_hash(c)}, {"seed", c.seed}};
}

fs::path out_path(const PipelineConfig& c, const char* name) { return c.output_dir / name; }

void require(const PipelineConfig& c, const char* name, Stage producer, Stage consumer) {
  const fs::path p = out_path(c, name);
  if (!fs::exists(p)) {
    throw StageOrderError(fmt::format("{}: missing {}; run the '{}' stage first", to_string(consumer), p.string(),
                                      to_string(producer)));
  }
}

void write_json(const fs::path& path, const ojson& doc) { write_text_file(path, doc.dump(2) + "\n"); }

// The policy under explanation: the trained network, a policy file, or an
// adapter process.
std::unique_ptr<Policy> open_policy(const PipelineConfig& c, const EnvSpec& env, Stage consumer,
                                    std::string* policy_id) {
  std::unique_ptr<Policy> policy;
  switch (c.policy_source) {
    case PolicySource::kBuiltinDqn:
      require(c, artifacts::kPolicy, Stage::kTrain, consumer);
      policy = load_policy(out_path(c, artifacts::kPolicy));
      *policy_id = "dqn";
      break;
    case PolicySource::kFile:
      if (!fs::exists(c.policy_file)) throw ConfigError("policy file not found: " + c.policy_file.string());
      policy = load_policy(c.policy_file);
      *policy_id = c.policy_file.stem().string();
      break;
    case PolicySource::kBridge: {
      auto remote = RemotePolicy::launch(c.bridge.command, &env, std::chrono::milliseconds(c.bridge.timeout_ms));
      *policy_id = remote->info().policy_id;
      policy = std::move(remote);
      break;
    }
  }
  if (policy->feature_count() != env.feature_count() || policy->action_count() != env.action_count) {
    throw ContractError(fmt::format("policy has {} features / {} actions but {} expects {} / {}",
                                    policy->feature_count(), policy->action_count(), env.name, env.feature_count(),
                                    env.action_count));
  }
  return policy;
}

std::vector<State> strided_subset(const StateDataset& ds, int count) {
  std::vector<State> states;
  const std::size_t want = count == 0 ? ds.size() : std::min<std::size_t>(ds.size(), count);
  const std::size_t stride = std::max<std::size_t>(1, ds.size() / want);
  states.reserve(want);
  for (std::size_t i = 0; i < ds.size() && states.size() < want; i += stride) {
    auto s = ds.state(i);
    states.emplace_back(s.begin(), s.end());
  }
  return states;
}

}  // namespace

StageOutcome run_train(const PipelineConfig& c) {
  const EnvSpec env = make_env(c.env);
  StageOutcome outcome{Stage::kTrain, {}, {}};
  ojson summary;
  summary["provenance"] = provenance(c, Stage::kTrain);
  summary["env"] = env.name;
  summary["source"] = to_string(c.policy_source);

  if (c.policy_source == PolicySource::kBuiltinDqn) {
    DqnConfig dqn = c.dqn;
    dqn.seed = c.seed;
    TrainingResult result = dqn_train(env, dqn);
    save_policy(result.policy, out_path(c, artifacts::kPolicy));
    std::ostringstream log;
    write_training_log_csv(log, result.log);
    write_text_file(out_path(c, artifacts::kTrainingLog), log.str());
    outcome.written = {out_path(c, artifacts::kPolicy), out_path(c, artifacts::kTrainingLog)};
    summary["episodes"] = result.log.size();
    if (std::isfinite(result.best_eval_return)) {
      summary["best_eval_return"] = result.best_eval_return;
      summary["best_eval_step"] = result.best_eval_step;
    } else {
      summary["best_eval_return"] = nullptr;
      summary["best_eval_step"] = nullptr;
    }
  } else {
    summary["note"] = "external policy; nothing to train";
  }
  write_json(out_path(c, artifacts::kTrainSummary), summary);
  outcome.written.push_back(out_path(c, artifacts::kTrainSummary));
  outcome.summary = summary;
  return outcome;
}

StageOutcome run_rollout(const PipelineConfig& c) {
  const EnvSpec env = make_env(c.env);
  std::string policy_id;
  auto policy = open_policy(c, env, Stage::kRollout, &policy_id);

  std::vector<State> states;
  std::ostringstream jsonl;
  double total_return = 0.0;
  for (int e = 0; e < c.explain.n_traj; ++e) {
    Trajectory traj = rollout(env, *policy, c.seed + static_cast<std::uint64_t>(e));
    write_trajectory_jsonl(jsonl, traj);
    total_return += traj.total_return;
    for (const Transition& t : traj.transitions) states.push_back(t.state);
  }
  StateDataset ds(std::move(states), DatasetSource{env.name, policy_id, c.explain.n_traj, c.seed}, env.feature_names);

  ojson extra;
  extra["provenance"] = provenance(c, Stage::kRollout);
  save_dataset(ds, out_path(c, artifacts::kDatasetCsv), out_path(c, artifacts::kDatasetMeta), extra);
  write_text_file(out_path(c, artifacts::kTrajectories), jsonl.str());

  StageOutcome outcome{Stage::kRollout,
                       {out_path(c, artifacts::kDatasetCsv), out_path(c, artifacts::kDatasetMeta),
                        out_path(c, artifacts::kTrajectories)},
                       {}};
  outcome.summary = {{"states", ds.size()}, {"mean_return", total_return / c.explain.n_traj}};
  return outcome;
}

StageOutcome run_explain(const PipelineConfig& c) {
  const EnvSpec env = make_env(c.env);
  require(c, artifacts::kDatasetCsv, Stage::kRollout, Stage::kExplain);
  require(c, artifacts::kDatasetMeta, Stage::kRollout, Stage::kExplain);
  std::string policy_id;
  auto policy = open_policy(c, env, Stage::kExplain, &policy_id);
  const StateDataset ds = load_dataset(out_path(c, artifacts::kDatasetCsv), out_path(c, artifacts::kDatasetMeta));
  if (c.explain.knn_k > static_cast<int>(ds.size())) {
    throw ConfigError(fmt::format("explain.knn_k = {} exceeds the dataset size {}", c.explain.knn_k, ds.size()));
  }

  ExplainSettings settings;
  settings.mode = c.explain.mode;
  settings.knn_k = c.explain.knn_k;
  settings.permutations = c.explain.permutations;
  settings.seed = c.seed;
  // A bridged policy serializes queries, so extra workers only add contention.
  settings.threads = c.policy_source == PolicySource::kBridge ? 1 : c.explain.threads;

  RecordStore store = explain_states(ds, *policy, strided_subset(ds, c.explain.states), settings);
  store.metadata()["provenance"] = provenance(c, Stage::kExplain);
  save_records(store, env.feature_names, out_path(c, artifacts::kRecordsCsv), out_path(c, artifacts::kRecordsMeta));

  double worst = 0.0;
  for (const ShapleyRecord& r : store.records()) {
    double sum = 0.0;
    for (double p : r.shapley) sum += p;
    worst = std::max(worst, std::abs(sum - (r.v_full - r.v_empty)));
  }
  StageOutcome outcome{Stage::kExplain,
                       {out_path(c, artifacts::kRecordsCsv), out_path(c, artifacts::kRecordsMeta)},
                       {}};
  outcome.summary = {{"records", store.size()}, {"max_efficiency_gap", worst}};
  return outcome;
}

StageOutcome run_distill(const PipelineConfig& c) {
  const EnvSpec env = make_env(c.env);
  require(c, artifacts::kRecordsCsv, Stage::kExplain, Stage::kDistill);
  require(c, artifacts::kRecordsMeta, Stage::kExplain, Stage::kDistill);
  const RecordStore store = load_records(out_path(c, artifacts::kRecordsCsv), out_path(c, artifacts::kRecordsMeta));

  DistillConfig dc;
  dc.boundary_points = c.distill.boundary_points;
  dc.seed = c.seed;
  dc.max_iters = c.distill.max_iters;
  dc.tol = c.distill.tol;
  const DistillResult result = distill(store, env.action_count, dc, env.feature_names);

  ojson report;
  report["provenance"] = provenance(c, Stage::kDistill);
  const ojson body = distill_report(result, store, env.feature_names);
  for (const auto& [key, value] : body.items()) report[key] = value;
  write_json(out_path(c, artifacts::kDistillReport), report);
  save_policy(result.policy, out_path(c, artifacts::kInterpretablePolicy));

  StageOutcome outcome{Stage::kDistill,
                       {out_path(c, artifacts::kDistillReport), out_path(c, artifacts::kInterpretablePolicy)},
                       {}};
  ojson formulas = ojson::array();
  for (const auto& h : report["hyperplanes"]) formulas.push_back(h["formula"]);
  outcome.summary = {{"hyperplanes", formulas}};
  return outcome;
}

StageOutcome run_evaluate(const PipelineConfig& c) {
  const EnvSpec env = make_env(c.env);
  require(c, artifacts::kInterpretablePolicy, Stage::kDistill, Stage::kEvaluate);
  require(c, artifacts::kDistillReport, Stage::kDistill, Stage::kEvaluate);
  require(c, artifacts::kDatasetCsv, Stage::kRollout, Stage::kEvaluate);
  require(c, artifacts::kDatasetMeta, Stage::kRollout, Stage::kEvaluate);
  std::string policy_id;
  auto original = open_policy(c, env, Stage::kEvaluate, &policy_id);
  auto distilled = load_policy(out_path(c, artifacts::kInterpretablePolicy));
  const StateDataset ds = load_dataset(out_path(c, artifacts::kDatasetCsv), out_path(c, artifacts::kDatasetMeta));
  const nlohmann::json distill_doc = read_json_file(out_path(c, artifacts::kDistillReport));

  EvaluationReport report;
  report.provenance = provenance(c, Stage::kEvaluate);
  report.stats.push_back(evaluate(env, *original, c.evaluate.episodes, c.evaluate.seed_base, policy_id));
  report.stats.push_back(evaluate(env, *distilled, c.evaluate.episodes, c.evaluate.seed_base, "distilled"));
  report.fidelity = fidelity(*original, *distilled, ds.states());
  for (const auto& h : distill_doc.at("hyperplanes")) {
    report.hyperplanes.push_back({{"i", h.at("i").get<int>()},
                                  {"j", h.at("j").get<int>()},
                                  {"formula", h.at("formula").get<std::string>()},
                                  {"normalized_formula", h.at("normalized_formula").get<std::string>()}});
  }
  export_report(report, out_path(c, artifacts::kEvalJson), ReportFormat::kJson);
  export_report(report, out_path(c, artifacts::kEvalCsv), ReportFormat::kCsv);

  StageOutcome outcome{Stage::kEvaluate, {out_path(c, artifacts::kEvalJson), out_path(c, artifacts::kEvalCsv)}, {}};
  ojson summary = ojson::object();
  for (const EvalStats& s : report.stats) {
    summary[s.policy_id] = {{"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max},
                            {"terminations", s.termination_count()}};
  }
  summary["fidelity"] = report.fidelity->rate;
  outcome.summary = summary;
  return outcome;
}

std::vector<StageOutcome> run_stage(Stage stage, const PipelineConfig& config) {
  switch (stage) {
    case Stage::kTrain: return {run_train(config)};
    case Stage::kRollout: return {run_rollout(config)};
    case Stage::kExplain: return {run_explain(config)};
    case Stage::kDistill: return {run_distill(config)};
    case Stage::kEvaluate: return {run_evaluate(config)};
    case Stage::kPipeline:
      return {run_train(config), run_rollout(config), run_explain(config), run_distill(config),
              run_evaluate(config)};
  }
  throw ContractError("run_stage: unknown stage");
}

}  // namespace shapdistill
