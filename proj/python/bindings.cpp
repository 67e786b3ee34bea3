#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "shapdistill/env.hpp"
#include "shapdistill/errors.hpp"
#include "shapdistill/eval.hpp"
#include "shapdistill/pipeline.hpp"
#include "shapdistill/policy.hpp"
#include "shapdistill/policy_io.hpp"
#include "shapdistill/shapley.hpp"

namespace py = pybind11;
namespace sd = shapdistill;

namespace {

// Python games see a coalition as a sorted tuple of feature indices.
sd::CharacteristicFn wrap_game(const py::function& fn, int n) {
  return [fn, n](sd::Coalition c) {
    py::tuple members(c.size());
    std::size_t k = 0;
    for (int i = 0; i < n; ++i) {
      if (c.contains(i)) members[k++] = py::int_(i);
    }
    return fn(members).cast<double>();
  };
}

py::dict values_to_dict(const sd::ShapleyValues& v) {
  py::dict d;
  d["phi"] = v.phi;
  d["v_full"] = v.v_full;
  d["v_empty"] = v.v_empty;
  return d;
}

py::dict stats_to_dict(const sd::EvalStats& s) {
  py::dict d;
  d["policy_id"] = s.policy_id;
  d["episodes"] = s.episodes;
  d["returns"] = s.returns;
  d["terminated"] = s.terminated;
  d["mean"] = s.mean;
  d["std"] = s.std;
  d["min"] = s.min;
  d["max"] = s.max;
  d["seed_base"] = s.seed_base;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Shapley-based distillation of control policies into linear decision rules";

  auto base = py::register_exception<sd::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<sd::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<sd::ContractError>(m, "ContractError", base.ptr());
  auto numeric = py::register_exception<sd::NumericError>(m, "NumericError", base.ptr());
  py::register_exception<sd::DegenerateFitError>(m, "DegenerateFitError", numeric.ptr());
  py::register_exception<sd::IoError>(m, "IoError", base.ptr());
  py::register_exception<sd::StageOrderError>(m, "StageOrderError", base.ptr());
  py::register_exception<sd::BridgeError>(m, "BridgeError", base.ptr());

  py::class_<sd::EnvSpec>(m, "EnvSpec")
      .def_readonly("name", &sd::EnvSpec::name)
      .def_readonly("feature_names", &sd::EnvSpec::feature_names)
      .def_readonly("action_count", &sd::EnvSpec::action_count)
      .def_readonly("max_steps", &sd::EnvSpec::max_steps)
      .def_property_readonly("feature_count", &sd::EnvSpec::feature_count);
  m.def("make_env", &sd::make_env, py::arg("name"));

  py::class_<sd::Policy, std::shared_ptr<sd::Policy>>(m, "Policy")
      .def_property_readonly("kind", [](const sd::Policy& p) { return std::string(sd::to_string(p.kind())); })
      .def_property_readonly("feature_count", &sd::Policy::feature_count)
      .def_property_readonly("action_count", &sd::Policy::action_count)
      .def_property_readonly("feature_names", &sd::Policy::feature_names)
      .def("act", [](const sd::Policy& p, const std::vector<double>& s) { return sd::act(p, s); })
      .def("action_probs", [](const sd::Policy& p, const std::vector<double>& s) { return sd::action_probs(p, s); })
      .def("scalarize", [](const sd::Policy& p, const std::vector<double>& s) { return sd::scalarize(p, s); })
      .def("hyperplanes", [](const sd::Policy& p) {
        const auto* ip = dynamic_cast<const sd::InterpretablePolicy*>(&p);
        if (ip == nullptr) throw sd::ContractError("hyperplanes: not an interpretable policy");
        py::list out;
        for (const sd::Hyperplane& h : ip->hyperplanes()) {
          py::dict d;
          d["i"] = h.i;
          d["j"] = h.j;
          d["w"] = h.w;
          d["b"] = h.b;
          d["formula"] = h.formula(ip->feature_names());
          out.append(d);
        }
        return out;
      });

  m.def(
      "load_policy",
      [](const std::filesystem::path& path) { return std::shared_ptr<sd::Policy>(sd::load_policy(path)); },
      py::arg("path"));

  m.def(
      "shapley_exact", [](const py::function& v, int n) { return values_to_dict(sd::shapley_exact(wrap_game(v, n), n)); },
      py::arg("game"), py::arg("n"), "Exact Shapley values of a game given as a callable on index tuples.");
  m.def(
      "shapley_sampled",
      [](const py::function& v, int n, int permutations, std::uint64_t seed, bool exhaustive) {
        return values_to_dict(sd::shapley_sampled(wrap_game(v, n), n, permutations, seed, exhaustive));
      },
      py::arg("game"), py::arg("n"), py::arg("permutations"), py::arg("seed"), py::arg("exhaustive") = false);

  m.def(
      "evaluate",
      [](const std::string& env, const sd::Policy& policy, int episodes, std::uint64_t seed_base,
         const std::string& policy_id) {
        return stats_to_dict(sd::evaluate(sd::make_env(env), policy, episodes, seed_base, policy_id));
      },
      py::arg("env"), py::arg("policy"), py::arg("episodes"), py::arg("seed_base"), py::arg("policy_id") = "policy");

  m.def(
      "config_hash",
      [](const std::filesystem::path& config) { return sd::config_hash(sd::load_pipeline_config(config)); },
      py::arg("config"));

  // Stage summaries cross the boundary as JSON text; the Python package
  // decodes them.
  m.def(
      "run_stage",
      [](const std::string& stage, const std::filesystem::path& config, std::optional<std::filesystem::path> out,
         std::optional<std::uint64_t> seed) {
        sd::PipelineConfig cfg = sd::load_pipeline_config(config);
        if (seed) {
          cfg.seed = *seed;
          cfg.dqn.seed = *seed;
        }
        cfg.output_dir = sd::resolve_output_dir(cfg, out);
        std::vector<sd::StageOutcome> outcomes;
        {
          py::gil_scoped_release release;
          outcomes = sd::run_stage(sd::stage_from_string(stage), cfg);
        }
        py::list result;
        for (const auto& o : outcomes) {
          py::dict d;
          d["stage"] = std::string(sd::to_string(o.stage));
          d["summary"] = o.summary.dump();
          d["written"] = o.written;
          result.append(d);
        }
        return result;
      },
      py::arg("stage"), py::arg("config"), py::arg("out") = std::nullopt, py::arg("seed") = std::nullopt);
}
