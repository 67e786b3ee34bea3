#include "shapdistill/policy_io.hpp"

#include <fstream>
#include <sstream>

#include "shapdistill/errors.hpp"

namespace shapdistill {

namespace {

nlohmann::ordered_json mlp_fields(const Mlp& net) {
  nlohmann::ordered_json doc;
  doc["layer_sizes"] = net.layer_sizes();
  doc["input_scale"] = std::vector<double>(net.input_scale().data(),
                                           net.input_scale().data() + net.input_scale().size());
  nlohmann::ordered_json weights = nlohmann::ordered_json::array();
  nlohmann::ordered_json biases = nlohmann::ordered_json::array();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    std::vector<double> flat;
    const Eigen::MatrixXd& w = net.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    }
    weights.push_back(flat);
    biases.push_back(std::vector<double>(net.bias(l).data(), net.bias(l).data() + net.bias(l).size()));
  }
  doc["weights"] = std::move(weights);
  doc["biases"] = std::move(biases);
  return doc;
}

Mlp mlp_from_json(const nlohmann::json& doc) {
  Mlp net(doc.at("layer_sizes").get<std::vector<int>>());
  const auto& weights = doc.at("weights");
  const auto& biases = doc.at("biases");
  if (weights.size() != net.layer_count() || biases.size() != net.layer_count()) {
    throw ContractError("policy file: weights/biases count does not match layer_sizes");
  }
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto flat = weights[l].get<std::vector<double>>();
    Eigen::MatrixXd& w = net.weight(l);
    if (static_cast<Eigen::Index>(flat.size()) != w.size()) {
      throw ContractError("policy file: weight matrix " + std::to_string(l) + " has wrong size");
    }
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = flat[r * w.cols() + c];
    }
    const auto b = biases[l].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(b.size()) != net.bias(l).size()) {
      throw ContractError("policy file: bias vector " + std::to_string(l) + " has wrong size");
    }
    net.bias(l) = Eigen::Map<const Eigen::VectorXd>(b.data(), b.size());
  }
  if (doc.contains("input_scale")) {
    const auto scale = doc.at("input_scale").get<std::vector<double>>();
    if (static_cast<int>(scale.size()) != net.input_size()) {
      throw ContractError("policy file: input_scale has wrong size");
    }
    net.input_scale() = Eigen::Map<const Eigen::VectorXd>(scale.data(), scale.size());
  }
  if (!net.all_finite()) throw NumericError("policy file: non-finite parameters");
  return net;
}

}  // namespace

nlohmann::ordered_json hyperplane_to_json(const Hyperplane& h, const std::vector<std::string>& feature_names) {
  nlohmann::ordered_json doc;
  doc["i"] = h.i;
  doc["j"] = h.j;
  doc["w"] = h.w;
  doc["b"] = h.b;
  doc["formula"] = h.formula(feature_names);
  return doc;
}

Hyperplane hyperplane_from_json(const nlohmann::json& doc) {
  Hyperplane h;
  h.i = doc.at("i").get<int>();
  h.j = doc.at("j").get<int>();
  h.w = doc.at("w").get<std::vector<double>>();
  h.b = doc.at("b").get<double>();
  return h;
}

nlohmann::ordered_json policy_to_json(const Policy& policy) {
  nlohmann::ordered_json doc;
  doc["kind"] = to_string(policy.kind());
  if (const auto* q = dynamic_cast<const QNetworkPolicy*>(&policy)) {
    doc["model"] = "q_network";
    doc["action_count"] = q->action_count();
    doc["feature_names"] = q->feature_names();
    doc.update(mlp_fields(q->network()));
  } else if (const auto* s = dynamic_cast<const SoftmaxPolicy*>(&policy)) {
    doc["model"] = "softmax";
    doc["action_count"] = s->action_count();
    doc["feature_names"] = s->feature_names();
    doc.update(mlp_fields(s->network()));
  } else if (const auto* p = dynamic_cast<const InterpretablePolicy*>(&policy)) {
    doc["model"] = "interpretable";
    doc["action_count"] = p->action_count();
    doc["feature_names"] = p->feature_names();
    nlohmann::ordered_json planes = nlohmann::ordered_json::array();
    for (const Hyperplane& h : p->hyperplanes()) planes.push_back(hyperplane_to_json(h, p->feature_names()));
    doc["hyperplanes"] = std::move(planes);
  } else {
    throw ContractError("policy_to_json: policy type has no file representation");
  }
  return doc;
}

std::unique_ptr<Policy> policy_from_json(const nlohmann::json& doc) {
  try {
    const std::string model = doc.at("model").get<std::string>();
    const PolicyKind kind = policy_kind_from_string(doc.at("kind").get<std::string>());
    std::vector<std::string> names;
    if (doc.contains("feature_names")) names = doc.at("feature_names").get<std::vector<std::string>>();
    const int action_count = doc.at("action_count").get<int>();

    std::unique_ptr<Policy> policy;
    if (model == "q_network") {
      if (kind != PolicyKind::kDeterministic) throw ConfigError("q_network policies are deterministic");
      policy = std::make_unique<QNetworkPolicy>(mlp_from_json(doc), names);
    } else if (model == "softmax") {
      if (kind != PolicyKind::kStochastic) throw ConfigError("softmax policies are stochastic");
      policy = std::make_unique<SoftmaxPolicy>(mlp_from_json(doc), names);
    } else if (model == "interpretable") {
      std::vector<Hyperplane> planes;
      for (const auto& h : doc.at("hyperplanes")) planes.push_back(hyperplane_from_json(h));
      policy = std::make_unique<InterpretablePolicy>(action_count, std::move(planes), names);
    } else {
      throw ConfigError("unknown policy model '" + model + "'");
    }
    if (policy->action_count() != action_count) {
      throw ContractError("policy file: action_count does not match the network output");
    }
    return policy;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed policy document: ") + e.what());
  }
}

namespace {

template <class Json>
Json parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace

nlohmann::json read_json_file(const std::filesystem::path& path) { return parse_file<nlohmann::json>(path); }

nlohmann::ordered_json read_ordered_json_file(const std::filesystem::path& path) {
  return parse_file<nlohmann::ordered_json>(path);
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << contents;
  if (!out) throw IoError("write failed for " + path.string());
}

void save_policy(const Policy& policy, const std::filesystem::path& path) {
  write_text_file(path, policy_to_json(policy).dump(2) + "\n");
}

std::unique_ptr<Policy> load_policy(const std::filesystem::path& path) {
  try {
    return policy_from_json(read_json_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace shapdistill
