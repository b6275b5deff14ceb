#include "fedquant/checkpoint.hpp"

#include <fstream>

#include "fedquant/error.hpp"

namespace fedquant {

using nlohmann::json;

namespace {

json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.values()}}; }

Tensor tensor_from(const json& j) {
  return Tensor(j.at("shape").get<Tensor::Shape>(), j.at("data").get<std::vector<double>>());
}

json params_json(const ParamSet& p) {
  json layers = json::array();
  for (const Layer& l : p.layers()) layers.push_back({{"weight", tensor_json(l.weight)}, {"bias", tensor_json(l.bias)}});
  return layers;
}

ParamSet params_from(const json& j) {
  std::vector<Layer> layers;
  for (const json& l : j) layers.push_back({tensor_from(l.at("weight")), tensor_from(l.at("bias"))});
  return ParamSet(std::move(layers));
}

json table_json(const StepTable& t) {
  if (t.empty()) return nullptr;
  json steps = json::object();
  for (const auto& [b, s] : t.steps()) steps[std::to_string(b)] = s;
  return {{"anchor_bits", t.anchor_bits()}, {"signed", t.is_signed()}, {"steps", steps}};
}

StepTable table_from(const json& j) {
  if (j.is_null()) return {};
  std::map<int, double> steps;
  for (const auto& [k, v] : j.at("steps").items()) steps[std::stoi(k)] = v.get<double>();
  return StepTable::from_steps(std::move(steps), j.at("anchor_bits").get<int>(), j.at("signed").get<bool>());
}

json tables_json(const std::vector<StepTable>& ts) {
  json arr = json::array();
  for (const auto& t : ts) arr.push_back(table_json(t));
  return arr;
}

std::vector<StepTable> tables_from(const json& j) {
  std::vector<StepTable> out;
  for (const json& t : j) out.push_back(table_from(t));
  return out;
}

}  // namespace

json checkpoint_to_json(const Checkpoint& ckpt) {
  const ServerState& s = ckpt.state;
  return {{"magic", kCheckpointMagic},
          {"version", kCheckpointVersion},
          {"config_hash", ckpt.config_hash},
          {"config", ckpt.config},
          {"round", s.round},
          {"params", params_json(s.params)},
          {"adam_m", s.adam_m ? params_json(*s.adam_m) : json(nullptr)},
          {"adam_v", s.adam_v ? params_json(*s.adam_v) : json(nullptr)},
          {"step_tables", {{"weights", tables_json(s.tables.weights)}, {"acts", tables_json(s.tables.acts)}}}};
}

Checkpoint checkpoint_from_json(const json& doc) {
  try {
    if (!doc.is_object() || doc.value("magic", "") != kCheckpointMagic) throw ConfigError("not a checkpoint (bad magic)");
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw ConfigError("unsupported checkpoint version " + doc.at("version").dump());
    }
    Checkpoint c;
    c.config_hash = doc.at("config_hash").get<std::string>();
    c.config = doc.at("config");
    c.state.round = doc.at("round").get<int>();
    c.state.params = params_from(doc.at("params"));
    if (!doc.at("adam_m").is_null()) c.state.adam_m = params_from(doc.at("adam_m"));
    if (!doc.at("adam_v").is_null()) c.state.adam_v = params_from(doc.at("adam_v"));
    c.state.tables.weights = tables_from(doc.at("step_tables").at("weights"));
    c.state.tables.acts = tables_from(doc.at("step_tables").at("acts"));
    if ((c.state.adam_m && !c.state.adam_m->same_layout(c.state.params)) ||
        (c.state.adam_v && !c.state.adam_v->same_layout(c.state.params))) {
      throw ConfigError("checkpoint moments do not match the parameters");
    }
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << checkpoint_to_json(ckpt).dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(doc);
}

}  // namespace fedquant
