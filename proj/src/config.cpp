#include "fedquant/config.hpp"

#include <cstdio>
#include <fstream>

#include "fedquant/error.hpp"

namespace fedquant {

using nlohmann::json;

json default_config_json() {
  const FedConfig f;
  const StrategyConfig s;
  const SyntheticParams d;
  json bits = json::array();
  for (const auto& bc : default_bit_configs()) bits.push_back(bc.label());
  return {
      {"schema_version", kConfigSchemaVersion},
      {"seed", 0},
      {"data",
       {{"num_classes", d.num_classes},
        {"dim", d.dim},
        {"samples_per_class", d.samples_per_class},
        {"class_separation", d.class_separation},
        {"alpha", 1.0},
        {"train_csv", nullptr},
        {"validation_csv", nullptr}}},
      {"model", {{"hidden", json::array({64})}}},
      {"federation",
       {{"rounds", f.rounds},
        {"clients_per_round", f.clients_per_round},
        {"num_clients", f.num_clients},
        {"server_lr", f.eta_s},
        {"client_lr", f.eta_c},
        {"local_steps", f.local_steps},
        {"server_opt", to_string(f.server_opt)},
        {"adam_beta1", f.adam_beta1},
        {"adam_beta2", f.adam_beta2},
        {"adam_eps", f.adam_eps},
        {"batch_size", f.batch_size},
        {"eval_every", f.eval_every},
        {"calibration_size", f.calibration_size}}},
      {"strategy",
       {{"kind", to_string(s.kind)},
        {"lambda", s.lambda},
        {"k_tau", s.k_tau},
        {"train_bits", s.train_bits},
        {"bit_set", s.bit_set},
        {"mqat_mode", to_string(s.mqat_mode)},
        {"quantize_weights", s.quantize_weights},
        {"quantize_acts", s.quantize_acts},
        {"act_kure", s.act_kure}}},
      {"eval", {{"bit_configs", bits}, {"exempt_first_last", false}}},
      {"output", {{"dir", "out"}}},
  };
}

namespace {

bool compatible(const json& def, const json& val) {
  if (def.is_null()) return val.is_null() || val.is_string();
  if (def.is_number()) return val.is_number();
  return def.type() == val.type();
}

// Recursively overlays `user` onto `base`, rejecting keys `base` lacks.
void merge_checked(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("'" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (const auto& [key, val] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown key '" + path + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_checked(slot, val, path);
    } else {
      if (!compatible(slot, val)) throw ConfigError("key '" + path + "' has the wrong type");
      slot = val;
    }
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not KEY=VALUE");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings need no quoting
  }
  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("override '" + key + "' targets a section, not a value");
  if (!compatible(*node, value)) throw ConfigError("override '" + key + "' has the wrong type");
  *node = value;
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(section) + "." + key + ": " + e.what());
  }
}

int get_int(const json& j, const char* section, const char* key) {
  const json& v = j.at(section).at(key);
  if (!v.is_number_integer()) throw ConfigError(std::string(section) + "." + key + " must be an integer");
  return v.get<int>();
}

}  // namespace

std::vector<std::size_t> ExperimentConfig::widths(std::size_t input_dim, std::size_t num_classes) const {
  std::vector<std::size_t> w{input_dim};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(num_classes);
  return w;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig parse_config(const json& user, const std::vector<std::string>& overrides,
                              std::optional<std::uint64_t> env_seed) {
  json doc = default_config_json();
  merge_checked(doc, user, "");
  bool seed_set = user.contains("seed");
  for (const auto& o : overrides) {
    apply_override(doc, o);
    if (o.rfind("seed=", 0) == 0) seed_set = true;
  }
  if (!seed_set && env_seed) doc["seed"] = *env_seed;
  if (doc.at("schema_version") != kConfigSchemaVersion) {
    throw ConfigError("unsupported schema_version " + doc.at("schema_version").dump());
  }

  ExperimentConfig cfg;
  try {
    const json& seed = doc.at("seed");
    if (!seed.is_number_integer() || (seed.is_number_integer() && !seed.is_number_unsigned() && seed.get<long long>() < 0))
      throw ConfigError("seed must be a non-negative integer");
    cfg.fed.seed = seed.get<std::uint64_t>();

    cfg.data.synthetic.num_classes = get_int(doc, "data", "num_classes");
    cfg.data.synthetic.dim = get_int(doc, "data", "dim");
    cfg.data.synthetic.samples_per_class = get_int(doc, "data", "samples_per_class");
    cfg.data.synthetic.class_separation = get<double>(doc, "data", "class_separation");
    cfg.data.alpha = get<double>(doc, "data", "alpha");
    if (doc["data"]["train_csv"].is_string()) cfg.data.train_csv = doc["data"]["train_csv"].get<std::string>();
    if (doc["data"]["validation_csv"].is_string())
      cfg.data.validation_csv = doc["data"]["validation_csv"].get<std::string>();

    cfg.hidden.clear();
    for (const json& h : doc.at("model").at("hidden")) {
      if (!h.is_number_integer() || h.get<long long>() < 1) throw ConfigError("model.hidden entries must be positive integers");
      cfg.hidden.push_back(h.get<std::size_t>());
    }

    FedConfig& f = cfg.fed;
    f.rounds = get_int(doc, "federation", "rounds");
    f.clients_per_round = get_int(doc, "federation", "clients_per_round");
    f.num_clients = get_int(doc, "federation", "num_clients");
    f.eta_s = get<double>(doc, "federation", "server_lr");
    f.eta_c = get<double>(doc, "federation", "client_lr");
    f.local_steps = get_int(doc, "federation", "local_steps");
    f.server_opt = parse_server_opt(get<std::string>(doc, "federation", "server_opt"));
    f.adam_beta1 = get<double>(doc, "federation", "adam_beta1");
    f.adam_beta2 = get<double>(doc, "federation", "adam_beta2");
    f.adam_eps = get<double>(doc, "federation", "adam_eps");
    f.batch_size = get_int(doc, "federation", "batch_size");
    f.eval_every = get_int(doc, "federation", "eval_every");
    f.calibration_size = get_int(doc, "federation", "calibration_size");

    StrategyConfig& s = cfg.strategy;
    s.kind = parse_strategy_kind(get<std::string>(doc, "strategy", "kind"));
    s.lambda = get<double>(doc, "strategy", "lambda");
    s.k_tau = get<double>(doc, "strategy", "k_tau");
    s.train_bits = get_int(doc, "strategy", "train_bits");
    s.bit_set = get<std::vector<int>>(doc, "strategy", "bit_set");
    s.mqat_mode = parse_mqat_mode(get<std::string>(doc, "strategy", "mqat_mode"));
    s.quantize_weights = get<bool>(doc, "strategy", "quantize_weights");
    s.quantize_acts = get<bool>(doc, "strategy", "quantize_acts");
    s.act_kure = get<bool>(doc, "strategy", "act_kure");

    cfg.eval_bits.clear();
    for (const auto& label : get<std::vector<std::string>>(doc, "eval", "bit_configs"))
      cfg.eval_bits.push_back(BitConfig::parse(label));
    cfg.eval_options.exempt_first_last = get<bool>(doc, "eval", "exempt_first_last");
    cfg.out_dir = get<std::string>(doc, "output", "dir");
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  }
  cfg.fed.validate();
  cfg.strategy.validate();
  if (!(cfg.data.alpha > 0.0)) throw ConfigError("data.alpha must be positive");
  if (cfg.eval_bits.empty()) throw ConfigError("eval.bit_configs must not be empty");

  cfg.effective = std::move(doc);
  cfg.hash = fnv1a_hex(cfg.effective.dump());
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                             std::optional<std::uint64_t> env_seed) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  json user;
  try {
    user = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(user, overrides, env_seed);
}

FederatedDataset build_dataset(const ExperimentConfig& cfg) {
  FederatedDataset fd;
  fd.alpha = cfg.data.alpha;
  if (cfg.data.train_csv) {
    fd.train = load_csv(*cfg.data.train_csv);
    if (cfg.data.validation_csv) {
      fd.validation = load_csv(*cfg.data.validation_csv);
      if (fd.validation.dim() != fd.train.dim()) throw ConfigError("validation CSV width differs from training CSV");
      fd.validation.num_classes = fd.train.num_classes = std::max(fd.train.num_classes, fd.validation.num_classes);
    } else {
      fd.validation = fd.train;
    }
  } else {
    const SplitDataset split = gen_synthetic(cfg.data.synthetic, RngStream(cfg.fed.seed, {tag(Purpose::kData)}));
    fd.train = split.train;
    fd.validation = split.validation;
  }
  fd.assignment = dirichlet_partition(fd.train.labels, fd.train.num_classes, cfg.fed.num_clients, cfg.data.alpha,
                                      RngStream(cfg.fed.seed, {tag(Purpose::kPartition)}));
  return fd;
}

}  // namespace fedquant
