#include "fedquant/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "fedquant/checkpoint.hpp"
#include "fedquant/config.hpp"
#include "fedquant/error.hpp"
#include "fedquant/evaluation.hpp"
#include "fedquant/federation.hpp"
#include "fedquant/theory.hpp"

namespace fedquant::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kConfig: return kConfig;
    case ErrorKind::kDiverged:
    case ErrorKind::kNumeric: return kDiverged;
    case ErrorKind::kIo: return kIo;
    default: return kFailure;
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("FEDQUANT_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto s = std::stoull(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    throw ConfigError(std::string("FEDQUANT_SEED='") + v + "' is not an unsigned integer");
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream os;
  os << "round,accuracy,loss,client_loss\n";
  for (const auto& r : rows) os << r.round << ',' << fmt(r.accuracy) << ',' << fmt(r.loss) << ',' << fmt(r.client_loss) << '\n';
  return os.str();
}

void write_report(const EvalReport& report, const fs::path& dir) {
  std::ostringstream csv;
  write_report_csv(report, csv);
  write_text(dir / "report.csv", csv.str());
  write_text(dir / "report.json", report_to_json(report).dump(2) + "\n");
}

EvalReport sweep_for(const ExperimentConfig& cfg, const ServerState& state, const FederatedDataset& data) {
  const Batch calib = calibration_batch(cfg.fed, data.train);
  EvalReport report = sweep(state, cfg.strategy, cfg.eval_bits, data.validation, &calib, cfg.eval_options);
  report.seed = cfg.fed.seed;
  report.config_hash = cfg.hash;
  report.config = cfg.effective;
  return report;
}

struct CommonFlags {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  int threads = 1;
  bool quiet = false;
};

void add_common(CLI::App* sub, CommonFlags& f, bool config_required) {
  auto* c = sub->add_option("--config", f.config, "Experiment config file (JSON, schema_version 1)");
  if (config_required) c->required();
  sub->add_option("--set", f.overrides, "Override a config value, KEY=VALUE with dotted keys (repeatable)")
      ->allow_extra_args(false);
  sub->add_option("--out", f.out, "Output directory (overrides output.dir)");
  sub->add_option("--threads", f.threads, "Worker threads for client training (count; never changes results)")
      ->check(CLI::PositiveNumber);
  sub->add_flag("--quiet", f.quiet, "Suppress per-round progress lines");
}

int cmd_run(const CommonFlags& f, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = load_config(f.config, f.overrides, env_seed());
  if (!f.out.empty()) cfg.out_dir = f.out;
  const FederatedDataset data = build_dataset(cfg);
  const auto widths = cfg.widths(data.train.dim(), static_cast<std::size_t>(data.train.num_classes));

  RunOptions opts;
  opts.threads = f.threads;
  if (!f.quiet) {
    opts.on_eval = [&](const HistoryRow& r) {
      out << "round " << r.round << " accuracy " << std::fixed << std::setprecision(4) << r.accuracy << " loss "
          << r.loss << " client_loss " << r.client_loss << std::defaultfloat << '\n';
    };
  }
  const RunResult res = run(cfg.fed, cfg.strategy, data, widths, opts);
  const EvalReport report = sweep_for(cfg, res.state, data);
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';

  const fs::path dir = cfg.out_dir;
  ensure_dir(dir);
  write_text(dir / "config.json", cfg.effective.dump(2) + "\n");
  write_text(dir / "history.csv", history_csv(res.history));
  write_report(report, dir);
  save_checkpoint({res.state, cfg.hash, cfg.effective}, dir / "checkpoint.json");
  if (!f.quiet) out << "wrote " << (dir / "history.csv").string() << ", report.{csv,json}, checkpoint.json\n";
  return kOk;
}

int cmd_eval(const CommonFlags& f, const std::string& ckpt_path, std::ostream& out, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  ExperimentConfig cfg = f.config.empty() ? parse_config(ckpt.config, f.overrides)
                                          : load_config(f.config, f.overrides, env_seed());
  if (!f.out.empty()) cfg.out_dir = f.out;
  const FederatedDataset data = build_dataset(cfg);
  if (!ckpt.state.params.same_layout(
          ParamSet::zeros(cfg.widths(data.train.dim(), static_cast<std::size_t>(data.train.num_classes))))) {
    throw ConfigError("checkpoint does not match the configured model");
  }
  const EvalReport report = sweep_for(cfg, ckpt.state, data);
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';
  const fs::path dir = cfg.out_dir;
  ensure_dir(dir);
  write_report(report, dir);
  if (!f.quiet) {
    for (const auto& r : report.rows)
      out << r.strategy << ' ' << r.bits.label() << " accuracy " << fmt(r.accuracy) << " loss " << fmt(r.loss) << '\n';
  }
  return kOk;
}

int cmd_partition_stats(const CommonFlags& f, std::ostream& out) {
  const ExperimentConfig cfg = load_config(f.config, f.overrides, env_seed());
  const FederatedDataset data = build_dataset(cfg);
  const PartitionStats st = partition_stats(data.train, data.assignment);
  json doc = {{"num_clients", data.num_clients()},
              {"alpha", cfg.data.alpha},
              {"train_size", data.train.size()},
              {"total_assigned", st.total},
              {"client_sizes", st.client_sizes},
              {"client_entropy", st.client_entropy},
              {"mean_entropy", st.mean_entropy},
              {"global_entropy", st.global_entropy},
              {"config_hash", cfg.hash}};
  out << doc.dump(2) << '\n';
  return kOk;
}

struct BoundFlags {
  std::string config;
  std::optional<double> L, sigma_l, sigma_g, D, T, eta_c, eta_s, gap;
  std::optional<int> K;
  std::optional<std::string> method;
  std::vector<double> steps;
};

int cmd_bound(const BoundFlags& f, std::ostream& out) {
  json doc = json::object();
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw ConfigError("cannot read bound config '" + f.config + "'");
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("'" + f.config + "' is not valid JSON: " + e.what());
    }
    static const std::vector<std::string> known{"L", "sigma_l", "sigma_g", "D", "K", "T",
                                                "eta_c", "eta_s", "method", "steps", "gap"};
    for (const auto& [k, v] : doc.items())
      if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown bound key '" + k + "'");
  }
  auto pick = [&](const std::optional<double>& flag, const char* key) -> double {
    if (flag) return *flag;
    if (doc.contains(key) && doc[key].is_number()) return doc[key].get<double>();
    throw ConfigError(std::string("missing bound input '") + key + "'");
  };
  theory::BoundInputs in;
  in.L = pick(f.L, "L");
  in.sigma_l = pick(f.sigma_l, "sigma_l");
  in.sigma_g = pick(f.sigma_g, "sigma_g");
  in.D = pick(f.D, "D");
  in.T = pick(f.T, "T");
  in.eta_c = pick(f.eta_c, "eta_c");
  in.eta_s = pick(f.eta_s, "eta_s");
  in.gap = pick(f.gap, "gap");
  if (f.K) {
    in.K = *f.K;
  } else if (doc.contains("K") && doc["K"].is_number_integer()) {
    in.K = doc["K"].get<int>();
  } else {
    throw ConfigError("missing bound input 'K'");
  }
  if (f.method) {
    in.method = theory::parse_noise_method(*f.method);
  } else if (doc.contains("method") && doc["method"].is_string()) {
    in.method = theory::parse_noise_method(doc["method"].get<std::string>());
  } else {
    throw ConfigError("missing bound input 'method'");
  }
  if (!f.steps.empty()) {
    in.steps = f.steps;
  } else if (doc.contains("steps") && doc["steps"].is_array()) {
    in.steps = doc["steps"].get<std::vector<double>>();
  } else {
    throw ConfigError("missing bound input 'steps'");
  }
  const theory::BoundReport rep = theory::compute_bound(in);
  out << rep.to_json().dump(2) << '\n';
  return rep.conditions_ok ? kOk : kConditions;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fedquant: federated learning simulator with quantization-robust client training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "fedquant 1.0.0");

  CommonFlags run_flags, eval_flags, part_flags;
  auto* run_cmd = app.add_subcommand("run", "Train, sweep bit-widths and write history, report and checkpoint");
  add_common(run_cmd, run_flags, true);

  auto* eval_cmd = app.add_subcommand("eval", "Re-run the bit-width sweep on a saved checkpoint");
  std::string ckpt;
  eval_cmd->add_option("--checkpoint", ckpt, "Checkpoint file written by `run`")->required();
  add_common(eval_cmd, eval_flags, false);

  auto* part_cmd = app.add_subcommand("partition-stats", "Print per-client sample counts and label entropy (nats)");
  add_common(part_cmd, part_flags, true);

  BoundFlags bf;
  auto* bound_cmd = app.add_subcommand("bound", "Evaluate the FedAvg quantization convergence bound; prints JSON");
  bound_cmd->add_option("--config", bf.config, "JSON file with keys L, sigma_l, sigma_g, D, K, T, eta_c, eta_s, method, steps, gap");
  bound_cmd->add_option("--lipschitz", bf.L, "Gradient Lipschitz constant L (1/parameter-unit)");
  bound_cmd->add_option("--sigma-l", bf.sigma_l, "Local gradient std-dev bound sigma_l (gradient-norm units)");
  bound_cmd->add_option("--sigma-g", bf.sigma_g, "Global gradient dissimilarity bound sigma_g (gradient-norm units)");
  bound_cmd->add_option("--dim", bf.D, "Parameter count D (count)");
  bound_cmd->add_option("--local-steps", bf.K, "Local steps per round K (count)");
  bound_cmd->add_option("--rounds", bf.T, "Communication rounds T (count)");
  bound_cmd->add_option("--eta-c", bf.eta_c, "Client learning rate (step size, dimensionless)");
  bound_cmd->add_option("--eta-s", bf.eta_s, "Server learning rate (step size, dimensionless)");
  bound_cmd->add_option("--method", bf.method, "Noise model: apqn, qat or mqat");
  bound_cmd->add_option("--steps", bf.steps, "Quantization step size(s) Delta_b (parameter units); several for mqat")
      ->delimiter(',');
  bound_cmd->add_option("--gap", bf.gap, "Initial optimality gap F(w_1) - F(w*) (loss units)");

  std::vector<std::string> owned{"fedquant"};
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : owned) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run_cmd) return cmd_run(run_flags, out, err);
    if (*eval_cmd) return cmd_eval(eval_flags, ckpt, out, err);
    if (*part_cmd) return cmd_partition_stats(part_flags, out);
    if (*bound_cmd) return cmd_bound(bf, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

}  // namespace fedquant::cli
