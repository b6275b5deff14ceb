#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "fedquant/config.hpp"
#include "fedquant/error.hpp"
#include "fedquant/evaluation.hpp"
#include "fedquant/federation.hpp"
#include "fedquant/model.hpp"
#include "fedquant/quantizer.hpp"
#include "fedquant/theory.hpp"

namespace py = pybind11;
using namespace fedquant;

namespace {

Tensor to_tensor(const std::vector<double>& v) {
  Tensor t({v.size()});
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

py::dict spec_dict(const QuantSpec& s) {
  py::dict d;
  d["bits"] = s.bits;
  d["step"] = s.step;
  d["signed"] = s.is_signed;
  d["grid_min"] = s.grid_min;
  d["grid_max"] = s.grid_max;
  return d;
}

QuantSpec spec_for(double step, int bits, bool is_signed) { return spec_from_step(step, bits, is_signed); }

// Runs a config document end to end and returns history plus the sweep report as JSON text.
std::string run_experiment(const std::string& config_json, const std::vector<std::string>& overrides, int threads) {
  const ExperimentConfig cfg = parse_config(nlohmann::json::parse(config_json), overrides);
  const FederatedDataset data = build_dataset(cfg);
  RunOptions opts;
  opts.threads = threads;
  RunResult res;
  {
    py::gil_scoped_release release;
    res = run(cfg.fed, cfg.strategy, data,
              cfg.widths(data.train.dim(), static_cast<std::size_t>(data.train.num_classes)), opts);
  }
  const Batch calib = calibration_batch(cfg.fed, data.train);
  EvalReport report = sweep(res.state, cfg.strategy, cfg.eval_bits, data.validation, &calib, cfg.eval_options);
  report.seed = cfg.fed.seed;
  report.config_hash = cfg.hash;
  report.config = cfg.effective;
  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : res.history)
    history.push_back({{"round", r.round}, {"accuracy", r.accuracy}, {"loss", r.loss}, {"client_loss", r.client_loss}});
  return nlohmann::json{{"history", history}, {"report", report_to_json(report)}}.dump();
}

}  // namespace

PYBIND11_MODULE(_fedquant, m) {
  m.doc() = "Federated learning simulator with quantization-robust client training";

  py::register_exception<Error>(m, "FedquantError", PyExc_ValueError);

  m.def("make_spec", [](double range_max, int bits, bool is_signed) { return spec_dict(make_spec(range_max, bits, is_signed)); },
        py::arg("range_max"), py::arg("bits"), py::arg("signed") = true);
  m.def(
      "quantize",
      [](const std::vector<double>& w, double step, int bits, bool is_signed) {
        return to_vector(quantize(to_tensor(w), spec_for(step, bits, is_signed)));
      },
      py::arg("w"), py::arg("step"), py::arg("bits"), py::arg("signed") = true);
  m.def(
      "estimate_range",
      [](const std::vector<double>& w, int bits, bool is_signed) {
        const RangeEstimate e = estimate_range_mse(std::span<const double>(w), bits, is_signed);
        py::dict d = spec_dict(e.spec);
        d["sse"] = e.sse;
        return d;
      },
      py::arg("w"), py::arg("bits"), py::arg("signed") = true);
  m.def("rescale_step", &rescale_step, py::arg("step"), py::arg("from_bits"), py::arg("to_bits"));
  m.def("kurtosis", [](const std::vector<double>& w) { return kurtosis(std::span<const double>(w)); }, py::arg("w"));

  m.def(
      "r_value",
      [](const std::string& method, const std::vector<double>& steps) {
        return theory::r_value(theory::parse_noise_method(method), steps);
      },
      py::arg("method"), py::arg("steps"));
  m.def("check_conditions", &theory::check_conditions, py::arg("eta_c"), py::arg("eta_s"), py::arg("K"), py::arg("L"));
  m.def(
      "compute_bound",
      [](double L, double sigma_l, double sigma_g, double D, int K, double T, double eta_c, double eta_s,
         const std::string& method, const std::vector<double>& steps, double gap) {
        theory::BoundInputs in;
        in.L = L;
        in.sigma_l = sigma_l;
        in.sigma_g = sigma_g;
        in.D = D;
        in.K = K;
        in.T = T;
        in.eta_c = eta_c;
        in.eta_s = eta_s;
        in.method = theory::parse_noise_method(method);
        in.steps = steps;
        in.gap = gap;
        return theory::compute_bound(in).to_json().dump();
      },
      py::arg("L"), py::arg("sigma_l"), py::arg("sigma_g"), py::arg("D"), py::arg("K"), py::arg("T"), py::arg("eta_c"),
      py::arg("eta_s"), py::arg("method"), py::arg("steps"), py::arg("gap"));

  m.def("default_config", [] { return default_config_json().dump(); });
  m.def("run_experiment", &run_experiment, py::arg("config_json"), py::arg("overrides") = std::vector<std::string>{},
        py::arg("threads") = 1);
}
