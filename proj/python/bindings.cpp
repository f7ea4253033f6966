#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "survuq/bench.hpp"

namespace py = pybind11;
using namespace survuq;

namespace {

cox::SurvivalCurve curve_from(const std::vector<double>& times,
                              const std::vector<double>& values) {
  cox::SurvivalCurve c;
  c.grid.times = times;
  c.values = values;
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "survival analysis with uncertainty quantification (C++ core)";

  py::register_exception<Error>(m, "SurvuqError");

  // experiment orchestration
  m.def(
      "run_experiment",
      [](const std::string& config_json) {
        return bench::run_experiment(bench::ExperimentConfig::from_json_text(config_json))
            .to_json();
      },
      py::arg("config_json"),
      "Run a full experiment from a JSON config string; returns the manifest JSON.");
  m.def(
      "hyper_search",
      [](const std::string& config_json, std::uint64_t seed) {
        auto results =
            bench::hyper_search(bench::ExperimentConfig::from_json_text(config_json), seed);
        py::list out;
        for (const auto& r : results) {
          py::dict d;
          d["model"] = r.model;
          d["valid_ci_td"] = r.valid_ci_td;
          d["valid_loss"] = r.valid_loss;
          d["evaluated"] = r.evaluated;
          d["learning_rate"] = r.best.learning_rate;
          d["l2"] = r.best.l2;
          d["decay"] = r.best.decay;
          d["batch_size"] = r.best.batch_size;
          d["hidden"] = r.best.hidden;
          out.append(std::move(d));
        }
        return out;
      },
      py::arg("config_json"), py::arg("seed"),
      "Grid search over the config's search section; returns per-model winners.");
  m.def("config_hash", &bench::config_hash, py::arg("canonical_json"));

  // survival estimators
  m.def(
      "partial_log_likelihood",
      [](const Eigen::VectorXd& risk, const std::vector<double>& times,
         const std::vector<int>& events) {
        return cox::partial_log_likelihood(risk, times, events);
      },
      py::arg("risk"), py::arg("times"), py::arg("events"));
  m.def(
      "plm_gradient",
      [](const Eigen::VectorXd& risk, const std::vector<double>& times,
         const std::vector<int>& events) { return cox::plm_gradient(risk, times, events); },
      py::arg("risk"), py::arg("times"), py::arg("events"));
  m.def(
      "breslow_baseline",
      [](const Eigen::VectorXd& risk, const std::vector<double>& times,
         const std::vector<int>& events) {
        cox::BaselineHazard base = cox::breslow_baseline(risk, times, events);
        return py::make_tuple(base.event_times, base.cumulative_hazard);
      },
      py::arg("risk"), py::arg("times"), py::arg("events"),
      "Returns (event_times, cumulative_hazard).");
  m.def(
      "kaplan_meier",
      [](const std::vector<double>& times, const std::vector<int>& events) {
        cox::SurvivalCurve km = cox::kaplan_meier(times, events);
        return py::make_tuple(km.grid.times, km.values);
      },
      py::arg("times"), py::arg("events"), "Returns (event_times, survival).");
  m.def(
      "median_survival_time",
      [](const std::vector<double>& times, const std::vector<double>& values) {
        return cox::median_survival_time(curve_from(times, values));
      },
      py::arg("times"), py::arg("values"));

  // evaluation metrics
  m.def(
      "concordance_td",
      [](const std::vector<std::vector<double>>& curve_times,
         const std::vector<std::vector<double>>& curve_values, const std::vector<double>& times,
         const std::vector<int>& events) {
        if (curve_times.size() != curve_values.size())
          throw Error("concordance_td: curve_times and curve_values differ in length");
        std::vector<cox::SurvivalCurve> curves;
        for (std::size_t i = 0; i < curve_times.size(); ++i)
          curves.push_back(curve_from(curve_times[i], curve_values[i]));
        return metrics::concordance_td(curves, times, events);
      },
      py::arg("curve_times"), py::arg("curve_values"), py::arg("times"), py::arg("events"));
  m.def("chi_square_p", &metrics::chi_square_p, py::arg("statistic"), py::arg("dof"));
  m.def("quantile_linear", &prob::quantile_linear, py::arg("samples"), py::arg("q"));

  // synthetic cohorts
  m.def(
      "synth_generate",
      [](std::size_t n, const std::vector<double>& true_weights, double baseline_rate,
         double censor_rate_target, std::uint64_t seed) {
        data::SynthConfig cfg;
        cfg.n = n;
        cfg.d = static_cast<int>(true_weights.size());
        cfg.true_weights = true_weights;
        cfg.baseline_rate = baseline_rate;
        cfg.censor_rate_target = censor_rate_target;
        cfg.seed = seed;
        auto [ds, truth] = data::synth_generate(cfg);
        py::dict out;
        out["time"] = ds.time;
        out["event"] = ds.event;
        out["X"] = ds.matrix();
        out["true_event_time"] = truth.event_time;
        out["linear_predictor"] = truth.linear_predictor;
        return out;
      },
      py::arg("n"), py::arg("true_weights"), py::arg("baseline_rate") = 1.0,
      py::arg("censor_rate_target") = 0.0, py::arg("seed") = 1,
      "Exponential-hazard cohort; returns a dict with time, event, X and the truth.");
}
