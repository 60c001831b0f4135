// SPDX-License-Identifier: Apache-2.0
//
// Python bindings. Matrices cross the boundary as float64 numpy arrays;
// weighted client lists are passed as parallel `adapters` / `weights` lists.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <stdexcept>

#include "flora/acceptance.hpp"
#include "flora/aggregation.hpp"
#include "flora/config.hpp"
#include "flora/fed_sim.hpp"
#include "flora/lora.hpp"
#include "flora/report.hpp"

namespace py = pybind11;
using namespace flora;

namespace {

std::vector<WeightedUpdate> zip(const std::vector<LoraAdapter>& adapters, const std::vector<double>& weights) {
  if (adapters.size() != weights.size()) {
    throw std::invalid_argument("adapters and weights must have the same length");
  }
  std::vector<WeightedUpdate> out;
  out.reserve(adapters.size());
  for (std::size_t i = 0; i < adapters.size(); ++i) out.push_back({adapters[i], weights[i]});
  return out;
}

InitKind init_kind(const std::string& name) {
  if (name == "gaussian") return InitKind::ZeroDeltaGaussian;
  if (name == "uniform") return InitKind::ZeroDeltaUniform;
  throw std::invalid_argument("init kind must be 'gaussian' or 'uniform', got '" + name + "'");
}

py::dict row_dict(const ReportRow& r) {
  py::dict d;
  d["round"] = r.round;
  d["strategy"] = r.strategy;
  d["global_loss"] = r.global_loss;
  d["mean_client_loss"] = r.mean_client_loss;
  d["relative_noise"] = r.relative_noise ? py::cast(*r.relative_noise) : py::none();
  d["params_up_total"] = r.params_up_total;
  d["params_down_total"] = r.params_down_total;
  return d;
}

ReportTable run_settings(const Settings& settings, bool all_strategies) {
  const ExperimentConfig cfg = build_config(settings);
  py::gil_scoped_release release;
  if (!all_strategies) {
    ComparisonReport single;
    single.runs.push_back(run_experiment(cfg));
    return to_table(single);
  }
  return to_table(compare_strategies(cfg, cfg.strategies));
}

}  // namespace

PYBIND11_MODULE(_flora, m) {
  m.doc() = "Federated fine-tuning with stacked low-rank adapters";

  auto config_error = py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<UnsupportedRanksError>(m, "UnsupportedRanksError", PyExc_ValueError);
  (void)config_error;

  py::class_<LoraAdapter>(m, "LoraAdapter")
      .def(py::init<Matrix, Matrix>(), py::arg("a"), py::arg("b"),
           "Adapter with a of shape (r, n) and b of shape (m, r).")
      .def_property_readonly("a", &LoraAdapter::a)
      .def_property_readonly("b", &LoraAdapter::b)
      .def_property_readonly("rank", &LoraAdapter::rank)
      .def_property_readonly("shape", [](const LoraAdapter& ad) {
        return py::make_tuple(ad.dim().m, ad.dim().n);
      })
      .def("delta", &adapter_delta)
      .def("__eq__", [](const LoraAdapter& x, const LoraAdapter& y) { return x == y; })
      .def("__repr__", [](const LoraAdapter& ad) {
        return "LoraAdapter(m=" + std::to_string(ad.dim().m) + ", n=" + std::to_string(ad.dim().n) +
               ", rank=" + std::to_string(ad.rank()) + ")";
      });

  m.def("init_adapter",
        [](Index rows, Index cols, Index rank, std::uint64_t seed, const std::string& kind, double scale) {
          return init_adapter(Dim(rows, cols), rank, {init_kind(kind), scale, seed});
        },
        py::arg("m"), py::arg("n"), py::arg("rank"), py::arg("seed") = 0, py::arg("kind") = "gaussian",
        py::arg("scale") = 0.01);
  m.def("adapter_delta", &adapter_delta);
  m.def("merge", [](const Matrix& w, const LoraAdapter& ad) { return merge_into_base(BaseWeights(w), ad).w(); },
        py::arg("w"), py::arg("adapter"));
  m.def("stack_adapters", [](const std::vector<LoraAdapter>& list) { return stack_adapters(list); });
  m.def("scale_adapter", &scale_adapter, py::arg("adapter"), py::arg("p"));
  m.def("split_rank1", &split_rank1);
  m.def("trainable_fraction", [](Index rows, Index cols, Index rank) {
    return trainable_fraction(Dim(rows, cols), rank);
  }, py::arg("m"), py::arg("n"), py::arg("rank"));

  m.def("aggregate_flora", [](const std::vector<LoraAdapter>& a, const std::vector<double>& w) {
    return aggregate_flora(zip(a, w));
  }, py::arg("adapters"), py::arg("weights"));
  m.def("aggregate_fedit", [](const std::vector<LoraAdapter>& a, const std::vector<double>& w) {
    return aggregate_fedit(zip(a, w));
  }, py::arg("adapters"), py::arg("weights"));
  m.def("aggregate_zero_padding", [](const std::vector<LoraAdapter>& a, const std::vector<double>& w) {
    return aggregate_zero_padding(zip(a, w));
  }, py::arg("adapters"), py::arg("weights"));
  m.def("oracle_delta", [](const std::vector<LoraAdapter>& a, const std::vector<double>& w) {
    return oracle_delta(zip(a, w));
  }, py::arg("adapters"), py::arg("weights"));
  m.def("fedit_noise", [](const std::vector<LoraAdapter>& a, const std::vector<double>& w) {
    const NoiseReport nr = fedit_noise(zip(a, w));
    py::dict d;
    d["signal"] = nr.signal;
    d["cross"] = nr.cross;
    d["relative_noise"] = nr.relative_noise;
    return d;
  }, py::arg("adapters"), py::arg("weights"));
  m.def("shuffled_stack",
        [](const std::vector<LoraAdapter>& a, const std::vector<double>& w, std::uint64_t seed) {
          return shuffled_stack(zip(a, w), seed);
        },
        py::arg("adapters"), py::arg("weights"), py::arg("seed"));

  py::class_<ExperimentConfig>(m, "Config")
      .def_property_readonly("m", [](const ExperimentConfig& c) { return c.dim.m; })
      .def_property_readonly("n", [](const ExperimentConfig& c) { return c.dim.n; })
      .def_readonly("clients", &ExperimentConfig::k_clients)
      .def_readonly("ranks", &ExperimentConfig::ranks)
      .def_readonly("rounds", &ExperimentConfig::rounds)
      .def_readonly("seed", &ExperimentConfig::seed)
      .def_property_readonly("strategies", [](const ExperimentConfig& c) {
        std::vector<std::string> names;
        for (auto s : c.strategies) names.push_back(to_string(s));
        return names;
      })
      .def("serialize", &serialize_config)
      .def("describe", &describe_config)
      .def("__eq__", [](const ExperimentConfig& x, const ExperimentConfig& y) { return x == y; });

  m.def("parse_settings", &parse_settings, py::arg("text"));
  m.def("build_config", &build_config, py::arg("settings"));
  m.def("preset_names", &preset_names);

  py::class_<ReportTable>(m, "Report")
      .def_readonly("seed", &ReportTable::seed)
      .def_readonly("description", &ReportTable::description)
      .def_property_readonly("rows", [](const ReportTable& t) {
        py::list rows;
        for (const auto& r : t.rows) rows.append(row_dict(r));
        return rows;
      })
      .def("to_csv", &render_report)
      .def("write", [](const ReportTable& t, const std::string& path) { emit_report(t, path); });

  m.def("run", [](const Settings& s) { return run_settings(s, false); }, py::arg("settings"),
        "Run the first configured strategy.");
  m.def("compare", [](const Settings& s) { return run_settings(s, true); }, py::arg("settings"),
        "Run every configured strategy on the same task and partition.");
  m.def("verify", [](const std::string& scratch) {
    acceptance::Options options;
    if (!scratch.empty()) options.scratch_dir = scratch;
    std::vector<acceptance::CriterionResult> results;
    {
      py::gil_scoped_release release;
      results = acceptance::run_all(options);
    }
    py::list out;
    for (const auto& r : results) out.append(py::make_tuple(r.id, r.name, r.passed, r.detail));
    return out;
  }, py::arg("scratch") = "");
}
