#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gemplus/commands.hpp"
#include "gemplus/engine.hpp"
#include "gemplus/error.hpp"
#include "gemplus/evaluate.hpp"

namespace py = pybind11;
using namespace gemplus;

namespace {

// Python dicts cross the boundary as JSON text.
nlohmann::json to_json(const py::object& obj) {
  if (obj.is_none()) return nlohmann::json::object();
  auto dumps = py::module_::import("json").attr("dumps");
  return nlohmann::json::parse(dumps(obj).cast<std::string>());
}

py::object from_json(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

using Query = std::vector<int>;

Workload make_workload(const DiscreteTable& t, const py::object& w) {
  if (py::isinstance<py::int_>(w)) return all_k_way(t.schema(), w.cast<std::size_t>());
  Workload out;
  for (const auto& q : w.cast<std::vector<Query>>()) out.insert(MarginalQuery(q));
  validate_workload(out, t.schema());
  return out;
}

std::vector<Query> queries_of(const Workload& w) {
  std::vector<Query> out;
  for (const auto& q : w) out.emplace_back(q.cols().begin(), q.cols().end());
  return out;
}

DiscreteTable table_from_array(py::array_t<std::int64_t, py::array::c_style |
                                                           py::array::forcecast> a,
                               std::vector<std::size_t> cards) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  if (static_cast<std::size_t>(a.shape(1)) != cards.size()) {
    throw std::invalid_argument("column count does not match cardinalities");
  }
  auto r = a.unchecked<2>();
  std::vector<std::vector<Category>> cols(cards.size());
  for (std::size_t j = 0; j < cards.size(); ++j) {
    cols[j].reserve(a.shape(0));
    for (py::ssize_t i = 0; i < a.shape(0); ++i) {
      const auto v = r(i, j);
      if (v < 0 || static_cast<std::size_t>(v) >= cards[j]) {
        throw DataError("value " + std::to_string(v) + " outside domain of column " +
                        std::to_string(j));
      }
      cols[j].push_back(static_cast<Category>(v));
    }
  }
  return DiscreteTable(make_schema(cards), std::move(cols));
}

py::array_t<std::int64_t> table_to_array(const DiscreteTable& t) {
  py::array_t<std::int64_t> out({t.rows(), t.cols()});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t j = 0; j < t.cols(); ++j) {
    const auto col = t.column(j);
    for (std::size_t i = 0; i < t.rows(); ++i) w(i, j) = col[i];
  }
  return out;
}

struct PyFit {
  FitOutput out;
  std::size_t records = 0;
};

}  // namespace

PYBIND11_MODULE(_gemplus, m) {
  m.doc() = "Differentially private synthetic data from marginal queries";

  auto base = py::register_exception<Error>(m, "GemplusError");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<BudgetError>(m, "BudgetError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::class_<DiscreteTable>(m, "Table")
      .def(py::init(&table_from_array), py::arg("values"), py::arg("cardinalities"))
      .def_static(
          "load_csv",
          [](const std::string& path, const py::object& spec) {
            return load_table(path, parse_preprocess_spec(to_json(spec)));
          },
          py::arg("path"), py::arg("spec"))
      .def_property_readonly("rows", &DiscreteTable::rows)
      .def_property_readonly("cols", &DiscreteTable::cols)
      .def_property_readonly("cardinalities",
                             [](const DiscreteTable& t) { return t.schema().cardinalities(); })
      .def_property_readonly("schema",
                             [](const DiscreteTable& t) { return from_json(schema_to_json(t.schema())); })
      .def("to_numpy", &table_to_array)
      .def(
          "marginal",
          [](const DiscreteTable& t, const Query& q) {
            return evaluate_marginal(t, MarginalQuery(q)).values;
          },
          py::arg("query"));

  py::class_<PyFit>(m, "FitResult")
      .def_property_readonly("model",
                             [](const PyFit& f) {
                               auto j = f.out.model.to_json();
                               j["records"] = f.records;
                               return from_json(j);
                             })
      .def_property_readonly("log",
                             [](const PyFit& f) {
                               nlohmann::json a = nlohmann::json::array();
                               for (const auto& r : f.out.log) a.push_back(r.to_json());
                               return from_json(a);
                             })
      .def_property_readonly("ledger",
                             [](const PyFit& f) { return from_json(f.out.accountant.to_json()); })
      .def_property_readonly("rho_spent",
                             [](const PyFit& f) { return f.out.accountant.rho_spent(); })
      .def_property_readonly("notices", [](const PyFit& f) { return f.out.notices; })
      .def(
          "sample",
          [](const PyFit& f, std::optional<std::size_t> rows, std::uint64_t seed) {
            Rng rng(seed);
            return sample(f.out.model, rows.value_or(f.records), rng);
          },
          py::arg("rows") = py::none(), py::arg("seed") = 0);

  auto fit = [](EngineMode mode) {
    return [mode](const DiscreteTable& t, const py::object& workload, double epsilon,
                  double delta, const py::object& config) {
      EngineConfig cfg = EngineConfig::from_json(to_json(config));
      const Workload w = make_workload(t, workload);
      py::gil_scoped_release release;
      PyFit f;
      f.records = t.rows();
      f.out = mode == EngineMode::gem_plus ? gem_plus_fit(t, w, epsilon, delta, cfg)
                                           : gem_baseline_fit(t, w, epsilon, delta, cfg);
      return f;
    };
  };
  m.def("fit", fit(EngineMode::gem_plus), py::arg("table"), py::arg("workload"),
        py::arg("epsilon"), py::arg("delta") = 1e-6, py::arg("config") = py::none(),
        "Train a generator with the full algorithm; workload is k or a list of column tuples.");
  m.def("fit_baseline", fit(EngineMode::gem_baseline), py::arg("table"),
        py::arg("workload"), py::arg("epsilon"), py::arg("delta") = 1e-6,
        py::arg("config") = py::none());

  m.def("all_k_way",
        [](const std::vector<std::size_t>& cards, std::size_t k) {
          return queries_of(all_k_way(make_schema(cards), k));
        },
        py::arg("cardinalities"), py::arg("k"));
  m.def("downward_closure",
        [](const std::vector<Query>& w) {
          Workload in;
          for (const auto& q : w) in.insert(MarginalQuery(q));
          return queries_of(downward_closure(in));
        },
        py::arg("workload"));
  m.def("workload_error",
        [](const DiscreteTable& real, const DiscreteTable& synth, const py::object& w) {
          return workload_error(real, synth, make_workload(real, w));
        },
        py::arg("real"), py::arg("synth"), py::arg("workload"));

  m.def("eps_delta_to_rho", &eps_delta_to_rho, py::arg("epsilon"), py::arg("delta"));
  m.def("calibrate_round",
        [](double rho_round, double alpha) {
          const auto p = calibrate_round(rho_round, alpha);
          return py::make_tuple(p.sigma, p.tau);
        },
        py::arg("rho_round"), py::arg("alpha"));

  m.def("cmd_fit",
        [](const std::filesystem::path& config, std::optional<std::filesystem::path> resume) {
          const auto s = cmd_fit(RunConfig::load(config), resume);
          return py::dict(py::arg("rounds") = s.rounds, py::arg("rho_total") = s.rho_total,
                          py::arg("rho_spent") = s.rho_spent, py::arg("notices") = s.notices);
        },
        py::arg("config"), py::arg("resume") = py::none());
  m.def("cmd_generate", &cmd_generate, py::arg("model"), py::arg("rows") = py::none(),
        py::arg("seed") = 0, py::arg("out"));
  m.def("cmd_evaluate",
        [](const std::filesystem::path& real, const std::filesystem::path& synth,
           const std::string& workload, std::optional<std::filesystem::path> schema) {
          return from_json(cmd_evaluate(real, synth, workload, schema));
        },
        py::arg("real"), py::arg("synth"), py::arg("workload"),
        py::arg("schema") = py::none());
}
