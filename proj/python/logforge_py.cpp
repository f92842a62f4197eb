// Python bindings: corpus generation, in-process search and the ML helpers.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "logforge/error.hpp"
#include "logforge/executor.hpp"
#include "logforge/generator.hpp"
#include "logforge/ml.hpp"
#include "logforge/query.hpp"
#include "logforge/service.hpp"
#include "logforge/version.hpp"

namespace py = pybind11;
using namespace logforge;
namespace fs = std::filesystem;

namespace {

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

const char* density_name(query::Density d) {
  switch (d) {
    case query::Density::kDense: return "dense";
    case query::Density::kScatter: return "scatter";
    case query::Density::kRare: return "rare";
    case query::Density::kNeedleInHaystack: return "needle";
  }
  return "needle";
}

}  // namespace

PYBIND11_MODULE(logforge, m) {
  m.doc() = "Log ingestion, indexed search, attack detection and outlier analysis";
  m.attr("__version__") = kVersionString;

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  static py::exception<ParseError> parse_error(m, "ParseError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ParseError& e) {
      py::object exc = py::reinterpret_borrow<py::object>(parse_error.ptr())(e.what());
      exc.attr("offset") = e.offset();
      PyErr_SetObject(parse_error.ptr(), exc.ptr());
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.def(
      "check_query", [](const std::string& q) { query::parse(q); }, py::arg("query"),
      "Raises ParseError (with .offset) when the query does not parse.");

  m.def(
      "classify_density",
      [](std::uint64_t hits, std::uint64_t scanned) { return density_name(query::classify_density(hits, scanned)); },
      py::arg("hits"), py::arg("scanned"));

  m.def(
      "generate",
      [](const fs::path& out, std::uint64_t seed, std::size_t events, double attack_rate, double error_rate) {
        gen::GenProfile p;
        p.seed = seed;
        p.events = events;
        p.attack_rate = attack_rate;
        p.error_rate = error_rate;
        return to_py(gen::generate_corpus(p, out).to_json());
      },
      py::arg("out_dir"), py::arg("seed") = 42, py::arg("events") = 10000, py::arg("attack_rate") = 0.0,
      py::arg("error_rate") = 0.01, "Writes a seeded corpus and returns its manifest.");

  m.def(
      "anomaly",
      [](const fs::path& csv, const std::vector<std::string>& fields, double threshold) {
        auto t = ml::DataTable::read_csv(csv);
        py::list out;
        for (const auto& r : ml::anomaly_detect(t, fields, threshold)) {
          py::dict d;
          d["row"] = r.row;
          d["cells"] = r.cells;
          d["probability"] = r.probability;
          d["probable_cause"] = r.probable_cause;
          d["is_outlier"] = r.is_outlier == 1;
          out.append(d);
        }
        return out;
      },
      py::arg("csv"), py::arg("fields"), py::arg("threshold") = ml::kDefaultOutlierThreshold);

  py::class_<service::Service>(m, "Service")
      .def(py::init([](const fs::path& data_dir, const fs::path& state_dir, std::optional<fs::path> lookup) {
             auto c = service::default_config();
             c.data_dir = data_dir;
             c.state_dir = state_dir;
             c.lookup = lookup;
             return std::make_unique<service::Service>(c);
           }),
           py::arg("data_dir"), py::arg("state_dir"), py::arg("lookup") = std::nullopt)
      .def("ingest", &service::Service::ingest, py::arg("paths"), py::arg("sourcetype") = std::nullopt,
           py::call_guard<py::gil_scoped_release>())
      .def(
          "search",
          [](const service::Service& s, const std::string& q, std::optional<Timestamp> earliest,
             std::optional<Timestamp> latest, bool profile) {
            nlohmann::json j;
            {
              py::gil_scoped_release release;
              j = s.search_json(service::SearchRequest{q, earliest, latest, profile});
            }
            return to_py(j);
          },
          py::arg("query"), py::arg("earliest") = std::nullopt, py::arg("latest") = std::nullopt,
          py::arg("profile") = false)
      .def("findings",
           [](const service::Service& s) {
             auto r = s.findings();
             nlohmann::json arr = nlohmann::json::array();
             for (const auto& f : r.findings) arr.push_back(security::to_json(f));
             return to_py({{"findings", arr}, {"by_rule", query::to_json(r.by_rule)}, {"unresolved", r.unresolved}});
           })
      .def("kpi", [](const service::Service& s) { return to_py(s.kpi().to_json()); })
      .def("render_dashboard", [](const service::Service& s, const std::string& id) -> py::object {
        auto out = s.render_dashboard(id);
        return out ? to_py(*out) : py::none();
      });
}
