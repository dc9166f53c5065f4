#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bhkle/config.hpp"
#include "bhkle/curves.hpp"
#include "bhkle/errors.hpp"
#include "bhkle/inversion.hpp"
#include "bhkle/kle.hpp"
#include "bhkle/magnetostatics.hpp"
#include "bhkle/mesh.hpp"
#include "bhkle/pipeline.hpp"
#include "bhkle/swarm.hpp"

namespace py = pybind11;
using namespace bhkle;

namespace {

MaterialModel model_from_tables(const std::vector<PermeameterTable>& tables, std::size_t grid_points,
                                std::size_t modes, double alpha) {
    std::vector<MonotoneCurve> curves;
    for (const auto& t : tables) curves.push_back(fit_monotone_spline(t, alpha));
    const auto stats = estimate_statistics(curves, grid_points);
    const auto pairs = solve_eigenproblem(stats, modes);
    ModelOptions options;
    options.alpha = alpha;
    return build_model(stats, pairs, modes, curves, options);
}

std::vector<double> spectrum(const std::vector<PermeameterTable>& tables, std::size_t grid_points,
                             std::size_t count) {
    std::vector<MonotoneCurve> curves;
    for (const auto& t : tables) curves.push_back(fit_monotone_spline(t));
    const auto stats = estimate_statistics(curves, grid_points);
    std::vector<double> out;
    for (const auto& p : solve_eigenproblem(stats, count)) out.push_back(p.value);
    return out;
}

// B_y at the given points for each current, for material parameters y.
Eigen::MatrixXd gap_field(const MaterialModel& model, const std::vector<double>& y,
                          const std::vector<double>& currents, const std::vector<std::pair<double, double>>& xy,
                          const DipoleGeometry& geometry, int refinement) {
    auto mesh = std::make_shared<const Mesh>(generate_dipole_mesh(geometry, refinement));
    auto problem = std::make_shared<const MagnetostaticProblem>(mesh, geometry.turns);
    std::vector<Point> points;
    for (const auto& [x, yy] : xy) points.push_back({x, yy});
    ForwardModel forward(problem, std::make_shared<const MaterialModel>(model), currents, points);
    return forward.simulate(y);
}

} // namespace

PYBIND11_MODULE(_bhkle, m) {
    m.doc() = "Stochastic B(H) curve model and magnetostatic parameter identification";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    py::class_<PermeameterTable>(m, "PermeameterTable")
        .def_readonly("specimen_id", &PermeameterTable::specimen_id)
        .def_property_readonly("b", [](const PermeameterTable& t) {
            std::vector<double> v;
            for (const auto& s : t.samples) v.push_back(s.b);
            return v;
        })
        .def_property_readonly("h", [](const PermeameterTable& t) {
            std::vector<double> v;
            for (const auto& s : t.samples) v.push_back(s.h);
            return v;
        });

    m.def("synth_ensemble",
          [](std::uint64_t seed, std::size_t k, std::size_t l, double b_max) {
              return synth_ensemble(seed, k, l, b_max);
          },
          py::arg("seed") = 7, py::arg("specimens") = 26, py::arg("points") = 28, py::arg("b_max") = 2.0);

    py::class_<MonotoneCurve>(m, "MonotoneCurve")
        .def("__call__", [](const MonotoneCurve& c, double s) { return c.evaluate(s); })
        .def("derivative", [](const MonotoneCurve& c, double s) { return c.derivative(s); })
        .def_property_readonly("extrapolation_slope", &MonotoneCurve::extrapolation_slope);
    m.def("fit_monotone_spline",
          [](const std::vector<double>& b, const std::vector<double>& h, double floor) {
              return fit_monotone_spline(b, h, floor);
          },
          py::arg("b"), py::arg("h"), py::arg("slope_floor") = kDefaultSlopeFloor);

    py::class_<MaterialModel>(m, "MaterialModel")
        .def_property_readonly("dimension", &MaterialModel::dimension)
        .def_property_readonly("b_max", &MaterialModel::b_max)
        .def_property_readonly("eigenvalues", [](const MaterialModel& mm) {
            return std::vector<double>(mm.eigenvalues().begin(), mm.eigenvalues().end());
        })
        .def_property_readonly("y_min", &MaterialModel::y_min)
        .def_property_readonly("y_max", &MaterialModel::y_max)
        .def_property_readonly("y_mean", &MaterialModel::y_mean)
        .def("evaluate", [](const MaterialModel& mm, const std::vector<double>& y, double s) {
            return mm.evaluate(y, s);
        })
        .def("to_json", [](const MaterialModel& mm) { return model_to_json(mm); });
    m.def("model_from_json", &model_from_json);
    m.def("build_model", &model_from_tables, py::arg("tables"), py::arg("grid_points") = 200,
          py::arg("modes") = 4, py::arg("alpha") = 1.0);
    m.def("spectrum", &spectrum, py::arg("tables"), py::arg("grid_points") = 200, py::arg("count") = 10);

    py::class_<DipoleGeometry>(m, "DipoleGeometry")
        .def(py::init<>())
        .def_readwrite("gap_height", &DipoleGeometry::gap_height)
        .def_readwrite("pole_width", &DipoleGeometry::pole_width)
        .def_readwrite("turns", &DipoleGeometry::turns)
        .def_readwrite("fine_size", &DipoleGeometry::fine_size)
        .def_readwrite("coarse_size", &DipoleGeometry::coarse_size);
    m.def("gap_field", &gap_field, py::arg("model"), py::arg("y"), py::arg("currents"), py::arg("points"),
          py::arg("geometry") = DipoleGeometry{}, py::arg("refinement") = 0);

    m.def("minimize_swarm",
          [](const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& lo,
             const Eigen::VectorXd& hi, std::size_t swarm, int iterations, std::uint64_t seed) {
              SwarmOptions o;
              o.swarm_size = swarm;
              o.iterations = iterations;
              o.seed = seed;
              o.stall_window = 0;
              const auto r = minimize_swarm(f, lo, hi, o);
              return py::make_tuple(r.best, r.best_value, r.history);
          },
          py::arg("objective"), py::arg("lower"), py::arg("upper"), py::arg("swarm_size") = 24,
          py::arg("iterations") = 60, py::arg("seed") = 1);

    m.def("default_config", [] { return serialize_config(RunConfig{}); });
    m.def("normalize_config", [](const std::string& text) { return serialize_config(parse_config(text)); });
}
