#include <optional>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vcl/experiments.hpp"
#include "vcl/gmm.hpp"
#include "vcl/moments.hpp"
#include "vcl/regularizer.hpp"

namespace py = pybind11;
using namespace vcl;

PYBIND11_MODULE(_vcl_lab, m) {
  m.doc() = "Variance constancy loss lab";

  py::class_<stats::SampleMoments>(m, "SampleMoments")
      .def_readonly("n", &stats::SampleMoments::n)
      .def_readonly("mean", &stats::SampleMoments::mean)
      .def_readonly("var_unbiased", &stats::SampleMoments::var_unbiased)
      .def_readonly("var_biased", &stats::SampleMoments::var_biased)
      .def_readonly("m4_central", &stats::SampleMoments::m4_central)
      .def_readonly("kurtosis", &stats::SampleMoments::kurtosis);

  m.def("compute_moments", [](const std::vector<double>& x) { return stats::compute_moments(x); }, py::arg("sample"));
  m.def("var_of_sample_variance", &stats::var_of_sample_variance, py::arg("m4"), py::arg("sigma2"), py::arg("n"));
  m.def("chebyshev_bound_rhs", &stats::chebyshev_bound_rhs, py::arg("kappa"), py::arg("n"), py::arg("eps"));
  m.def("batchnorm_stability_bound", &stats::batchnorm_stability_bound, py::arg("kappa"), py::arg("n"),
        py::arg("eps"));
  m.def("population_vcl", &loss::population_vcl, py::arg("kappa"), py::arg("n"));
  m.def(
      "mc_var_of_sample_variance",
      [](const std::string& dist, int n, std::size_t trials, std::uint64_t seed) {
        const auto s = stats::make_sampler(dist, 1.0);
        py::gil_scoped_release release;
        return stats::mc_var_of_sample_variance(*s, n, trials, {seed, 0});
      },
      py::arg("dist"), py::arg("n"), py::arg("trials"), py::arg("seed") = 0);

  py::class_<gmm::Gmm2>(m, "Gmm2")
      .def(py::init<>())
      .def_static("isotropic", &gmm::Gmm2::isotropic, py::arg("p"), py::arg("separation"), py::arg("dim") = 2)
      .def_readwrite("p", &gmm::Gmm2::p)
      .def_readwrite("mu1", &gmm::Gmm2::mu1)
      .def_readwrite("mu2", &gmm::Gmm2::mu2)
      .def_readwrite("sigma1", &gmm::Gmm2::sigma1)
      .def_readwrite("sigma2", &gmm::Gmm2::sigma2)
      .def("validate", &gmm::Gmm2::validate);

  m.def("projection_kurtosis", &gmm::projection_kurtosis, py::arg("gmm"), py::arg("theta"));
  m.def("projection_kurtosis_exact", &gmm::projection_kurtosis_exact, py::arg("gmm"), py::arg("theta"));
  m.def("phase_regime", [](double p) { return gmm::to_string(gmm::phase_regime(p)); }, py::arg("p"));
  m.def("axial_angle_deg", &gmm::axial_angle_deg, py::arg("a"), py::arg("b"));

  py::register_exception<lab::ConfigError>(m, "ConfigError", PyExc_ValueError);
  m.def("command_names", &lab::command_names);
  m.def("default_config", &lab::default_config, py::arg("command"));
  m.def(
      "run_command",
      [](const std::string& command, const std::string& config, const std::string& out_dir,
         std::optional<std::uint64_t> seed) {
        lab::CommandResult r;
        {
          py::gil_scoped_release release;
          r = lab::run_command(command, config, out_dir, seed);
        }
        return py::make_tuple(r.exit_code, r.report_json, r.summary);
      },
      py::arg("command"), py::arg("config") = "", py::arg("out_dir") = "vcl_out", py::arg("seed") = py::none());
}
