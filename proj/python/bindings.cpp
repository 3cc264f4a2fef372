#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

#include "mrreparam/eval.hpp"
#include "mrreparam/io.hpp"
#include "mrreparam/model/paramnet.hpp"
#include "mrreparam/phantom.hpp"
#include "mrreparam/sim.hpp"
#include "mrreparam/train.hpp"

namespace py = pybind11;
using namespace mrreparam;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

ScanParams params(py::tuple t) { return {t[0].cast<double>(), t[1].cast<double>()}; }
py::tuple params_tuple(ScanParams p) { return py::make_tuple(p.te_s, p.tr_s); }

/// Autoencoder and Param-Net loaded together for inference.
struct Predictor {
  model::Autoencoder ae;
  model::ParamNet pn;

  Array predict(const Array& image, py::tuple params_in, py::tuple params_out, bool lenient) {
    return to_array(train::predict(ae, pn, to_tensor(image), params(params_in), params(params_out), lenient));
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "MR image re-parameterization: simulator, models and metrics";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
  auto config_error = py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ModeMismatch>(m, "ModeMismatch", config_error.ptr());
  auto format_error = py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<CorruptionError>(m, "CorruptionError", format_error.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.attr("DEFAULT_PARAMS") = params_tuple(kDefaultParams);
  m.attr("TE_RANGE") = py::make_tuple(kTeMin, kTeMax);
  m.attr("TR_RANGE") = py::make_tuple(kTrMin, kTrMax);

  m.def("spin_echo_signal", &sim::spin_echo_signal, py::arg("pd"), py::arg("t1"), py::arg("t2"), py::arg("te"),
        py::arg("tr"));
  m.def(
      "simulate_image",
      [](const Array& t1, const Array& t2, const Array& pd, py::tuple p) {
        return to_array(sim::simulate_image(to_tensor(t1), to_tensor(t2), to_tensor(pd), params(p)));
      },
      py::arg("t1"), py::arg("t2"), py::arg("pd"), py::arg("params"));
  m.def(
      "sample_param_pairs",
      [](std::uint64_t seed, std::size_t n) {
        std::vector<py::tuple> out;
        for (const auto& p : sim::sample_param_pairs(seed, n)) out.push_back(params_tuple(p));
        return out;
      },
      py::arg("seed"), py::arg("n") = 200);
  m.def(
      "phantom_slices",
      [](std::uint64_t seed, std::int64_t count, const std::string& family) {
        const auto vol = phantom::generate_phantom(seed, {}, phantom::parse_family(family));
        py::list out;
        for (const auto& s : phantom::extract_axial_slices(vol, count)) {
          py::dict d;
          d["index"] = s.index;
          d["t1"] = to_array(s.t1);
          d["t2"] = to_array(s.t2);
          d["pd"] = to_array(s.pd);
          out.append(d);
        }
        return out;
      },
      py::arg("seed"), py::arg("count") = 24, py::arg("family") = "standard");
  m.def(
      "resize_bilinear", [](const Array& a, std::int64_t size) { return to_array(phantom::resize_bilinear(to_tensor(a), size)); },
      py::arg("image"), py::arg("size"));
  m.def(
      "build_dataset",
      [](const std::filesystem::path& out, const std::string& mode, std::int64_t pairs, std::int64_t slices,
         std::int64_t resolution, std::int64_t phantoms, std::uint64_t seed, const std::string& family, int workers) {
        sim::DatasetConfig c;
        c.mode = parse_mode(mode);
        c.pairs = pairs;
        c.slices_per_pair = slices;
        c.resolution = resolution;
        c.seed = seed;
        c.family = family;
        c.workers = workers;
        const auto volumes = sim::make_phantoms(phantoms, seed, phantom::parse_family(family));
        return sim::build_dataset(volumes, c, out).samples.size();
      },
      py::arg("out"), py::arg("mode") = "d2p", py::arg("pairs") = 200, py::arg("slices") = 24,
      py::arg("resolution") = 256, py::arg("phantoms") = 8, py::arg("seed") = 0, py::arg("family") = "standard",
      py::arg("workers") = 1);

  m.def(
      "read_slice",
      [](const std::filesystem::path& p) {
        const auto s = io::read_slice(p);
        return py::make_tuple(to_array(s.pixels), params_tuple(s.params));
      },
      py::arg("path"));
  m.def(
      "write_slice", [](const std::filesystem::path& p, const Array& image, py::tuple prm) {
        io::write_slice(p, to_tensor(image), params(prm));
      },
      py::arg("path"), py::arg("image"), py::arg("params"));

  m.def(
      "normalize_params", [](py::tuple p, bool lenient) { return model::normalize_params(params(p), lenient); },
      py::arg("params"), py::arg("lenient") = false);
  m.def(
      "psnr", [](const Array& a, const Array& b) { return eval::psnr(to_tensor(a), to_tensor(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "mae", [](const Array& a, const Array& b) { return eval::mae(to_tensor(a), to_tensor(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "to_display_units", [](const Array& a) { return to_array(eval::to_display_units(to_tensor(a))); },
      py::arg("image"));
  m.def(
      "evaluate",
      [](const std::filesystem::path& ae, const std::filesystem::path& pn, const std::filesystem::path& manifest,
         const std::string& testset, int workers) {
        return eval::to_json(eval::evaluate(ae, pn, manifest, testset, workers)).dump();
      },
      py::arg("ae"), py::arg("pn"), py::arg("manifest"), py::arg("testset") = "test", py::arg("workers") = 1,
      "Scores a Param-Net checkpoint; returns the report as a JSON string.");

  py::class_<Predictor>(m, "Predictor")
      .def(py::init([](const std::filesystem::path& ae, const std::filesystem::path& pn) {
             return Predictor{model::autoencoder_from_checkpoint(io::load_checkpoint(ae)),
                              model::paramnet_from_checkpoint(io::load_checkpoint(pn))};
           }),
           py::arg("ae"), py::arg("pn"))
      .def_property_readonly("mode", [](const Predictor& p) { return to_string(p.pn.config().mode); })
      .def_property_readonly("resolution", [](const Predictor& p) { return p.ae.config().input_resolution(); })
      .def("predict", &Predictor::predict, py::arg("image"), py::arg("params_in"), py::arg("params_out"),
           py::arg("lenient") = false);
}
