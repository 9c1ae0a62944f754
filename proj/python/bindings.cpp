#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ltgan/config.hpp"
#include "ltgan/serve.hpp"
#include "ltgan/trainer.hpp"

namespace py = pybind11;
using namespace ltgan;

namespace {

Tensor codes_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& z, std::size_t latent_dim) {
  if (z.ndim() != 2 || static_cast<std::size_t>(z.shape(1)) != latent_dim) {
    throw std::invalid_argument("latent codes must have shape (n, " + std::to_string(latent_dim) + ")");
  }
  const auto n = static_cast<std::size_t>(z.shape(0));
  return Tensor({n, latent_dim}, std::vector<double>(z.data(), z.data() + n * latent_dim));
}

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::array_t<double> generate(const nn::Generator& g, const py::array_t<double, py::array::c_style | py::array::forcecast>& z,
                             const std::vector<std::size_t>& classes) {
  const Tensor codes = codes_from(z, g.spec().latent_dim);
  Tensor images;
  {
    py::gil_scoped_release release;
    images = g.forward(codes, classes);
  }
  return to_numpy(images);
}

py::dict report_dict(const obj::LossReport& r) {
  py::dict d;
  auto put = [&](const char* name, const std::optional<double>& v) {
    if (v) d[name] = *v;
  };
  put("l_d", r.l_d);
  put("l_g_adv", r.l_g_adv);
  put("l_a", r.l_a);
  put("total_g", r.total_g);
  put("l_rot", r.l_rot);
  put("aux_accuracy", r.aux_accuracy);
  return d;
}

}  // namespace

PYBIND11_MODULE(_ltgan, m) {
  m.doc() = "Latent-transformation GAN training, evaluation and serving";

  py::register_exception<ConfigKeyError>(m, "ConfigKeyError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<TrainError>(m, "TrainError", PyExc_RuntimeError);

  py::class_<RunConfig>(m, "Config")
      .def(py::init([](const std::string& text, const std::map<std::string, std::string>& overrides) {
             return load_config(text, overrides);
           }),
           py::arg("text") = "", py::arg("overrides") = std::map<std::string, std::string>{})
      .def_static("preset", &RunConfig::preset, py::arg("kind"))
      .def_static("keys", &RunConfig::keys)
      .def("get", &RunConfig::get)
      .def("set",
           [](RunConfig& c, const std::string& key, const std::string& value) {
             c.set(key, value);
             c.validate();
           })
      .def("canonical", &RunConfig::canonical)
      .def("__repr__", [](const RunConfig& c) { return "<ltgan.Config data.kind=" + c.data.kind + ">"; });

  py::class_<Trainer>(m, "Trainer")
      .def(py::init<RunConfig>(), py::arg("config"))
      .def("step",
           [](Trainer& t) {
             obj::LossReport r;
             {
               py::gil_scoped_release release;
               r = t.step();
             }
             return report_dict(r);
           })
      .def("train", &Trainer::train, py::arg("checkpoint_path") = "", py::call_guard<py::gil_scoped_release>())
      .def_property_readonly("current_step", &Trainer::current_step)
      .def_property_readonly("config", [](const Trainer& t) { return t.config(); })
      .def("metrics_csv", [](const Trainer& t) { return t.log().text(); })
      .def("last_metric", [](const Trainer& t, const std::string& name) { return t.log().last(name); })
      .def("generate", [](const Trainer& t, const py::array_t<double, py::array::c_style | py::array::forcecast>& z,
                          const std::vector<std::size_t>& classes) { return generate(t.generator(), z, classes); },
           py::arg("z"), py::arg("classes") = std::vector<std::size_t>{})
      .def("save_checkpoint", &Trainer::save_checkpoint)
      .def("checkpoint_bytes",
           [](const Trainer& t) {
             const auto b = t.encode_checkpoint();
             return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
           })
      .def_static("load_checkpoint", &Trainer::load_checkpoint);

  py::class_<ModelSnapshot>(m, "Model")
      .def_static("load", &load_snapshot, py::arg("path"))
      .def_property_readonly("step", [](const ModelSnapshot& s) { return s.step; })
      .def_property_readonly("config", [](const ModelSnapshot& s) { return s.config; })
      .def_property_readonly("latent_dim", [](const ModelSnapshot& s) { return s.generator.spec().latent_dim; })
      .def_property_readonly("digest", [](const ModelSnapshot& s) { return s.digest; })
      .def("generate", [](const ModelSnapshot& s, const py::array_t<double, py::array::c_style | py::array::forcecast>& z,
                          const std::vector<std::size_t>& classes) { return generate(s.generator, z, classes); },
           py::arg("z"), py::arg("classes") = std::vector<std::size_t>{});

  py::class_<serve::Service>(m, "Service")
      .def(py::init([](const std::string& checkpoint, const std::string& directions) {
             return std::make_unique<serve::Service>(serve::Session::load(checkpoint, directions));
           }),
           py::arg("checkpoint"), py::arg("directions") = "")
      .def(
          "handle",
          [](const serve::Service& s, const std::string& method, const std::string& path, const std::string& body) {
            const auto r = s.handle(method, path, body);
            return py::make_tuple(r.status, r.body);
          },
          py::arg("method"), py::arg("path"), py::arg("body") = "");
}
