// Python bindings: degradation, baselines, metrics, corpus generation, sampling, self checks.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ckm/bench.hpp"
#include "ckm/envgen.hpp"
#include "ckm/io.hpp"
#include "ckm/metrics.hpp"
#include "ckm/model.hpp"
#include "ckm/selftest.hpp"

namespace py = pybind11;
using namespace ckm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  Image im(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), im.data.begin());
  return im;
}

Array to_array(const Image& im) {
  Array a({im.rows, im.cols});
  std::copy(im.data.begin(), im.data.end(), a.mutable_data());
  return a;
}

std::vector<Image> to_batch(const std::vector<Array>& v) {
  std::vector<Image> out;
  for (const auto& a : v) out.push_back(to_image(a));
  return out;
}

ValueMap value_map(const std::string& name) {
  if (name == "radiomapseer") return kRadioMapSeerMap;
  if (name == "ckmimagenet") return kCkmImageNetMap;
  throw UnsupportedError("unknown value map '" + name + "' (radiomapseer, ckmimagenet)");
}

Observation degrade(const Array& x, const std::string& task, double noise_std, double mask_frac, int factor,
                    std::uint64_t seed) {
  const Image im = to_image(x);
  Rng rng(seed);
  DegradationSpec spec;
  switch (parse_task(task)) {
    case Task::Denoise: spec = DegradationSpec::denoise(noise_std, seed); break;
    case Task::Inpaint: spec = DegradationSpec::inpaint(random_rect_mask(im.rows, im.cols, mask_frac, rng), noise_std, seed); break;
    case Task::SuperRes: spec = DegradationSpec::super_res(factor, noise_std, seed); break;
    case Task::Generate: spec = DegradationSpec::generate(seed); break;
  }
  return apply_degradation(im, spec, rng);
}

}  // namespace

PYBIND11_MODULE(_ckmforge, m) {
  m.doc() = "Channel knowledge map construction: degradations, baselines, metrics and a diffusion sampler";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<RangeError>(m, "RangeError", PyExc_ValueError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
  py::register_exception<UnsupportedError>(m, "UnsupportedError", PyExc_ValueError);
  py::register_exception<CapacityError>(m, "CapacityError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<Observation>(m, "Observation")
      .def_property_readonly("task", [](const Observation& o) { return task_name(o.spec.kind); })
      .def_property_readonly("values", [](const Observation& o) { return o.values; })
      .def_property_readonly("shape", [](const Observation& o) { return py::make_tuple(o.rows, o.cols); })
      .def_property_readonly("noise_std", [](const Observation& o) { return o.spec.noise_std; })
      .def_property_readonly("factor", [](const Observation& o) { return o.spec.factor; })
      .def_property_readonly("observed",
                             [](const Observation& o) -> py::object {
                               if (o.spec.kind != Task::Inpaint) return py::none();
                               py::array_t<std::uint8_t> a({o.rows, o.cols});
                               std::copy(o.spec.observed.data.begin(), o.spec.observed.data.end(), a.mutable_data());
                               return a;
                             })
      .def("zero_filled", [](const Observation& o) { return to_array(pad_observation(o)); },
           "A^T y on the source grid (not for super-resolution)")
      .def("save", [](const Observation& o, const std::filesystem::path& p) { io::write_observation(p, o); })
      .def_static("load", [](const std::filesystem::path& p) { return io::read_observation(p); });

  m.def("degrade", &degrade, py::arg("x"), py::arg("task"), py::arg("noise_std") = 30.0 / 255.0,
        py::arg("mask_frac") = 0.25, py::arg("factor") = 4, py::arg("seed") = 0,
        "y = A x + n for task in {denoise, inpaint, sr, generate}");

  m.def("methods", &bench::method_names);
  m.def(
      "reconstruct",
      [](const std::string& method, const Observation& obs, const std::string& map, std::optional<std::pair<int, int>> tx,
         std::optional<py::array_t<std::uint8_t>> buildings) {
        bench::Context ctx;
        ctx.map = value_map(map);
        if (tx) ctx.tx = envgen::Cell{tx->first, tx->second};
        Mask b;
        if (buildings) {
          b = Mask(static_cast<int>(buildings->shape(0)), static_cast<int>(buildings->shape(1)));
          std::copy(buildings->data(), buildings->data() + buildings->size(), b.data.begin());
          ctx.buildings = &b;
        }
        return to_array(bench::reconstruct(method, obs, ctx));
      },
      py::arg("method"), py::arg("obs"), py::arg("value_map") = "radiomapseer", py::arg("tx") = std::nullopt,
      py::arg("buildings") = std::nullopt, "Classical reconstruction (gaussian-* and ckmdiff need extra state)");

  m.def(
      "evaluate",
      [](const std::vector<Array>& truth, const std::vector<Array>& recon, const std::string& map, bool exclude_buildings) {
        metrics::MetricOptions o;
        o.exclude_buildings = exclude_buildings;
        const auto r = metrics::evaluate(to_batch(truth), to_batch(recon), value_map(map), o);
        py::dict d;
        d["mse_pixel"] = r.mse_pixel;
        d["rmse"] = r.rmse;
        d["nmse"] = r.nmse;
        d["mse_gain"] = r.mse_gain;
        d["psnr_db"] = r.psnr;
        d["ssim"] = r.ssim;
        d["fd"] = r.n_images >= 2 ? py::object(py::float_(r.fd)) : py::object(py::none());
        d["n_images"] = r.n_images;
        d["flags"] = r.flags;
        return d;
      },
      py::arg("truth"), py::arg("recon"), py::arg("value_map") = "radiomapseer", py::arg("exclude_buildings") = false);

  m.def(
      "generate_corpus",
      [](const std::filesystem::path& out, int n_maps, int size, std::uint64_t seed, double train_fraction) {
        envgen::DatasetOptions o;
        o.n_maps = n_maps;
        o.corpus_seed = seed;
        o.train_fraction = train_fraction;
        o.env.rows = o.env.cols = size;
        const auto man = envgen::build_dataset(o, out);
        return std::to_string(envgen::corpus_hash(man));
      },
      py::arg("out"), py::arg("n_maps") = 100, py::arg("size") = 32, py::arg("seed") = 1, py::arg("train_fraction") = 0.9,
      "Write a synthetic corpus and manifest.json; returns the corpus hash");
  m.def(
      "load_split",
      [](const std::filesystem::path& manifest, const std::string& split) {
        std::vector<Array> out;
        for (const auto& im : bench::load_images(envgen::read_manifest(manifest), split)) out.push_back(to_array(im));
        return out;
      },
      py::arg("manifest"), py::arg("split") = "test");

  m.def(
      "sample",
      [](const std::filesystem::path& checkpoint, const std::vector<Observation>& obs, std::uint64_t seed, int steps) {
        const auto mdl = model::load_checkpoint(checkpoint);
        std::vector<Array> out;
        for (const auto& im : bench::ckmdiff_reconstruct(mdl, obs, seed, steps)) out.push_back(to_array(im));
        return out;
      },
      py::arg("checkpoint"), py::arg("obs"), py::arg("seed") = 0, py::arg("steps") = 50,
      "CKMDiff reconstructions of a list of observations");

  m.def("selftest", [] {
    std::vector<py::tuple> out;
    for (const auto& c : selftest::run_all()) out.push_back(py::make_tuple(c.name, c.pass, c.detail, c.seconds));
    return out;
  });
}
