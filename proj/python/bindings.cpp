// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <map>

#include "mvp/bench.hpp"
#include "mvp/embedstore.hpp"
#include "mvp/error.hpp"
#include "mvp/io.hpp"
#include "mvp/templates.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace mvp;

namespace {

template <typename T>
py::array_t<T> to_numpy(const core::Tensor2D<T>& t) {
  py::array_t<T> out({t.rows(), t.cols()});
  std::memcpy(out.mutable_data(), t.data(), t.size() * sizeof(T));
  return out;
}

template <typename T>
core::Tensor2D<T> from_numpy(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
  core::Tensor2D<T> t(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::memcpy(t.data(), a.data(), t.size() * sizeof(T));
  return t;
}

py::dict record_dict(const bench::TemplateRecord& r) {
  py::dict d;
  d["id"] = r.id;
  d["text"] = r.text;
  d["eval_type"] = std::string(bench::to_string(r.eval_type));
  d["subtype"] = r.subtype;
  d["train_type"] = std::string(bench::to_string(r.train_type));
  d["split"] = std::string(bench::to_string(r.split));
  return d;
}

py::dict report_dict(const bench::PrsReport& r) {
  py::dict types;
  for (const auto& t : r.types) types[py::str(std::string(bench::to_string(t.type)))] = t.prs;
  py::dict d;
  d["model"] = r.meta.model;
  d["template_set_hash"] = r.meta.template_set_hash;
  d["prs"] = types;
  d["prs_avg"] = r.prs_avg;
  d["mean_accuracy"] = r.mean_accuracy;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Prompt-robustness engine bindings";

  // Leaked on purpose: the type must outlive any pending exception.
  static PyObject* mvp_error = PyErr_NewException("mvp_robust._core.MvpError", PyExc_ValueError, nullptr);
  m.attr("MvpError") = py::handle(mvp_error);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::handle(mvp_error)(std::string(to_string(e.code())) + ": " + e.what());
      exc.attr("code") = to_string(e.code());
      PyErr_SetObject(mvp_error, exc.ptr());
    }
  });

  m.def("compute_prs", [](const std::vector<double>& s) { return bench::compute_prs(s); }, py::arg("scores"));
  m.def(
      "prs_avg",
      [](const std::map<std::string, double>& per_type) {
        std::map<bench::EvalType, double> typed;
        for (const auto& [k, v] : per_type) typed[bench::parse_eval_type(k)] = v;
        return bench::build_report(typed, {}).prs_avg;
      },
      py::arg("per_type"));

  m.def("render_prompt", py::overload_cast<std::string_view, std::string_view>(&bench::render_prompt),
        py::arg("text"), py::arg("class_name"));
  m.def("decouple_template", py::overload_cast<std::string_view>(&bench::decouple_template), py::arg("text"));
  m.def(
      "load_template_set",
      [](const fs::path& path) {
        const auto set = bench::load_template_set(path);
        py::list recs;
        for (const auto& r : set.records) recs.append(record_dict(r));
        py::dict d;
        d["name"] = set.name;
        d["hash"] = set.hash;
        d["templates"] = recs;
        return d;
      },
      py::arg("path"));

  m.def("crc32_hex", [](py::bytes b) { return io::hex32(io::crc32(std::string(b))); }, py::arg("data"));

  m.def(
      "read_store",
      [](const fs::path& path) -> py::object {
        const auto mat = store::read_store(path);
        if (mat.dtype() == store::DType::f64) return to_numpy(mat.f64());
        return to_numpy(mat.f32());
      },
      py::arg("path"));
  m.def(
      "write_store",
      [](const fs::path& path, const py::array& a) {
        if (a.dtype().is(py::dtype::of<double>())) {
          store::write_store(store::EmbeddingMatrix(from_numpy<double>(a)), path);
        } else {
          store::write_store(store::EmbeddingMatrix(from_numpy<float>(a)), path);
        }
      },
      py::arg("path"), py::arg("array"));
  m.def(
      "inspect_store",
      [](const fs::path& path) {
        const auto info = store::inspect_store(path);
        py::dict d;
        d["rows"] = info.header.rows;
        d["dim"] = info.header.dim;
        d["dtype"] = std::string(store::to_string(info.header.dtype));
        d["checksum"] = io::hex32(info.header.checksum);
        d["checksum_ok"] = info.checksum_ok;
        return d;
      },
      py::arg("path"));

  m.def(
      "synth",
      [](const fs::path& out_dir, std::size_t classes, std::size_t dim, std::size_t templates, double sensitivity,
         double noise, std::uint64_t seed) {
        store::SynthSpec spec;
        spec.n_classes = classes;
        spec.dim = dim;
        spec.n_templates = templates;
        spec.sensitivity = sensitivity;
        spec.noise_sigma = noise;
        spec.seed = seed;
        spec.validate();
        const auto b = store::gen_synthetic_benchmark(spec, bench::make_synthetic_taxonomy(templates));
        return store::save_benchmark(b, out_dir);
      },
      py::arg("out_dir"), py::arg("classes") = 10, py::arg("dim") = 64, py::arg("templates") = 200,
      py::arg("sensitivity") = 1.0, py::arg("noise") = 0.05, py::arg("seed") = 7);

  m.def(
      "load_benchmark",
      [](const fs::path& manifest) {
        const auto b = store::load_benchmark(manifest);
        py::dict d;
        d["dataset"] = b.dataset;
        d["num_classes"] = b.num_classes();
        d["dim"] = b.text_dim();
        d["template_set_hash"] = b.templates.hash;
        d["num_templates"] = b.templates.size();
        d["train_images"] = b.train.labels.size();
        d["test_images"] = b.test.labels.size();
        return d;
      },
      py::arg("manifest"));

  m.def(
      "zero_shot_report",
      [](const fs::path& manifest) {
        const auto b = store::load_benchmark(manifest);
        bench::ZeroShotEvaluator ev(b);
        return report_dict(bench::run_benchmark(ev, b, {b.dataset, "zero-shot", 0, b.templates.hash}));
      },
      py::arg("manifest"));
}
