#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cli.hpp"
#include "eyedex/checkpoint.hpp"
#include "eyedex/errors.hpp"
#include "eyedex/evaluation.hpp"
#include "eyedex/explain.hpp"
#include "eyedex/synthetic.hpp"
#include "eyedex/training.hpp"

namespace py = pybind11;
using namespace eyedex;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a, DType dtype) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  std::vector<double> values(a.data(), a.data() + a.size());
  return Tensor::from_values(shape, values, dtype);
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  const auto v = t.to_vector();
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Array to_array(const std::vector<double>& v, std::size_t h, std::size_t w) {
  Array out({static_cast<py::ssize_t>(h), static_cast<py::ssize_t>(w)});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::dict heatmap_dict(const Heatmap& hm) {
  py::dict d;
  d["values"] = to_array(hm.values, hm.height, hm.width);
  d["layer"] = hm.source_layer;
  d["target_class"] = hm.target_class;
  d["raw_max"] = hm.raw_max;
  if (!hm.raw_cam.empty()) {
    d["raw_cam"] = to_array(hm.raw_cam, hm.grid_h, hm.grid_w);
    d["channel_weights"] = hm.channel_weights;
  }
  return d;
}

Tensor image_tensor(const Model& m, const Array& image) {
  return to_tensor(image, m.dtype());
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
  mod.doc() = "Retinal fundus classification pipeline: VGG models, training, Grad-CAM";

  py::register_exception<ConfigError>(mod, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(mod, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericError>(mod, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(mod, "IoError", PyExc_OSError);

  py::class_<Manifest>(mod, "Manifest")
      .def_property_readonly("root", [](const Manifest& m) { return m.root; })
      .def_readonly("class_names", &Manifest::class_names)
      .def_readonly("counts", &Manifest::counts)
      .def_property_readonly("seed", [](const Manifest& m) { return m.seed; })
      .def("split_counts",
           [](const Manifest& m, const std::string& split) { return m.split_counts(parse_split(split)); })
      .def("split_size",
           [](const Manifest& m, const std::string& split) { return m.split_size(parse_split(split)); })
      .def("samples", [](const Manifest& m) {
        py::list out;
        for (const auto& s : m.samples) {
          out.append(py::make_tuple(s.path, s.class_index, to_string(s.split)));
        }
        return out;
      })
      .def("__len__", [](const Manifest& m) { return m.samples.size(); });

  mod.def(
      "write_blob_dataset",
      [](const std::filesystem::path& root, std::vector<std::string> classes, std::size_t per_class,
         std::size_t size, std::uint64_t seed) {
        BlobOptions o;
        if (!classes.empty()) {
          o.class_names = std::move(classes);
        }
        o.per_class = per_class;
        o.size = size;
        o.seed = seed;
        return write_blob_dataset(root, o);
      },
      py::arg("root"), py::arg("classes") = std::vector<std::string>{}, py::arg("per_class") = 250,
      py::arg("size") = 32, py::arg("seed") = 0);
  mod.def("scan_dataset", &scan_dataset, py::arg("root"));
  mod.def(
      "stratified_split",
      [](const Manifest& m, std::uint64_t seed, double train, double val, double test) {
        return stratified_split(m, SplitFractions{train, val, test}, seed);
      },
      py::arg("manifest"), py::arg("seed"), py::arg("train") = 0.8, py::arg("val") = 0.1,
      py::arg("test") = 0.1);
  mod.def("write_manifest", &write_manifest, py::arg("manifest"), py::arg("csv_path"));
  mod.def("read_manifest", &read_manifest, py::arg("csv_path"));

  py::class_<Model>(mod, "Model")
      .def_property_readonly("num_classes", &Model::num_classes)
      .def_property_readonly("class_names", &Model::class_names)
      .def_property_readonly("variant", [](const Model& m) { return to_string(m.spec().variant); })
      .def_property_readonly("input_size", [](const Model& m) { return m.spec().input_size; })
      .def_property_readonly("dtype", [](const Model& m) { return to_string(m.dtype()); })
      .def_property_readonly("gradcam_layer", &Model::gradcam_layer)
      .def("set_class_names", &Model::set_class_names)
      .def("param_names", &Model::param_names)
      .def("trainable_params", &Model::trainable_params)
      .def("count_params", &Model::count_params, py::arg("conv_only") = false)
      .def("param", [](const Model& m, const std::string& name) { return to_array(m.param(name)); })
      .def("set_trainable", [](Model& m, std::size_t last_n) { return set_trainable(m, last_n); })
      .def("predict",
           [](const Model& m, const Array& images) { return to_array(m.predict(image_tensor(m, images))); })
      .def("logits",
           [](const Model& m, const Array& images) { return to_array(m.logits(image_tensor(m, images))); })
      .def("save", [](const Model& m, const std::filesystem::path& path) {
        save_checkpoint(m, {}, path);
      });

  mod.def(
      "build_vgg",
      [](const std::string& variant, std::size_t num_classes, std::size_t input_size,
         const std::string& dtype, std::uint64_t seed, std::size_t dense_units, double dropout) {
        HeadConfig head;
        head.dense_units = dense_units;
        head.dropout_rate = dropout;
        return build_vgg(parse_variant(variant), num_classes, head, input_size, parse_dtype(dtype),
                         seed);
      },
      py::arg("variant"), py::arg("num_classes"), py::arg("input_size") = 32,
      py::arg("dtype") = "f32", py::arg("seed") = 0, py::arg("dense_units") = 256,
      py::arg("dropout") = 0.3);
  mod.def(
      "load_checkpoint",
      [](const std::filesystem::path& path) {
        LoadedCheckpoint c = load_checkpoint(path);
        py::dict meta;
        meta["epoch"] = c.metadata.epoch;
        meta["val_metric"] = c.metadata.val_metric;
        meta["extra"] = to_py(c.metadata.extra);
        return py::make_tuple(c.model, meta);
      },
      py::arg("path"));
  mod.def("anomaly_gate", [](const std::vector<double>& probs, const std::vector<std::string>& names) {
    const GateVerdict v = anomaly_gate(probs, names);
    py::dict d;
    d["healthy"] = v.healthy;
    d["class_name"] = v.class_name;
    d["confidence"] = v.confidence;
    return d;
  });

  mod.def(
      "categorical_crossentropy",
      [](const Array& probs, const Array& onehot, const Array& weights) {
        return categorical_crossentropy(to_tensor(probs, DType::f64), to_tensor(onehot, DType::f64),
                                        to_tensor(weights, DType::f64));
      },
      py::arg("probs"), py::arg("onehot"), py::arg("weights"));
  mod.def(
      "focal_loss",
      [](const Array& probs, const Array& onehot, double gamma, double alpha, const Array& weights) {
        return focal_loss(to_tensor(probs, DType::f64), to_tensor(onehot, DType::f64), gamma, alpha,
                          to_tensor(weights, DType::f64));
      },
      py::arg("probs"), py::arg("onehot"), py::arg("gamma"), py::arg("alpha"), py::arg("weights"));
  mod.def("class_weights", &class_weights, py::arg("counts"),
          py::arg("names") = std::vector<std::string>{});

  mod.def(
      "fit",
      [](Model& model, const Manifest& manifest, const py::dict& config,
         const std::filesystem::path& checkpoint, bool augment, bool record_seconds) {
        nlohmann::json j = TrainConfig{}.to_json();
        j.update(from_py(config));
        const TrainConfig c = TrainConfig::from_json(j);
        FitOptions opts;
        opts.checkpoint_path = checkpoint;
        opts.record_seconds = record_seconds;
        if (!augment) {
          opts.augment.reset();
        }
        FitResult r = [&] {
          py::gil_scoped_release release;
          return fit(model, manifest, c, opts);
        }();
        py::list history;
        for (const auto& rec : r.state.history) {
          history.append(to_py(rec.to_json()));
        }
        return history;
      },
      py::arg("model"), py::arg("manifest"), py::arg("config") = py::dict(),
      py::arg("checkpoint"), py::arg("augment") = true, py::arg("record_seconds") = true);

  mod.def(
      "classification_report",
      [](const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels,
         std::size_t num_classes, std::vector<std::string> names) {
        return to_py(report_to_json(
            classification_report(confusion_matrix(preds, labels, num_classes, std::move(names)))));
      },
      py::arg("preds"), py::arg("labels"), py::arg("num_classes"),
      py::arg("names") = std::vector<std::string>{});
  mod.def(
      "render_report",
      [](const py::object& report, const std::string& format) {
        return render_report(report_from_json(from_py(report)), parse_report_format(format));
      },
      py::arg("report"), py::arg("format") = "text");
  mod.def("macro_average", &macro_average);

  mod.def(
      "gradcam",
      [](const Model& m, const Array& image, std::size_t target, std::optional<std::string> layer) {
        return heatmap_dict(gradcam(m, image_tensor(m, image), target, layer));
      },
      py::arg("model"), py::arg("image"), py::arg("target"), py::arg("layer") = py::none());
  mod.def(
      "occlusion_map",
      [](const Model& m, const Array& image, std::size_t target, std::size_t patch,
         std::size_t stride, double fill) {
        return heatmap_dict(occlusion_map(m, image_tensor(m, image), target,
                                          OcclusionOptions{patch, stride, fill, 64}));
      },
      py::arg("model"), py::arg("image"), py::arg("target"), py::arg("patch") = 8,
      py::arg("stride") = 4, py::arg("fill") = 0.5);
  mod.def("spearman", &spearman);

  mod.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
