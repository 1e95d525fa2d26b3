#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "misnet/app.hpp"
#include "misnet/objective.hpp"

namespace py = pybind11;
using namespace misnet;

namespace {

using Array2D = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Mask2D = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using Image = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

ProbMap to_prob(const Array2D& a) {
  if (a.ndim() != 2) throw ShapeError("prediction must be a 2-D array");
  const auto* p = a.data();
  std::vector<double> values(p, p + a.size());
  return ProbMap(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), std::move(values));
}

BinaryMask to_mask(const Mask2D& a) {
  if (a.ndim() != 2) throw ShapeError("mask must be a 2-D array");
  const auto* p = a.data();
  std::vector<std::uint8_t> values(a.size());
  for (py::ssize_t i = 0; i < a.size(); ++i) values[i] = p[i] ? 1 : 0;
  return BinaryMask(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), std::move(values));
}

py::array_t<double> to_array(const ProbMap& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

metrics::MetricOptions metric_options(const std::string& threshold_mode, const std::string& e_measure, double alpha) {
  metrics::MetricOptions o;
  o.threshold_mode = metrics::parse_threshold_mode(threshold_mode);
  if (e_measure != "fixed" && e_measure != "max") throw ConfigError("e_measure", "must be 'fixed' or 'max'");
  o.e_mode = e_measure == "max" ? metrics::EMeasureMode::kMax : metrics::EMeasureMode::kFixed;
  o.alpha = alpha;
  return o;
}

py::dict to_dict(const metrics::ImageMetrics& m) {
  py::dict d;
  d["id"] = m.id;
  d["mdice"] = m.mdice;
  d["miou"] = m.miou;
  d["wfm"] = m.wfm;
  d["sm"] = m.sm;
  d["em"] = m.em;
  d["mae"] = m.mae;
  d["flags"] = m.flags;
  return d;
}

py::dict to_dict(const metrics::MetricReport& r) {
  py::list rows;
  for (const auto& m : r.per_image) rows.append(to_dict(m));
  py::dict d;
  d["dataset"] = r.dataset_id;
  d["images"] = rows;
  d["mean"] = to_dict(r.mean);
  return d;
}

py::dict to_dict(const TrainResult& r) {
  py::dict d;
  d["epochs_completed"] = r.epochs_completed;
  d["steps"] = r.steps;
  d["initial_loss"] = r.initial_loss;
  d["final_loss"] = r.final_loss;
  d["best_val_mdice"] = r.best_val_mdice;
  d["run_dir"] = r.run_dir;
  return d;
}

std::vector<std::string> stems(const std::vector<data::SamplePair>& pairs) {
  std::vector<std::string> out;
  for (const auto& p : pairs) out.push_back(p.stem);
  return out;
}

// Inference handle around a loaded network.
struct Model {
  MisNet net;
  std::string config_text;

  py::array_t<double> predict(const Image& rgb) {
    if (rgb.ndim() != 3 || rgb.shape(2) != 3) throw ShapeError("image must be an HxWx3 uint8 array");
    cv::Mat view(static_cast<int>(rgb.shape(0)), static_cast<int>(rgb.shape(1)), CV_8UC3,
                 const_cast<std::uint8_t*>(rgb.data()));
    const cv::Mat image = view.clone();
    ProbMap p;
    {
      py::gil_scoped_release release;
      net->eval();
      p = predict_image(net, image, net->config().train_size);
    }
    return to_array(p);
  }
};

}  // namespace

PYBIND11_MODULE(_misnet, m) {
  m.doc() = "Polyp segmentation network: metrics, data splits, training and inference.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_OSError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  // configuration
  m.def("default_config", [] { return serialize_run_config(RunConfig{}); },
        "Default run configuration as key = value text.");
  m.def("normalize_config", [](const std::string& text) {
    const auto cfg = parse_run_config(text);
    validate_run_config(cfg);
    return serialize_run_config(cfg);
  }, py::arg("text"), "Parses and validates a run configuration and returns its canonical text.");
  m.def("config_hash", [](const std::string& text) { return model_config_hash(parse_run_config(text).model); },
        py::arg("text"), "Architecture hash of a run configuration.");
  m.def("ablation_variants", &ablation_variants);
  m.def("reduced_dim", &reduced_dim, py::arg("channels"), py::arg("reduction"), py::arg("floor_dim"));
  m.def("poly_lr", &poly_lr, py::arg("epoch"), py::arg("total_epochs"), py::arg("base_lr"), py::arg("power") = 0.9);

  // data
  m.def("split_counts", [](std::size_t n) {
    const auto c = data::split_counts(n);
    return py::make_tuple(c.train, c.val, c.test);
  }, py::arg("n"));
  m.def("build_manifest", [](const fs::path& root, std::uint64_t seed) {
    const auto man = data::build_manifest(root, seed);
    py::dict d;
    d["train"] = stems(man.train);
    d["val"] = stems(man.val);
    d["test"] = stems(man.test);
    return d;
  }, py::arg("root"), py::arg("seed"), "Stems of the train/val/test split of a dataset root.");

  // metrics
  m.def("evaluate_image", [](const Array2D& pred, const Mask2D& truth, const std::string& threshold_mode,
                             const std::string& e_measure, double alpha) {
    return to_dict(metrics::evaluate_image("image", to_prob(pred), to_mask(truth),
                                           metric_options(threshold_mode, e_measure, alpha)));
  }, py::arg("pred"), py::arg("truth"), py::arg("threshold_mode") = "fixed", py::arg("e_measure") = "max",
     py::arg("alpha") = 0.5, "All six metrics of one prediction in [0, 1] against a binary mask.");
  m.def("dice_iou", [](const Array2D& pred, const Mask2D& truth, double threshold) {
    const auto o = metrics::mdice_miou(to_prob(pred), to_mask(truth), threshold);
    return py::make_tuple(o.dice, o.iou);
  }, py::arg("pred"), py::arg("truth"), py::arg("threshold") = 0.5);
  m.def("weighted_fmeasure", [](const Array2D& pred, const Mask2D& truth) {
    return metrics::weighted_fmeasure(to_prob(pred), to_mask(truth)).value;
  }, py::arg("pred"), py::arg("truth"));
  m.def("s_measure", [](const Array2D& pred, const Mask2D& truth, double alpha) {
    return metrics::s_measure(to_prob(pred), to_mask(truth), alpha);
  }, py::arg("pred"), py::arg("truth"), py::arg("alpha") = 0.5);
  m.def("e_measure", [](const Array2D& pred, const Mask2D& truth, const std::string& mode) {
    return metrics::e_measure(to_prob(pred), to_mask(truth), metric_options("fixed", mode, 0.5).e_mode);
  }, py::arg("pred"), py::arg("truth"), py::arg("mode") = "max");
  m.def("mae", [](const Array2D& pred, const Mask2D& truth) { return metrics::mae(to_prob(pred), to_mask(truth)); },
        py::arg("pred"), py::arg("truth"));
  m.def("evaluate_dataset", [](const fs::path& pred_dir, const fs::path& gt_dir, const std::string& dataset_id,
                               const std::string& threshold_mode, const std::string& e_measure) {
    const auto opts = metric_options(threshold_mode, e_measure, 0.5);
    py::gil_scoped_release release;
    auto r = metrics::evaluate_dataset(pred_dir, gt_dir, dataset_id, opts);
    py::gil_scoped_acquire acquire;
    return to_dict(r);
  }, py::arg("pred_dir"), py::arg("gt_dir"), py::arg("dataset_id") = "dataset", py::arg("threshold_mode") = "fixed",
     py::arg("e_measure") = "max");

  // commands
  m.def("train", [](const std::string& config_text, const fs::path& data_root, const fs::path& out_dir, bool resume,
                    bool force) {
    TrainOptions o;
    o.data_root = data_root;
    o.out_dir = out_dir;
    o.resume = resume;
    o.force = force;
    const auto cfg = parse_run_config(config_text);
    py::gil_scoped_release release;
    const auto r = train(cfg, o);
    py::gil_scoped_acquire acquire;
    return to_dict(r);
  }, py::arg("config"), py::arg("data_root"), py::arg("out_dir"), py::arg("resume") = false, py::arg("force") = false,
     "Trains a model; the run directory receives config.txt, train.log, manifest.tsv and checkpoints.");
  m.def("evaluate", [](const fs::path& data_root, const fs::path& out_dir, const std::optional<fs::path>& checkpoint,
                       const std::optional<fs::path>& predictions, const std::vector<std::string>& datasets,
                       const std::string& threshold_mode, const std::string& e_measure) {
    if (checkpoint.has_value() == predictions.has_value()) {
      throw ConfigError("evaluate", "give exactly one of checkpoint and predictions");
    }
    EvalOptions o;
    o.checkpoint = checkpoint.value_or(fs::path());
    o.predictions = predictions.value_or(fs::path());
    o.data_root = data_root;
    o.out_dir = out_dir;
    o.datasets = datasets;
    o.metric = metric_options(threshold_mode, e_measure, 0.5);
    std::vector<metrics::MetricReport> reports;
    {
      py::gil_scoped_release release;
      reports = cmd_eval(o);
    }
    py::list out;
    for (const auto& r : reports) out.append(to_dict(r));
    return out;
  }, py::arg("data_root"), py::arg("out_dir"), py::arg("checkpoint") = py::none(), py::arg("predictions") = py::none(),
     py::arg("datasets") = std::vector<std::string>{}, py::arg("threshold_mode") = "fixed", py::arg("e_measure") = "max");
  m.def("predict", [](const fs::path& checkpoint, const fs::path& input, const fs::path& out_dir, bool dump_attention) {
    PredictOptions o{checkpoint, input, out_dir, dump_attention};
    py::gil_scoped_release release;
    return cmd_predict(o);
  }, py::arg("checkpoint"), py::arg("input"), py::arg("out_dir"), py::arg("dump_attention") = false);
  m.def("report", [](const std::vector<fs::path>& dirs, const std::optional<fs::path>& out_file) {
    return cmd_report(dirs, out_file.value_or(fs::path()));
  }, py::arg("dirs"), py::arg("out_file") = py::none());

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& config_text, std::uint64_t seed) {
             const auto cfg = parse_run_config(config_text);
             validate_run_config(cfg);
             torch::manual_seed(seed);
             return Model{MisNet(cfg.model), serialize_run_config(cfg)};
           }),
           py::arg("config"), py::arg("seed") = 0, "Randomly initialized network for a run configuration.")
      .def_static("from_checkpoint", [](const fs::path& path) {
        auto [net, meta] = model_from_checkpoint(path);
        return Model{net, meta.config_text};
      }, py::arg("path"))
      .def_property_readonly("config", [](const Model& self) { return self.config_text; })
      .def_property_readonly("num_parameters", [](const Model& self) {
        std::int64_t n = 0;
        for (const auto& p : self.net->parameters()) n += p.numel();
        return n;
      })
      .def("predict", &Model::predict, py::arg("image"),
           "Probability map (float64, HxW) for an HxWx3 uint8 RGB image.");
}
