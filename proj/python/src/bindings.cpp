#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "clab/checkpoint.hpp"
#include "clab/config.hpp"
#include "clab/contrastive.hpp"
#include "clab/dlw.hpp"
#include "clab/evaluation.hpp"
#include "clab/report.hpp"
#include "clab/synthetic.hpp"
#include "clab/training.hpp"
#include "clab/verification.hpp"

namespace py = pybind11;
using namespace clab;

namespace {

// Embeddings arrive as a list of rows.
Tensor<double> to_tensor(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("embeddings: expected at least one row");
  const std::size_t dim = rows.front().size();
  Tensor<double> t({rows.size(), dim});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != dim) throw std::invalid_argument("embeddings: rows have different lengths");
    std::copy(rows[r].begin(), rows[r].end(), t.data() + r * dim);
  }
  return t;
}

Box to_box(const std::array<double, 4>& b) { return Box{b[0], b[1], b[2], b[3]}; }

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

RunConfig config_from(const std::optional<std::string>& text) { return text ? parse_run_config(*text) : RunConfig{}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Contrastive video detection toolkit";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);

  m.def(
      "info_nce_loss",
      [](const std::vector<std::vector<double>>& z, const std::vector<int>& videos, double tau) {
        return info_nce_loss(to_tensor(z), videos, tau);
      },
      py::arg("embeddings"), py::arg("video_index"), py::arg("temperature"));
  m.def(
      "info_nce_oracle",
      [](const std::vector<std::vector<double>>& z, const std::vector<int>& videos, double tau) {
        return info_nce_oracle(to_tensor(z), videos, tau);
      },
      py::arg("embeddings"), py::arg("video_index"), py::arg("temperature"));
  m.def(
      "alignment_gap",
      [](const std::vector<std::vector<double>>& z, const std::vector<int>& videos) {
        return alignment_gap(to_tensor(z), videos);
      },
      py::arg("embeddings"), py::arg("video_index"));

  m.def(
      "dlw_weight",
      [](std::int64_t step, double initial_weight, std::optional<std::int64_t> cutoff_step) {
        DlwConfig cfg{initial_weight, cutoff_step};
        cfg.validate();
        return weight_at(step, cfg);
      },
      py::arg("step"), py::arg("initial_weight") = 0.005, py::arg("cutoff_step") = std::optional<std::int64_t>(25000));

  m.def(
      "iou", [](const std::array<double, 4>& a, const std::array<double, 4>& b) { return iou(to_box(a), to_box(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "nms",
      [](const std::vector<std::tuple<std::array<double, 4>, int, double>>& dets, double threshold) {
        std::vector<Detection> in;
        for (const auto& [box, cls, score] : dets) in.push_back({to_box(box), cls, score});
        std::vector<std::tuple<std::array<double, 4>, int, double>> out;
        for (const auto& d : nms(std::move(in), threshold)) {
          out.emplace_back(std::array<double, 4>{d.box.x1, d.box.y1, d.box.x2, d.box.y2}, d.class_id, d.score);
        }
        return out;
      },
      py::arg("detections"), py::arg("iou_threshold") = 0.5,
      "Detections are (box [x1, y1, x2, y2], class_id, score) tuples.");

  m.def(
      "normalized_config", [](const std::optional<std::string>& text) { return normalized_config(config_from(text)); },
      py::arg("config_json") = py::none(), "Validated config with every default filled in, as JSON text.");

  m.def(
      "generate",
      [](const std::filesystem::path& out_dir, const std::optional<std::string>& config_json) {
        const RunConfig cfg = config_from(config_json);
        py::gil_scoped_release release;
        for (auto [split, name] : {std::pair{Split::kTrain, "train"}, std::pair{Split::kVal, "val"}}) {
          write_dataset(generate_dataset(cfg.generation, cfg.seed, split), out_dir / name);
        }
      },
      py::arg("out_dir"), py::arg("config_json") = py::none(), "Writes out_dir/train and out_dir/val.");

  m.def(
      "dataset_summary",
      [](const std::filesystem::path& dir) {
        const Dataset d = read_dataset(dir);
        std::size_t frames = 0, boxes = 0;
        for (const auto& v : d.videos) {
          frames += v.num_frames();
          for (const auto& a : v.annotations) boxes += a.size();
        }
        py::dict out;
        out["videos"] = d.videos.size();
        out["frames"] = frames;
        out["boxes"] = boxes;
        out["content_hash"] = hex64(content_hash(d));
        return out;
      },
      py::arg("directory"));

  m.def(
      "train",
      [](const std::filesystem::path& train_dir, const std::optional<std::filesystem::path>& val_dir,
         const std::optional<std::filesystem::path>& run_dir, const std::optional<std::string>& config_json) {
        const RunConfig cfg = config_from(config_json);
        const Dataset train_set = read_dataset(train_dir);
        std::optional<Dataset> val_set;
        if (val_dir) val_set = read_dataset(*val_dir);
        TrainOptions o;
        o.run_dir = run_dir;
        o.val = val_set ? &*val_set : nullptr;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(cfg.train, train_set, o);
        }
        py::dict out;
        out["steps"] = r.record.steps.size();
        out["config_hash"] = hex64(r.record.config_hash);
        out["final_total_loss"] = r.record.steps.empty() ? 0.0 : r.record.steps.back().loss.total;
        out["alignment_gap_curve"] = r.record.alignment_gap_curve;
        out["has_auxiliary_branch"] = r.checkpoint.has_auxiliary_branch();
        if (r.final_eval) out["eval"] = json_to_py(eval_to_json(*r.final_eval));
        return out;
      },
      py::arg("train_dir"), py::arg("val_dir") = py::none(), py::arg("run_dir") = py::none(),
      py::arg("config_json") = py::none());

  m.def(
      "evaluate",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_dir) {
        const Checkpoint ckpt = load_checkpoint(checkpoint);
        const Dataset d = read_dataset(dataset_dir);
        EvalResult e;
        {
          py::gil_scoped_release release;
          e = evaluate_model(ckpt.detector, ckpt.detector_config, d);
        }
        return json_to_py(eval_to_json(e));
      },
      py::arg("checkpoint"), py::arg("dataset_dir"));

  m.def(
      "run_checks",
      [](std::uint64_t seed) {
        std::vector<CheckResult> results;
        {
          py::gil_scoped_release release;
          results = run_all_checks(seed);
        }
        py::list out;
        for (const auto& r : results) {
          py::dict d;
          d["name"] = r.name;
          d["passed"] = r.passed;
          d["detail"] = r.detail;
          d["seconds"] = r.seconds;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 20240601);
}
