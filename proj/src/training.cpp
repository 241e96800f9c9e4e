#include "clab/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "clab/config.hpp"

namespace clab {
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (epochs < 1 || steps_per_epoch < 1) fail("epochs and steps_per_epoch must be >= 1");
  if (videos_per_batch < 1 || frames_per_video < 1) fail("videos_per_batch and frames_per_video must be >= 1");
  if (cab_enabled && (videos_per_batch < 2 || frames_per_video < 2)) {
    fail("the contrastive branch needs videos_per_batch >= 2 and frames_per_video >= 2");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
  if (!(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0)) fail("lr_drop_factor must lie in (0, 1]");
  if (!(grad_clip_norm >= 0.0)) fail("grad_clip_norm must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(aux_weight >= 0.0) || !std::isfinite(aux_weight)) fail("auxiliary weight must be finite and >= 0");
  if (dlw_cutoff_step && *dlw_cutoff_step < 1) fail("dlw cutoff_step must be >= 1");
  if (log_every < 1) fail("log_every must be >= 1");
  if (cab_enabled && probe_videos < 2) fail("probe_videos must be >= 2");
  detector.validate();
  resolved_cab().validate();
}

DlwConfig TrainConfig::dlw() const {
  if (!cab_enabled) return {0.0, std::nullopt};
  if (!dlw_enabled) return {aux_weight, std::nullopt};
  return {aux_weight, cutoff_step()};
}

CabConfig TrainConfig::resolved_cab() const {
  CabConfig c = cab;
  c.in_channels = detector.backbone.tap_channels();
  return c;
}

double TrainConfig::learning_rate_at(std::int64_t step) const {
  const auto epoch = static_cast<std::size_t>(step) / steps_per_epoch;
  double lr = learning_rate;
  for (auto e : lr_drop_epochs) {
    if (epoch >= e) lr *= lr_drop_factor;
  }
  if (step < static_cast<std::int64_t>(warmup_steps)) {
    lr *= static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  return lr;
}

std::uint64_t config_hash(const TrainConfig& cfg) { return fnv1a64(to_json(cfg).dump()); }

Rng batch_rng(std::uint64_t seed, std::int64_t step) {
  return Rng(derive_seed(derive_seed(seed, static_cast<std::uint64_t>(Stream::kBatchSampling)),
                         static_cast<std::uint64_t>(step)));
}

namespace {

Tensor<float> gather_rows(const Tensor<float>& src, const std::vector<std::size_t>& rows) {
  Shape shape = src.shape();
  shape[0] = rows.size();
  Tensor<float> out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto from = src.outer(rows[i]);
    std::copy(from.begin(), from.end(), out.outer(i).begin());
  }
  return out;
}

void scale(Tensor<float>& t, float s) {
  for (auto& v : t.values()) v *= s;
}

template <typename Params>
double squared_norm(const Params& grads) {
  double sum = 0;
  for (const auto& [name, t] : grads.named()) {
    for (float v : t->values()) sum += static_cast<double>(v) * static_cast<double>(v);
  }
  return sum;
}

template <typename Params>
void scale_all(Params& grads, float s) {
  for (auto& [name, t] : grads.named()) scale(*t, s);
}

template <typename Params>
void sgd_update(Params& params, const Params& grads, Params& momentum, double lr, double mu, double wd) {
  auto p = params.named();
  const auto g = grads.named();
  auto v = momentum.named();
  const float lr_f = static_cast<float>(lr), mu_f = static_cast<float>(mu), wd_f = static_cast<float>(wd);
  for (std::size_t i = 0; i < p.size(); ++i) {
    Tensor<float>& pt = *p[i].second;
    const Tensor<float>& gt = *g[i].second;
    Tensor<float>& vt = *v[i].second;
    for (std::size_t j = 0; j < pt.size(); ++j) {
      float grad = gt[j];
      if (wd > 0.0) grad += wd_f * pt[j];
      vt[j] = mu_f * vt[j] + grad;
      pt[j] -= lr_f * vt[j];
    }
  }
}

double probe_alignment_gap(const DetectorParams<float>& det, const CabParams<float>& cab, std::size_t tap,
                           const VideoClipBatch& probe) {
  const auto trace = backbone_forward(det, probe.frames, tap);
  return alignment_gap(cab_forward(cab, trace.stages[tap]), probe.video_index);
}

nlohmann::json step_to_json(const StepRecord& r) {
  nlohmann::json j = {{"step", r.step},
                      {"regression_loss", r.loss.regression_loss},
                      {"classification_loss", r.loss.classification_loss},
                      {"auxiliary_loss", r.auxiliary_computed ? nlohmann::json(r.loss.auxiliary_loss) : nlohmann::json(nullptr)},
                      {"auxiliary_weight", r.loss.auxiliary_weight},
                      {"total", r.loss.total},
                      {"lr", r.learning_rate},
                      {"grad_norm", r.grad_norm}};
  if (r.alignment_gap) j["alignment_gap"] = *r.alignment_gap;
  return j;
}

StepRecord step_from_json(const nlohmann::json& j) {
  StepRecord r;
  r.step = j.at("step").get<std::int64_t>();
  r.loss.regression_loss = j.at("regression_loss").get<double>();
  r.loss.classification_loss = j.at("classification_loss").get<double>();
  r.auxiliary_computed = !j.at("auxiliary_loss").is_null();
  r.loss.auxiliary_loss = r.auxiliary_computed ? j.at("auxiliary_loss").get<double>() : 0.0;
  r.loss.auxiliary_weight = j.at("auxiliary_weight").get<double>();
  r.loss.total = j.at("total").get<double>();
  r.learning_rate = j.at("lr").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  if (j.contains("alignment_gap")) r.alignment_gap = j.at("alignment_gap").get<double>();
  return r;
}

}  // namespace

StepGradients compute_step_gradients(const TrainConfig& cfg, const DetectorParams<float>& detector,
                                     const CabParams<float>* cab, const VideoClipBatch& batch, std::int64_t step,
                                     bool force_auxiliary) {
  const DlwConfig dlw = cfg.dlw();
  const double weight = weight_at(step, dlw);
  const std::size_t tap = cfg.detector.backbone.tap_stage;

  StepGradients out{DetectorParams<float>(cfg.detector), std::nullopt, {}, false};
  const std::vector<std::size_t> target_rows = batch.target_rows();
  const auto target_trace = backbone_forward(detector, gather_rows(batch.frames, target_rows));
  const auto head = head_forward(detector, target_trace.final_feature());
  const auto det_loss = detection_loss(head.output, cfg.detector.num_classes, cfg.detector.cell_size(),
                                       std::span<const std::vector<GroundTruthBox>>(batch.annotations));

  std::vector<Tensor<float>> target_grads(target_trace.stages.size());
  target_grads.back() = head_backward(detector, target_trace.final_feature(), head, det_loss.grad, out.detector);

  double aux_loss = 0.0;
  if (cfg.cab_enabled && (weight > 0.0 || force_auxiliary)) {
    if (!cab) throw std::invalid_argument("compute_step_gradients: auxiliary branch parameters missing");
    std::vector<std::size_t> support_rows;
    for (std::size_t i = 0; i < batch.frame_role.size(); ++i) {
      if (batch.frame_role[i] == FrameRole::kSupport) support_rows.push_back(i);
    }
    const auto support_trace = backbone_forward(detector, gather_rows(batch.frames, support_rows), tap);

    // Tap features for every batch row, in batch order.
    const Tensor<float>& target_tap = target_trace.stages[tap];
    const Tensor<float>& support_tap = support_trace.stages[tap];
    Shape tap_shape = target_tap.shape();
    tap_shape[0] = batch.frame_role.size();
    Tensor<float> taps(tap_shape);
    std::vector<std::pair<bool, std::size_t>> origin;  // (is_target, row in its trace)
    for (std::size_t i = 0, ti = 0, si = 0; i < batch.frame_role.size(); ++i) {
      const bool is_target = batch.frame_role[i] == FrameRole::kTarget;
      auto src = is_target ? target_tap.outer(ti) : support_tap.outer(si);
      std::copy(src.begin(), src.end(), taps.outer(i).begin());
      origin.emplace_back(is_target, is_target ? ti++ : si++);
    }

    const auto cab_trace = cab_forward_trace(*cab, taps);
    auto nce = info_nce_loss_with_grad(cab_trace.output, batch.video_index, static_cast<float>(cfg.cab.temperature));
    aux_loss = nce.loss;
    scale(nce.grad, static_cast<float>(weight));
    out.cab.emplace(cfg.resolved_cab());
    const Tensor<float> tap_grad = cab_backward(*cab, taps, cab_trace, nce.grad, *out.cab);

    Tensor<float> target_tap_grad(target_tap.shape());
    Tensor<float> support_tap_grad(support_tap.shape());
    for (std::size_t i = 0; i < origin.size(); ++i) {
      auto src = tap_grad.outer(i);
      auto dst = origin[i].first ? target_tap_grad.outer(origin[i].second) : support_tap_grad.outer(origin[i].second);
      std::copy(src.begin(), src.end(), dst.begin());
    }
    if (target_grads[tap].empty()) {
      target_grads[tap] = std::move(target_tap_grad);
    } else {
      accumulate(target_grads[tap], target_tap_grad);
    }
    backbone_backward(detector, target_trace, std::move(target_grads), out.detector);
    std::vector<Tensor<float>> support_grads(support_trace.stages.size());
    support_grads[tap] = std::move(support_tap_grad);
    backbone_backward(detector, support_trace, std::move(support_grads), out.detector);
    out.auxiliary_computed = true;
  } else {
    backbone_backward(detector, target_trace, std::move(target_grads), out.detector);
  }

  out.loss = total_loss(det_loss.regression, det_loss.classification, aux_loss, step, dlw);
  return out;
}

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const TrainOptions& options) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const std::uint64_t hash = config_hash(cfg);
  const std::size_t tap = cfg.detector.backbone.tap_stage;
  const std::int64_t total = cfg.total_steps();
  const DlwConfig dlw = cfg.dlw();

  TrainResult result;
  Checkpoint& state = result.checkpoint;
  RunRecord& record = result.record;
  record.config_hash = hash;

  const fs::path metrics_path = options.run_dir ? *options.run_dir / "metrics.jsonl" : fs::path();
  const fs::path latest_path = options.run_dir ? *options.run_dir / "checkpoint.ckpt" : fs::path();
  if (options.resume) {
    if (!options.run_dir) throw std::invalid_argument("train: resume requires a run directory");
    if (!fs::exists(latest_path)) throw std::runtime_error("train: nothing to resume, " + latest_path.string() + " is missing");
    state = load_checkpoint(latest_path);
    if (state.config_hash != hash) {
      throw std::runtime_error("train: checkpoint config hash differs from the current config; refusing to resume");
    }
    std::ifstream in(metrics_path);
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (!j.contains("step") || j.contains("diverged") || j.contains("eval")) continue;
      StepRecord r = step_from_json(j);
      if (r.step < state.step) record.steps.push_back(r);
    }
  } else {
    state.step = 0;
    state.config_hash = hash;
    state.seed = cfg.seed;
    state.detector_config = cfg.detector;
    Rng det_rng(cfg.seed, Stream::kDetectorInit);
    state.detector = init_detector_params<float>(cfg.detector, det_rng);
    state.detector_momentum = DetectorParams<float>(cfg.detector);
    if (cfg.cab_enabled) {
      Rng cab_rng(cfg.seed, Stream::kCabInit);
      state.cab_config = cfg.resolved_cab();
      state.cab = init_cab_params<float>(*state.cab_config, cab_rng);
      state.cab_momentum.emplace(*state.cab_config);
    }
  }
  for (const auto& r : record.steps) {
    if (r.alignment_gap) record.alignment_gap_curve.emplace_back(r.step, *r.alignment_gap);
  }

  std::ofstream metrics;
  if (options.run_dir) {
    fs::create_directories(*options.run_dir);
    metrics.open(metrics_path, std::ios::trunc);
    if (!metrics) throw std::runtime_error("train: cannot write " + metrics_path.string());
    for (const auto& r : record.steps) metrics << step_to_json(r).dump() << '\n';
  }

  std::optional<VideoClipBatch> probe;
  if (cfg.cab_enabled) {
    Rng probe_rng(cfg.seed, Stream::kAlignmentProbe);
    probe = sample_training_batch(train_set, std::min(cfg.probe_videos, train_set.videos.size()),
                                  cfg.frames_per_video, probe_rng);
  }
  auto measure_gap = [&] { return probe_alignment_gap(state.detector, *state.cab, tap, *probe); };
  auto snapshot = [&](std::int64_t at) {
    if (!options.val) return;
    EvalResult r = evaluate_model(state.detector, cfg.detector, *options.val);
    record.evals.emplace_back(at, r);
    if (metrics.is_open()) {
      nlohmann::json per_class = nlohmann::json::object();
      for (const auto& [k, ap] : r.per_class_ap) per_class[std::to_string(k)] = ap;
      metrics << nlohmann::json{{"eval", true}, {"step", at}, {"map", r.map}, {"per_class_ap", per_class}}.dump() << '\n';
    }
  };

  for (std::int64_t step = state.step; step < total; ++step) {
    if (options.stop_after_step && step >= *options.stop_after_step) break;
    Rng rng = batch_rng(cfg.seed, step);
    const VideoClipBatch batch =
        sample_training_batch(train_set, cfg.videos_per_batch, cfg.frames_per_video, rng, cfg.cab_enabled);

    StepRecord rec;
    rec.step = step;
    rec.learning_rate = cfg.learning_rate_at(step);
    if (probe && (step % static_cast<std::int64_t>(cfg.log_every) == 0 || step == cfg.cutoff_step())) {
      rec.alignment_gap = measure_gap();
      record.alignment_gap_curve.emplace_back(step, *rec.alignment_gap);
    }

    StepGradients grads;
    try {
      grads = compute_step_gradients(cfg, state.detector, state.cab ? &*state.cab : nullptr, batch, step,
                                     options.force_auxiliary);
    } catch (const std::domain_error& e) {
      if (metrics.is_open()) metrics << nlohmann::json{{"step", step}, {"diverged", true}}.dump() << '\n';
      throw TrainingDiverged(step, std::string("training diverged: ") + e.what());
    } catch (const std::invalid_argument& e) {
      if (std::string(e.what()).find("non-finite") == std::string::npos) throw;
      if (metrics.is_open()) metrics << nlohmann::json{{"step", step}, {"diverged", true}}.dump() << '\n';
      throw TrainingDiverged(step, std::string("training diverged at step ") + std::to_string(step) + ": " + e.what());
    }
    rec.loss = grads.loss;
    rec.auxiliary_computed = grads.auxiliary_computed;

    // Global gradient-norm clipping over every trained parameter.
    double sq = squared_norm(grads.detector);
    if (grads.cab) sq += squared_norm(*grads.cab);
    rec.grad_norm = std::sqrt(sq);
    if (!std::isfinite(rec.grad_norm)) {
      if (metrics.is_open()) metrics << nlohmann::json{{"step", step}, {"diverged", true}}.dump() << '\n';
      throw TrainingDiverged(step, "training diverged at step " + std::to_string(step) + ": non-finite gradient");
    }
    if (cfg.grad_clip_norm > 0.0 && rec.grad_norm > cfg.grad_clip_norm) {
      const auto s = static_cast<float>(cfg.grad_clip_norm / rec.grad_norm);
      scale_all(grads.detector, s);
      if (grads.cab) scale_all(*grads.cab, s);
    }

    sgd_update(state.detector, grads.detector, state.detector_momentum, rec.learning_rate, cfg.momentum,
               cfg.weight_decay);
    if (grads.cab) {
      sgd_update(*state.cab, *grads.cab, *state.cab_momentum, rec.learning_rate, cfg.momentum, cfg.weight_decay);
    }
    state.step = step + 1;

    record.steps.push_back(rec);
    if (metrics.is_open()) metrics << step_to_json(rec).dump() << '\n';
    if (options.on_step) options.on_step(rec);

    if (state.step % static_cast<std::int64_t>(cfg.steps_per_epoch) == 0) {
      const auto epoch = static_cast<std::size_t>(state.step) / cfg.steps_per_epoch;
      if (options.run_dir) {
        metrics.flush();
        std::ostringstream name;
        name << "epoch_" << std::setw(2) << std::setfill('0') << epoch << ".ckpt";
        save_checkpoint(state, *options.run_dir / "checkpoints" / name.str());
        save_checkpoint(state, latest_path);
      }
      if (cfg.eval_every_epochs > 0 && epoch % cfg.eval_every_epochs == 0 && state.step < total) snapshot(state.step);
    }
  }

  if (state.step == total) {
    if (probe) {
      const double gap = measure_gap();
      if (record.alignment_gap_curve.empty() || record.alignment_gap_curve.back().first != total) {
        record.alignment_gap_curve.emplace_back(total, gap);
      }
    }
    if (options.val) {
      snapshot(total);
      result.final_eval = record.evals.back().second;
      result.final_eval->alignment_gap_curve = record.alignment_gap_curve;
    }
  }
  if (options.run_dir) save_checkpoint(state, latest_path);
  (void)dlw;
  record.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "temperature") return SweepAxis::kTemperature;
  if (name == "weight") return SweepAxis::kWeight;
  if (name == "cab_dlw_grid") return SweepAxis::kCabDlwGrid;
  throw std::invalid_argument("unknown sweep axis '" + name + "' (expected temperature, weight or cab_dlw_grid)");
}

std::string sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kTemperature: return "temperature";
    case SweepAxis::kWeight: return "weight";
    case SweepAxis::kCabDlwGrid: return "cab_dlw_grid";
  }
  return "unknown";
}

std::vector<double> default_sweep_values(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kTemperature: return {0.05, 0.1, 0.5, 1.0};
    case SweepAxis::kWeight: return {0.001, 0.005, 0.01, 0.05};
    case SweepAxis::kCabDlwGrid: return {0, 1, 2};
  }
  return {};
}

TrainConfig apply_sweep_value(const TrainConfig& base, SweepAxis axis, double value) {
  TrainConfig cfg = base;
  switch (axis) {
    case SweepAxis::kTemperature:
      cfg.cab.temperature = value;
      break;
    case SweepAxis::kWeight:
      cfg.aux_weight = value;
      break;
    case SweepAxis::kCabDlwGrid:
      if (value != 0.0 && value != 1.0 && value != 2.0) {
        throw std::invalid_argument("cab_dlw_grid values are 0 (baseline), 1 (CAB) and 2 (CAB + DLW)");
      }
      cfg.cab_enabled = value >= 1.0;
      cfg.dlw_enabled = value >= 2.0;
      break;
  }
  return cfg;
}

std::string sweep_label(SweepAxis axis, double value) {
  if (axis == SweepAxis::kCabDlwGrid) {
    if (value == 0.0) return "baseline";
    if (value == 1.0) return "cab";
    return "cab_dlw";
  }
  std::ostringstream s;
  s << sweep_axis_name(axis) << "_" << value;
  return s.str();
}

std::vector<SweepRun> sweep(const TrainConfig& base, SweepAxis axis, std::span<const double> values,
                            const Dataset& train_set, const Dataset& val_set,
                            const std::optional<fs::path>& root_dir) {
  std::vector<SweepRun> runs;
  for (double v : values) {
    SweepRun run;
    run.value = v;
    run.label = sweep_label(axis, v);
    run.config = base;
    try {
      run.config = apply_sweep_value(base, axis, v);
      TrainOptions opts;
      opts.val = &val_set;
      if (root_dir) opts.run_dir = *root_dir / run.label;
      auto result = train(run.config, train_set, opts);
      run.record = std::move(result.record);
      run.eval = std::move(result.final_eval);
    } catch (const std::exception& e) {
      run.error = e.what();
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

std::string sweep_table(SweepAxis axis, std::span<const SweepRun> runs) {
  std::ostringstream out;
  out << "axis\tvalue\tlabel\tseed\tmap\tap_circle\tap_rectangle\tap_triangle\tfinal_total_loss\tstatus\n";
  for (const auto& r : runs) {
    out << sweep_axis_name(axis) << '\t' << r.value << '\t' << r.label << '\t' << r.config.seed << '\t';
    if (r.eval) {
      out << std::fixed << std::setprecision(4) << r.eval->map;
      for (int k = 0; k < 3; ++k) {
        out << '\t';
        auto it = r.eval->per_class_ap.find(k);
        if (it != r.eval->per_class_ap.end()) out << it->second;
        else out << "-";
      }
      out << '\t' << (r.record && !r.record->steps.empty() ? r.record->steps.back().loss.total : 0.0);
      out.unsetf(std::ios::fixed);
      out << std::setprecision(6);
    } else {
      out << "-\t-\t-\t-\t-";
    }
    out << '\t' << (r.error.empty() ? "ok" : "failed: " + r.error) << '\n';
  }
  return out.str();
}

}  // namespace clab
