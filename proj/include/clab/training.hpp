#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clab/checkpoint.hpp"
#include "clab/contrastive.hpp"
#include "clab/detector.hpp"
#include "clab/dlw.hpp"
#include "clab/evaluation.hpp"
#include "clab/synthetic.hpp"

namespace clab {

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t epochs = 7;
  std::size_t steps_per_epoch = 214;
  std::size_t videos_per_batch = 8;
  std::size_t frames_per_video = 3;
  double learning_rate = 0.01;
  std::vector<std::size_t> lr_drop_epochs{4, 6};
  double lr_drop_factor = 0.1;
  std::size_t warmup_steps = 100;  // linear ramp from lr / warmup_steps up to lr
  double grad_clip_norm = 10.0;    // global L2 norm; 0 disables clipping
  double momentum = 0.9;
  double weight_decay = 0.0;

  bool cab_enabled = true;
  bool dlw_enabled = true;
  double aux_weight = 0.005;
  std::optional<std::int64_t> dlw_cutoff_step;  // unset: half of the total steps
  CabConfig cab{0, 64, 128, 128, 0.1};          // in_channels follows the backbone tap
  DetectorConfig detector;

  std::size_t log_every = 10;
  std::size_t probe_videos = 8;
  std::size_t eval_every_epochs = 0;

  void validate() const;
  std::int64_t total_steps() const { return static_cast<std::int64_t>(epochs * steps_per_epoch); }
  std::int64_t cutoff_step() const { return dlw_cutoff_step.value_or(std::max<std::int64_t>(1, total_steps() / 2)); }
  // Constant weight when DLW is off; zero weight when the branch is off.
  DlwConfig dlw() const;
  CabConfig resolved_cab() const;
  double learning_rate_at(std::int64_t step) const;
  bool operator==(const TrainConfig&) const = default;
};

struct StepRecord {
  std::int64_t step = 0;
  LossBreakdown loss;
  bool auxiliary_computed = false;
  double learning_rate = 0;
  double grad_norm = 0;  // before clipping
  std::optional<double> alignment_gap;
};

struct RunRecord {
  std::uint64_t config_hash = 0;
  std::vector<StepRecord> steps;
  std::vector<std::pair<std::int64_t, EvalResult>> evals;
  std::vector<std::pair<std::int64_t, double>> alignment_gap_curve;
  double wall_clock_seconds = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::int64_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

struct TrainOptions {
  // Checkpoints (per epoch and final) and the metrics stream go here when set.
  std::optional<std::filesystem::path> run_dir;
  bool resume = false;
  // Stop early after this many completed steps (used to exercise resume).
  std::optional<std::int64_t> stop_after_step;
  // Evaluate on this split at eval_every_epochs boundaries and at the end.
  const Dataset* val = nullptr;
  // Run the auxiliary pass even when its weight is zero.
  bool force_auxiliary = false;
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  RunRecord record;
  std::optional<EvalResult> final_eval;
};

std::uint64_t config_hash(const TrainConfig& cfg);

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const TrainOptions& options = {});

// Gradients of one training step, exposed for verification.
struct StepGradients {
  DetectorParams<float> detector;
  std::optional<CabParams<float>> cab;
  LossBreakdown loss;
  bool auxiliary_computed = false;
};

StepGradients compute_step_gradients(const TrainConfig& cfg, const DetectorParams<float>& detector,
                                     const CabParams<float>* cab, const VideoClipBatch& batch, std::int64_t step,
                                     bool force_auxiliary = false);

Rng batch_rng(std::uint64_t seed, std::int64_t step);

enum class SweepAxis { kTemperature, kWeight, kCabDlwGrid };

SweepAxis parse_sweep_axis(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);
std::vector<double> default_sweep_values(SweepAxis axis);
// For the cab_dlw_grid axis: 0 = baseline, 1 = CAB with constant weight, 2 = CAB + DLW.
TrainConfig apply_sweep_value(const TrainConfig& base, SweepAxis axis, double value);
std::string sweep_label(SweepAxis axis, double value);

struct SweepRun {
  std::string label;
  double value = 0;
  TrainConfig config;
  std::optional<RunRecord> record;
  std::optional<EvalResult> eval;
  std::string error;
};

std::vector<SweepRun> sweep(const TrainConfig& base, SweepAxis axis, std::span<const double> values,
                            const Dataset& train_set, const Dataset& val_set,
                            const std::optional<std::filesystem::path>& root_dir = std::nullopt);

// Tab-separated summary, one row per run.
std::string sweep_table(SweepAxis axis, std::span<const SweepRun> runs);

}  // namespace clab
