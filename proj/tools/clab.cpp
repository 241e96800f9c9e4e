// clab: generate data, train, evaluate, sweep and self-check.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "clab/config.hpp"
#include "clab/plots.hpp"
#include "clab/report.hpp"
#include "clab/training.hpp"
#include "clab/verification.hpp"

namespace fs = std::filesystem;
using namespace clab;

namespace {

constexpr const char* kOutputRootEnv = "CLAB_OUTPUT_ROOT";

// Relative paths land under $CLAB_OUTPUT_ROOT when it is set.
fs::path resolve(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / path;
  return path;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;

  RunConfig load() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.train.seed = *seed;
    }
    cfg.validate();
    return cfg;
  }
};

Dataset load_split(const fs::path& dir, const std::string& name) {
  if (!fs::exists(dir / "dataset.json")) {
    throw std::runtime_error(name + " dataset not found at " + dir.string() +
                             "; create it with `clab generate --config <file>` (same config) first");
  }
  return read_dataset(dir);
}

int cmd_generate(const Common& c) {
  const RunConfig cfg = c.load();
  const fs::path train_dir = c.out.empty() ? resolve(cfg.train_dir) : resolve(c.out) / "train";
  const fs::path val_dir = c.out.empty() ? resolve(cfg.val_dir) : resolve(c.out) / "val";
  for (auto [split, dir, name] : {std::tuple{Split::kTrain, train_dir, "train"}, std::tuple{Split::kVal, val_dir, "val"}}) {
    const Dataset ds = generate_dataset(cfg.generation, cfg.seed, split);
    write_dataset(ds, dir);
    std::cout << dataset_inventory(ds, name) << "\n  -> " << dir.string() << '\n';
  }
  std::cout << "seed " << cfg.seed << '\n';
  return 0;
}

void write_run_artifacts(const fs::path& dir, const RunConfig& cfg, const TrainResult& result) {
  write_file(dir / "config.json", normalized_config(cfg) + "\n");
  write_file(dir / "loss_curve.svg", loss_curve_svg(result.record));
  write_file(dir / "weight_schedule.svg", weight_schedule_svg(result.record));
  if (!result.record.alignment_gap_curve.empty()) write_file(dir / "alignment_gap.svg", alignment_gap_svg(result.record));
  if (result.final_eval) {
    nlohmann::json j = eval_to_json(*result.final_eval);
    j["seed"] = cfg.seed;
    j["config_hash"] = hex64(result.record.config_hash);
    j["step"] = result.checkpoint.step;
    write_file(dir / "eval.json", j.dump(2) + "\n");
    write_file(dir / "pr_curve.svg", pr_curve_svg(*result.final_eval));
    write_file(dir / "report.txt", "seed " + std::to_string(cfg.seed) + ", step " +
                                       std::to_string(result.checkpoint.step) + "\n" +
                                       eval_report_text(*result.final_eval));
  }
}

int cmd_train(const Common& c, bool resume, std::optional<std::int64_t> stop_after) {
  const RunConfig cfg = c.load();
  const fs::path run_dir = resolve(c.out.empty() ? cfg.output_dir : c.out);
  const Dataset train_set = load_split(resolve(cfg.train_dir), "training");
  const Dataset val_set = load_split(resolve(cfg.val_dir), "validation");

  TrainOptions opts;
  opts.run_dir = run_dir;
  opts.resume = resume;
  opts.stop_after_step = stop_after;
  opts.val = &val_set;
  const std::int64_t total = cfg.train.total_steps();
  opts.on_step = [total](const StepRecord& r) {
    if (r.step % 100 == 0 || r.step + 1 == total) {
      std::cout << "step " << r.step << "/" << total << "  total " << r.loss.total << "  aux weight "
                << r.loss.auxiliary_weight << "  lr " << r.learning_rate << '\n';
    }
  };
  const TrainResult result = train(cfg.train, train_set, opts);
  write_run_artifacts(run_dir, cfg, result);
  std::cout << "checkpoint " << (run_dir / "checkpoint.ckpt").string() << " at step " << result.checkpoint.step
            << ", " << result.record.wall_clock_seconds << " s\n";
  if (result.final_eval) std::cout << eval_report_text(*result.final_eval);
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& dataset) {
  const RunConfig cfg = c.load();
  const fs::path ckpt_path = checkpoint.empty() ? resolve(cfg.output_dir) / "checkpoint.ckpt" : resolve(checkpoint);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset ds = load_split(resolve(dataset.empty() ? cfg.val_dir : dataset), "evaluation");
  const EvalResult eval = evaluate_model(ckpt.detector, ckpt.detector_config, ds);
  const std::string text = "checkpoint " + ckpt_path.string() + " (seed " + std::to_string(ckpt.seed) + ", step " +
                           std::to_string(ckpt.step) + ")\n" + eval_report_text(eval);
  std::cout << text;
  if (!c.out.empty()) {
    nlohmann::json j = eval_to_json(eval);
    j["seed"] = ckpt.seed;
    j["step"] = ckpt.step;
    j["config_hash"] = hex64(ckpt.config_hash);
    write_file(resolve(c.out) / "eval.json", j.dump(2) + "\n");
    write_file(resolve(c.out) / "report.txt", text);
    write_file(resolve(c.out) / "pr_curve.svg", pr_curve_svg(eval));
  }
  return 0;
}

int cmd_sweep(const Common& c, const std::string& axis_name) {
  const RunConfig cfg = c.load();
  const SweepAxis axis = parse_sweep_axis(axis_name);
  const fs::path root = resolve(c.out.empty() ? cfg.output_dir + "/sweep_" + axis_name : c.out);
  const Dataset train_set = load_split(resolve(cfg.train_dir), "training");
  const Dataset val_set = load_split(resolve(cfg.val_dir), "validation");
  std::vector<double> values = axis == SweepAxis::kTemperature ? cfg.temperature_grid
                               : axis == SweepAxis::kWeight   ? cfg.weight_grid
                                                              : default_sweep_values(axis);
  std::cout << "sweeping " << axis_name << " over " << values.size() << " values\n";
  const auto runs = sweep(cfg.train, axis, values, train_set, val_set, root);
  const std::string table = sweep_table(axis, runs);
  write_file(root / "sweep.tsv", table);
  write_file(root / "sweep.svg", sweep_svg(axis, runs));
  std::cout << table;
  std::size_t failed = 0;
  for (const auto& r : runs) failed += !r.error.empty();
  if (failed) std::cerr << failed << " run(s) failed; see the status column\n";
  return failed ? 1 : 0;
}

int cmd_check(std::uint64_t seed) {
  const auto results = run_all_checks(seed);
  std::cout << format_report(results);
  for (const auto& r : results) {
    if (!r.passed) return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive auxiliary branch experiments on synthetic video"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON run config (every field optional)")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Override the root seed");
    sub->add_option("--out", common.out, "Output directory");
  };

  auto* gen = app.add_subcommand("generate", "Generate the synthetic train and val splits");
  add_common(gen);

  bool resume = false;
  std::optional<std::int64_t> stop_after;
  auto* tr = app.add_subcommand("train", "Train one configuration");
  add_common(tr);
  tr->add_flag("--resume", resume, "Continue from <out>/checkpoint.ckpt");
  tr->add_option("--stop-after", stop_after, "Stop after this many completed steps");

  std::string checkpoint, dataset;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file (default <output_dir>/checkpoint.ckpt)");
  ev->add_option("--dataset", dataset, "Dataset directory (default: the config's val_dir)");

  std::string axis;
  auto* sw = app.add_subcommand("sweep", "Run one seeded training per value of an axis");
  add_common(sw);
  sw->add_option("--axis", axis, "temperature | weight | cab_dlw_grid")->required();

  std::uint64_t check_seed = 20240601;
  auto* ck = app.add_subcommand("check", "Run the verification suite");
  ck->add_option("--seed", check_seed, "Seed for the randomized checks");

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_generate(common);
    if (tr->parsed()) return cmd_train(common, resume, stop_after);
    if (ev->parsed()) return cmd_eval(common, checkpoint, dataset);
    if (sw->parsed()) return cmd_sweep(common, axis);
    if (ck->parsed()) return cmd_check(check_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
