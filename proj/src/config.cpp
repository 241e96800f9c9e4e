#include "clab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace clab {
namespace {

using nlohmann::json;

// Reads known keys from a JSON object and rejects everything else.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where() + "." + key + ": " + e.what());
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (it->is_null()) {
      out.reset();
      return;
    }
    T value{};
    get(key, value);
    out = value;
  }

  ObjectReader child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    static const json empty = json::object();
    return ObjectReader(it == j_.end() ? empty : *it, path_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where() + ": unknown key '" + key + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json optional_to_json(const std::optional<std::int64_t>& v) { return v ? json(*v) : json(nullptr); }

void read_detector(ObjectReader r, DetectorConfig& d) {
  r.get("stage_channels", d.backbone.stage_channels);
  r.get("tap_stage", d.backbone.tap_stage);
  r.get("in_channels", d.backbone.in_channels);
  r.get("num_classes", d.num_classes);
  r.get("head_channels", d.head_channels);
  r.get("score_threshold", d.score_threshold);
  r.get("nms_threshold", d.nms_threshold);
  r.get("max_detections", d.max_detections);
  r.finish();
}

void read_cab(ObjectReader r, CabConfig& c) {
  r.get("in_channels", c.in_channels);
  r.get("conv_channels", c.conv_channels);
  r.get("proj_hidden", c.proj_hidden);
  r.get("proj_out", c.proj_out);
  r.get("temperature", c.temperature);
  r.finish();
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

json to_json(const DetectorConfig& d) {
  return {{"stage_channels", d.backbone.stage_channels}, {"tap_stage", d.backbone.tap_stage},
          {"in_channels", d.backbone.in_channels},       {"num_classes", d.num_classes},
          {"head_channels", d.head_channels},           {"score_threshold", d.score_threshold},
          {"nms_threshold", d.nms_threshold},           {"max_detections", d.max_detections}};
}

json to_json(const CabConfig& c) {
  return {{"in_channels", c.in_channels}, {"conv_channels", c.conv_channels}, {"proj_hidden", c.proj_hidden},
          {"proj_out", c.proj_out},       {"temperature", c.temperature}};
}

DetectorConfig detector_config_from_json(const json& j) {
  DetectorConfig d;
  read_detector(ObjectReader(j, "detector"), d);
  d.validate();
  return d;
}

CabConfig cab_config_from_json(const json& j) {
  CabConfig c;
  read_cab(ObjectReader(j, "cab"), c);
  c.validate();
  return c;
}

json to_json(const TrainConfig& t) {
  json detector = to_json(t.detector);
  detector.erase("in_channels");
  return {
      {"seed", t.seed},
      {"train",
       {{"epochs", t.epochs},
        {"steps_per_epoch", t.steps_per_epoch},
        {"videos_per_batch", t.videos_per_batch},
        {"frames_per_video", t.frames_per_video},
        {"learning_rate", t.learning_rate},
        {"lr_drop_epochs", t.lr_drop_epochs},
        {"lr_drop_factor", t.lr_drop_factor},
        {"warmup_steps", t.warmup_steps},
        {"grad_clip_norm", t.grad_clip_norm},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"log_every", t.log_every},
        {"probe_videos", t.probe_videos},
        {"eval_every_epochs", t.eval_every_epochs}}},
      {"cab",
       {{"enabled", t.cab_enabled},
        {"conv_channels", t.cab.conv_channels},
        {"proj_hidden", t.cab.proj_hidden},
        {"proj_out", t.cab.proj_out},
        {"temperature", t.cab.temperature}}},
      {"dlw", {{"enabled", t.dlw_enabled}, {"initial_weight", t.aux_weight}, {"cutoff_step", optional_to_json(t.dlw_cutoff_step)}}},
      {"detector", detector},
  };
}

json to_json(const RunConfig& cfg) {
  json j = to_json(cfg.train);
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  const auto& g = cfg.generation;
  j["data"] = {{"train_dir", cfg.train_dir},
               {"val_dir", cfg.val_dir},
               {"train_videos", g.train_videos},
               {"val_videos", g.val_videos},
               {"frames_per_video", g.frames_per_video},
               {"height", g.height},
               {"width", g.width},
               {"min_tracks", g.min_tracks},
               {"max_tracks", g.max_tracks},
               {"min_scale", g.min_scale},
               {"max_scale", g.max_scale},
               {"max_speed", g.max_speed},
               {"degradation",
                {{"blur_sigma_range", g.degradation.blur_sigma_range},
                 {"occluder_probability", g.degradation.occluder_probability},
                 {"occluder_area_fraction_range", g.degradation.occluder_area_fraction_range},
                 {"deform_amplitude", g.degradation.deform_amplitude}}}};
  j["sweep"] = {{"temperature", cfg.temperature_grid}, {"weight", cfg.weight_grid}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  ObjectReader root(j, "");
  root.get("seed", cfg.seed);
  root.get("output_dir", cfg.output_dir);
  {
    auto data = root.child("data");
    auto& g = cfg.generation;
    data.get("train_dir", cfg.train_dir);
    data.get("val_dir", cfg.val_dir);
    data.get("train_videos", g.train_videos);
    data.get("val_videos", g.val_videos);
    data.get("frames_per_video", g.frames_per_video);
    data.get("height", g.height);
    data.get("width", g.width);
    data.get("min_tracks", g.min_tracks);
    data.get("max_tracks", g.max_tracks);
    data.get("min_scale", g.min_scale);
    data.get("max_scale", g.max_scale);
    data.get("max_speed", g.max_speed);
    auto deg = data.child("degradation");
    deg.get("blur_sigma_range", g.degradation.blur_sigma_range);
    deg.get("occluder_probability", g.degradation.occluder_probability);
    deg.get("occluder_area_fraction_range", g.degradation.occluder_area_fraction_range);
    deg.get("deform_amplitude", g.degradation.deform_amplitude);
    deg.finish();
    data.finish();
  }
  auto& t = cfg.train;
  {
    auto train = root.child("train");
    train.get("epochs", t.epochs);
    train.get("steps_per_epoch", t.steps_per_epoch);
    train.get("videos_per_batch", t.videos_per_batch);
    train.get("frames_per_video", t.frames_per_video);
    train.get("learning_rate", t.learning_rate);
    train.get("lr_drop_epochs", t.lr_drop_epochs);
    train.get("lr_drop_factor", t.lr_drop_factor);
    train.get("warmup_steps", t.warmup_steps);
    train.get("grad_clip_norm", t.grad_clip_norm);
    train.get("momentum", t.momentum);
    train.get("weight_decay", t.weight_decay);
    train.get("log_every", t.log_every);
    train.get("probe_videos", t.probe_videos);
    train.get("eval_every_epochs", t.eval_every_epochs);
    train.finish();
  }
  {
    auto cab = root.child("cab");
    cab.get("enabled", t.cab_enabled);
    cab.get("conv_channels", t.cab.conv_channels);
    cab.get("proj_hidden", t.cab.proj_hidden);
    cab.get("proj_out", t.cab.proj_out);
    cab.get("temperature", t.cab.temperature);
    cab.finish();
  }
  {
    auto dlw = root.child("dlw");
    dlw.get("enabled", t.dlw_enabled);
    dlw.get("initial_weight", t.aux_weight);
    dlw.get("cutoff_step", t.dlw_cutoff_step);
    dlw.finish();
  }
  {
    auto det = root.child("detector");
    det.get("stage_channels", t.detector.backbone.stage_channels);
    det.get("tap_stage", t.detector.backbone.tap_stage);
    det.get("num_classes", t.detector.num_classes);
    det.get("head_channels", t.detector.head_channels);
    det.get("score_threshold", t.detector.score_threshold);
    det.get("nms_threshold", t.detector.nms_threshold);
    det.get("max_detections", t.detector.max_detections);
    det.finish();
  }
  {
    auto sw = root.child("sweep");
    sw.get("temperature", cfg.temperature_grid);
    sw.get("weight", cfg.weight_grid);
    sw.finish();
  }
  root.finish();
  t.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  try {
    generation.validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (train.seed != seed) throw ConfigError("config: training seed must equal the root seed");
  if (train.detector.num_classes != kNumShapeClasses) {
    throw ConfigError("config: the synthetic data has " + std::to_string(kNumShapeClasses) + " classes");
  }
  for (double tau : temperature_grid) {
    if (!(tau > 0.0)) throw ConfigError("config: temperature grid values must be > 0");
  }
  for (double w : weight_grid) {
    if (!(w >= 0.0)) throw ConfigError("config: weight grid values must be >= 0");
  }
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string normalized_config(const RunConfig& cfg) { return to_json(cfg).dump(2); }

}  // namespace clab
