#include "clab/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>

namespace clab {

const char* shape_name(ShapeClass s) {
  switch (s) {
    case ShapeClass::kCircle: return "circle";
    case ShapeClass::kRectangle: return "rectangle";
    case ShapeClass::kTriangle: return "triangle";
  }
  return "unknown";
}

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

bool ordered_range(const std::array<double, 2>& r) {
  return std::isfinite(r[0]) && std::isfinite(r[1]) && r[0] <= r[1];
}

struct Background {
  std::array<double, 3> base;
  std::array<double, 3> gradient;
  double angle;
  std::array<double, 4> wave;  // frequency x, frequency y, phase, amplitude
};

Background background_for(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xb6));
  Background bg{};
  for (auto& c : bg.base) c = rng.uniform(0.25, 0.6);
  for (auto& c : bg.gradient) c = rng.uniform(-0.12, 0.12);
  bg.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  bg.wave = {rng.uniform(0.02, 0.08), rng.uniform(0.02, 0.08), rng.uniform(0.0, 6.3), rng.uniform(0.03, 0.08)};
  return bg;
}

double color_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double d = 0;
  for (std::size_t c = 0; c < 3; ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(d);
}

struct Point {
  double x, y;
};

bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) inside = !inside;
  }
  return inside;
}

// Unit-circumradius outline in object coordinates.
std::vector<Point> base_outline(const ObjectTrack& track) {
  std::vector<Point> pts;
  switch (track.shape) {
    case ShapeClass::kCircle:
      for (int i = 0; i < 24; ++i) {
        const double a = 2.0 * std::numbers::pi * i / 24.0;
        pts.push_back({std::cos(a), std::sin(a)});
      }
      break;
    case ShapeClass::kRectangle: {
      Rng rng(derive_seed(track.texture_seed, 0xa5));
      const double phi = rng.uniform(std::numbers::pi / 6.0, std::numbers::pi / 4.0);
      const double hw = std::cos(phi), hh = std::sin(phi);
      pts = {{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}};
      break;
    }
    case ShapeClass::kTriangle:
      for (int i = 0; i < 3; ++i) {
        const double a = -std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * i / 3.0;
        pts.push_back({std::cos(a), std::sin(a)});
      }
      break;
  }
  return pts;
}

// Planar float image [3, H, W].
using FloatImage = std::vector<double>;

void gaussian_blur(FloatImage& img, std::size_t h, std::size_t w, double sigma) {
  if (sigma < 0.3) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;
  std::vector<double> tmp(h * w);
  const int hi = static_cast<int>(h), wi = static_cast<int>(w);
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    double* plane = img.data() + c * h * w;
    for (int y = 0; y < hi; ++y) {
      for (int x = 0; x < wi; ++x) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * plane[y * wi + std::clamp(x + k, 0, wi - 1)];
        }
        tmp[y * wi + x] = acc;
      }
    }
    for (int y = 0; y < hi; ++y) {
      for (int x = 0; x < wi; ++x) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * tmp[std::clamp(y + k, 0, hi - 1) * wi + x];
        }
        plane[y * wi + x] = acc;
      }
    }
  }
}

}  // namespace

void DegradationConfig::validate() const {
  require(ordered_range(blur_sigma_range) && blur_sigma_range[0] >= 0.0,
          "degradation: blur_sigma_range must be ordered and >= 0");
  require(occluder_probability >= 0.0 && occluder_probability <= 1.0,
          "degradation: occluder_probability must lie in [0, 1]");
  require(ordered_range(occluder_area_fraction_range) && occluder_area_fraction_range[0] > 0.0 &&
              occluder_area_fraction_range[1] <= 0.5,
          "degradation: occluder_area_fraction_range must be ordered within (0, 0.5]");
  require(deform_amplitude >= 0.0 && deform_amplitude < 1.0, "degradation: deform_amplitude must lie in [0, 1)");
}

void SyntheticVideoSpec::validate() const {
  require(num_frames >= 1, "video spec: num_frames must be >= 1");
  require(height >= 32 && width >= 32, "video spec: image dimensions must be >= 32");
  degradation.validate();
  std::set<int> ids;
  for (const auto& t : tracks) {
    const std::string who = "video " + std::to_string(video_id) + " track " + std::to_string(t.track_id);
    require(ids.insert(t.track_id).second, who + ": duplicate track id");
    require(static_cast<int>(t.shape) >= 0 && static_cast<std::size_t>(t.shape) < kNumShapeClasses,
            who + ": unknown shape class");
    require(t.trajectory.size() == num_frames, who + ": trajectory length does not match num_frames");
    for (double c : t.color) require(c >= 0.0 && c <= 1.0, who + ": color outside [0, 1]");
    for (std::size_t f = 0; f < num_frames; ++f) {
      const auto& s = t.trajectory[f];
      require(std::isfinite(s.center_x) && std::isfinite(s.center_y) && std::isfinite(s.rotation),
              who + ": non-finite trajectory");
      require(s.center_x >= 0.0 && s.center_x < static_cast<double>(width) && s.center_y >= 0.0 &&
                  s.center_y < static_cast<double>(height),
              who + ": center leaves the image at frame " + std::to_string(f));
      require(s.scale >= 2.0 && std::isfinite(s.scale), who + ": scale must be >= 2 px");
    }
  }
}

Video generate_video(const SyntheticVideoSpec& spec) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width;
  const Background bg = background_for(spec.seed);

  FloatImage background(kImageChannels * h * w);
  const double ca = std::cos(bg.angle), sa = std::sin(bg.angle);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double u = ((x + 0.5) / w - 0.5) * ca + ((y + 0.5) / h - 0.5) * sa;
      const double wave = bg.wave[3] * std::sin(bg.wave[0] * x + bg.wave[1] * y + bg.wave[2]);
      for (std::size_t c = 0; c < kImageChannels; ++c) {
        background[(c * h + y) * w + x] = bg.base[c] + bg.gradient[c] * u + wave;
      }
    }
  }

  std::vector<std::vector<Point>> outlines;
  std::vector<std::array<double, 3>> stripes;  // frequency, orientation, phase
  for (const auto& t : spec.tracks) {
    outlines.push_back(base_outline(t));
    Rng tex(derive_seed(t.texture_seed, 0x7e));
    stripes.push_back({tex.uniform(0.3, 0.9), tex.uniform(0.0, std::numbers::pi), tex.uniform(0.0, 6.3)});
  }

  Video video;
  video.video_id = spec.video_id;
  for (std::size_t f = 0; f < spec.num_frames; ++f) {
    Rng rng(derive_seed(spec.seed, 1000 + f));
    const auto& deg = spec.degradation;
    const double sigma = rng.uniform(deg.blur_sigma_range[0], deg.blur_sigma_range[1]);
    const double occ_draw = rng.uniform();
    const double occ_track = rng.uniform();
    const double occ_area = rng.uniform(deg.occluder_area_fraction_range[0], deg.occluder_area_fraction_range[1]);
    const double occ_aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
    const double occ_px = rng.uniform(), occ_py = rng.uniform();
    const double occ_gray = rng.uniform(0.05, 0.95);

    FloatImage img = background;
    std::vector<GroundTruthBox> boxes;
    for (std::size_t ti = 0; ti < spec.tracks.size(); ++ti) {
      const auto& track = spec.tracks[ti];
      const auto& s = track.trajectory[f];
      const double cr = std::cos(s.rotation), sr = std::sin(s.rotation);
      std::vector<Point> poly;
      double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
      for (const auto& p : outlines[ti]) {
        const double r = s.scale * (1.0 + deg.deform_amplitude * rng.uniform(-1.0, 1.0));
        const Point q{s.center_x + r * (p.x * cr - p.y * sr), s.center_y + r * (p.x * sr + p.y * cr)};
        poly.push_back(q);
        xmin = std::min(xmin, q.x), xmax = std::max(xmax, q.x);
        ymin = std::min(ymin, q.y), ymax = std::max(ymax, q.y);
      }
      const long x0 = std::max(0L, static_cast<long>(std::floor(xmin)));
      const long x1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(xmax)));
      const long y0 = std::max(0L, static_cast<long>(std::floor(ymin)));
      const long y1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(ymax)));
      long bx1 = static_cast<long>(w), by1 = static_cast<long>(h), bx2 = -1, by2 = -1;
      const auto& st = stripes[ti];
      for (long y = y0; y <= y1; ++y) {
        for (long x = x0; x <= x1; ++x) {
          const double px = x + 0.5, py = y + 0.5;
          if (!inside_polygon(poly, px, py)) continue;
          bx1 = std::min(bx1, x), bx2 = std::max(bx2, x);
          by1 = std::min(by1, y), by2 = std::max(by2, y);
          const double lx = (px - s.center_x) * cr + (py - s.center_y) * sr;
          const double ly = -(px - s.center_x) * sr + (py - s.center_y) * cr;
          const double shade =
              0.85 + 0.15 * std::sin(st[0] * (lx * std::cos(st[1]) + ly * std::sin(st[1])) + st[2]);
          for (std::size_t c = 0; c < kImageChannels; ++c) {
            img[(c * h + y) * w + x] = track.color[c] * shade;
          }
        }
      }
      if (bx2 < 0) {
        throw std::logic_error("generate_video: track " + std::to_string(track.track_id) +
                               " rendered no pixels at frame " + std::to_string(f));
      }
      boxes.push_back({Box{static_cast<double>(bx1), static_cast<double>(by1), static_cast<double>(bx2 + 1),
                           static_cast<double>(by2 + 1)},
                       static_cast<int>(track.shape), track.track_id});
    }

    if (!boxes.empty() && occ_draw < deg.occluder_probability) {
      const auto idx = std::min(boxes.size() - 1, static_cast<std::size_t>(occ_track * boxes.size()));
      const Box& target = boxes[idx].box;
      const double area = occ_area * target.area();
      const double ow = std::sqrt(area * occ_aspect), oh = std::sqrt(area / occ_aspect);
      const double cx = target.x1 + occ_px * target.width();
      const double cy = target.y1 + occ_py * target.height();
      const long ox0 = std::max(0L, std::lround(cx - ow / 2)), ox1 = std::min<long>(w, std::lround(cx + ow / 2));
      const long oy0 = std::max(0L, std::lround(cy - oh / 2)), oy1 = std::min<long>(h, std::lround(cy + oh / 2));
      for (long y = oy0; y < oy1; ++y) {
        for (long x = ox0; x < ox1; ++x) {
          for (std::size_t c = 0; c < kImageChannels; ++c) img[(c * h + y) * w + x] = occ_gray;
        }
      }
    }

    for (auto& v : img) v += 0.02 * rng.normal();
    gaussian_blur(img, h, w, sigma);

    Image frame(h, w);
    for (std::size_t i = 0; i < img.size(); ++i) {
      frame.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0));
    }
    video.frames.push_back(std::move(frame));
    video.annotations.push_back(std::move(boxes));
  }
  return video;
}

void GenerationConfig::validate() const {
  require(train_videos >= 1 && val_videos >= 1, "generation: train_videos and val_videos must be >= 1");
  require(frames_per_video >= 1, "generation: frames_per_video must be >= 1");
  require(height >= 32 && width >= 32, "generation: image dimensions must be >= 32");
  require(min_tracks <= max_tracks, "generation: min_tracks must not exceed max_tracks");
  require(min_scale >= 3.0 && min_scale <= max_scale, "generation: scale range must be ordered and >= 3");
  require(2.0 * max_scale < static_cast<double>(std::min(height, width)),
          "generation: max_scale too large for the image");
  require(max_speed >= 0.0, "generation: max_speed must be >= 0");
  degradation.validate();
}

SyntheticVideoSpec make_video_spec(int video_id, std::uint64_t seed, const GenerationConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  SyntheticVideoSpec spec;
  spec.video_id = video_id;
  spec.num_frames = cfg.frames_per_video;
  spec.height = cfg.height;
  spec.width = cfg.width;
  spec.degradation = cfg.degradation;
  spec.seed = seed;
  const Background bg = background_for(seed);

  const std::size_t n_tracks = cfg.min_tracks + rng.uniform_index(cfg.max_tracks - cfg.min_tracks + 1);
  for (std::size_t t = 0; t < n_tracks; ++t) {
    ObjectTrack track;
    track.track_id = static_cast<int>(t);
    track.shape = static_cast<ShapeClass>(rng.uniform_index(kNumShapeClasses));
    track.texture_seed = rng.next_u64();
    for (int attempt = 0; attempt < 32; ++attempt) {
      for (auto& c : track.color) c = rng.uniform(0.0, 1.0);
      if (color_distance(track.color, bg.base) > 0.45) break;
    }
    const double base_scale = rng.uniform(cfg.min_scale, cfg.max_scale);
    const double pulse = rng.uniform(0.0, 0.15), pulse_freq = rng.uniform(0.1, 0.4), pulse_phase = rng.uniform(0, 6.3);
    double rotation = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double spin = rng.uniform(-0.15, 0.15);
    const double margin = base_scale * 0.6;
    const double lo_x = margin, hi_x = static_cast<double>(cfg.width) - margin;
    const double lo_y = margin, hi_y = static_cast<double>(cfg.height) - margin;
    double x = rng.uniform(lo_x, hi_x), y = rng.uniform(lo_y, hi_y);
    const double speed = rng.uniform(0.0, cfg.max_speed);
    const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double vx = speed * std::cos(heading), vy = speed * std::sin(heading);
    for (std::size_t f = 0; f < cfg.frames_per_video; ++f) {
      const double scale = base_scale * (1.0 + pulse * std::sin(pulse_freq * f + pulse_phase));
      track.trajectory.push_back({x, y, scale, rotation});
      x += vx;
      y += vy;
      if (x < lo_x) x = 2 * lo_x - x, vx = -vx;
      if (x > hi_x) x = 2 * hi_x - x, vx = -vx;
      if (y < lo_y) y = 2 * lo_y - y, vy = -vy;
      if (y > hi_y) y = 2 * hi_y - y, vy = -vy;
      rotation += spin;
    }
    spec.tracks.push_back(std::move(track));
  }
  return spec;
}

Dataset generate_dataset(const GenerationConfig& cfg, std::uint64_t root_seed, Split split) {
  cfg.validate();
  const std::size_t count = split == Split::kTrain ? cfg.train_videos : cfg.val_videos;
  const std::uint64_t split_seed =
      derive_seed(root_seed, static_cast<std::uint64_t>(split == Split::kTrain ? Stream::kTrainVideos : Stream::kValVideos));
  Dataset ds;
  for (std::size_t i = 0; i < count; ++i) {
    ds.videos.push_back(generate_video(make_video_spec(static_cast<int>(i), derive_seed(split_seed, i), cfg)));
  }
  return ds;
}

std::vector<std::size_t> VideoClipBatch::target_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < frame_role.size(); ++i) {
    if (frame_role[i] == FrameRole::kTarget) rows.push_back(i);
  }
  return rows;
}

Tensor<float> frames_to_tensor(std::span<const Image* const> frames) {
  if (frames.empty()) throw std::invalid_argument("frames_to_tensor: no frames");
  const std::size_t h = frames[0]->height, w = frames[0]->width;
  Tensor<float> out({frames.size(), kImageChannels, h, w});
  for (std::size_t b = 0; b < frames.size(); ++b) {
    if (frames[b]->height != h || frames[b]->width != w) {
      throw std::invalid_argument("frames_to_tensor: frames differ in size");
    }
    auto dst = out.outer(b);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(frames[b]->pixels[i]) / 255.0f;
  }
  return out;
}

VideoClipBatch sample_training_batch(const Dataset& dataset, std::size_t videos, std::size_t frames_per_video,
                                     Rng& rng, bool contrastive) {
  if (videos == 0 || frames_per_video == 0) throw std::invalid_argument("sample_training_batch: N and T must be >= 1");
  if (contrastive && (videos < 2 || frames_per_video < 2)) {
    throw std::invalid_argument("sample_training_batch: contrastive batches need N >= 2 and T >= 2, got N=" +
                                std::to_string(videos) + " T=" + std::to_string(frames_per_video));
  }
  if (dataset.videos.size() < videos) {
    throw std::invalid_argument("sample_training_batch: dataset has " + std::to_string(dataset.videos.size()) +
                                " videos, batch needs " + std::to_string(videos));
  }
  std::vector<std::size_t> order(dataset.videos.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < videos; ++i) {
    std::swap(order[i], order[i + rng.uniform_index(order.size() - i)]);
  }

  VideoClipBatch batch;
  batch.videos = videos;
  batch.frames_per_video = frames_per_video;
  std::vector<const Image*> images;
  for (std::size_t n = 0; n < videos; ++n) {
    const Video& v = dataset.videos[order[n]];
    if (v.num_frames() < frames_per_video) {
      throw std::invalid_argument("sample_training_batch: video " + std::to_string(v.video_id) + " has " +
                                  std::to_string(v.num_frames()) + " frames, batch needs " +
                                  std::to_string(frames_per_video));
    }
    std::vector<std::size_t> frames(v.num_frames());
    for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = i;
    for (std::size_t i = 0; i < frames_per_video; ++i) {
      std::swap(frames[i], frames[i + rng.uniform_index(frames.size() - i)]);
    }
    for (std::size_t t = 0; t < frames_per_video; ++t) {
      batch.video_index.push_back(static_cast<int>(n));
      batch.frame_role.push_back(t == 0 ? FrameRole::kTarget : FrameRole::kSupport);
      batch.source_video.push_back(order[n]);
      batch.source_frame.push_back(frames[t]);
      images.push_back(&v.frames[frames[t]]);
    }
    batch.annotations.push_back(v.annotations[frames[0]]);
  }
  batch.frames = frames_to_tensor(images);
  return batch;
}

}  // namespace clab
