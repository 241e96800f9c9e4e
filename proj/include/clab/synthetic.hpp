#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "clab/boxes.hpp"
#include "clab/rng.hpp"
#include "clab/tensor.hpp"

namespace clab {

enum class ShapeClass : int { kCircle = 0, kRectangle = 1, kTriangle = 2 };
inline constexpr std::size_t kNumShapeClasses = 3;
inline constexpr std::size_t kImageChannels = 3;

const char* shape_name(ShapeClass s);

struct TrackState {
  double center_x = 0;
  double center_y = 0;
  double scale = 0;     // circumradius in pixels
  double rotation = 0;  // radians
};

struct ObjectTrack {
  int track_id = 0;
  ShapeClass shape = ShapeClass::kCircle;
  std::vector<TrackState> trajectory;  // one entry per frame
  std::array<double, 3> color{};       // RGB in [0, 1]
  std::uint64_t texture_seed = 0;
};

struct DegradationConfig {
  std::array<double, 2> blur_sigma_range{0.0, 1.5};
  double occluder_probability = 0.3;
  std::array<double, 2> occluder_area_fraction_range{0.1, 0.4};  // of the occluded object's box
  double deform_amplitude = 0.1;  // vertex jitter as a fraction of the object scale

  void validate() const;
  bool operator==(const DegradationConfig&) const = default;
};

struct SyntheticVideoSpec {
  int video_id = 0;
  std::size_t num_frames = 1;
  std::size_t height = 128;
  std::size_t width = 128;
  std::vector<ObjectTrack> tracks;
  DegradationConfig degradation;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument when an invariant fails, including a track
  // center leaving the image.
  void validate() const;
};

// 8-bit RGB image stored channel-planar ([3, H, W]).
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w) : height(h), width(w), pixels(kImageChannels * h * w, 0) {}
  std::uint8_t& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  bool operator==(const Image&) const = default;
};

struct Video {
  int video_id = 0;
  std::vector<Image> frames;
  std::vector<std::vector<GroundTruthBox>> annotations;  // per frame

  std::size_t num_frames() const { return frames.size(); }
  bool operator==(const Video&) const = default;
};

struct Dataset {
  std::size_t num_classes = kNumShapeClasses;
  std::vector<Video> videos;
  bool operator==(const Dataset&) const = default;
};

// Renders every frame. Boxes tightly enclose each object's rendered pixels before
// occluders, blur and noise are applied.
Video generate_video(const SyntheticVideoSpec& spec);

// Parameters for drawing random video specs.
struct GenerationConfig {
  std::size_t train_videos = 200;
  std::size_t val_videos = 50;
  std::size_t frames_per_video = 16;
  std::size_t height = 128;
  std::size_t width = 128;
  std::size_t min_tracks = 1;
  std::size_t max_tracks = 3;
  double min_scale = 7.0;
  double max_scale = 16.0;
  double max_speed = 3.0;  // pixels per frame
  DegradationConfig degradation;

  void validate() const;
  bool operator==(const GenerationConfig&) const = default;
};

SyntheticVideoSpec make_video_spec(int video_id, std::uint64_t seed, const GenerationConfig& cfg);

enum class Split { kTrain, kVal };
Dataset generate_dataset(const GenerationConfig& cfg, std::uint64_t root_seed, Split split);

enum class FrameRole : std::uint8_t { kTarget, kSupport };

// N videos x T frames, video-major: slot n occupies rows [n*T, (n+1)*T) with the
// target first.
struct VideoClipBatch {
  std::size_t videos = 0;
  std::size_t frames_per_video = 0;
  Tensor<float> frames;  // [N*T, 3, H, W] in [0, 1]
  std::vector<int> video_index;
  std::vector<FrameRole> frame_role;
  std::vector<std::vector<GroundTruthBox>> annotations;  // per target frame (per video slot)
  std::vector<std::size_t> source_video;                 // dataset index per row
  std::vector<std::size_t> source_frame;                 // frame index per row

  std::vector<std::size_t> target_rows() const;
};

// Draws N videos without replacement, one uniform target frame per video and T-1
// distinct support frames. With `contrastive` set, N >= 2 and T >= 2 are required.
VideoClipBatch sample_training_batch(const Dataset& dataset, std::size_t videos, std::size_t frames_per_video,
                                     Rng& rng, bool contrastive = true);

// Converts frames to a float tensor [B, 3, H, W] scaled to [0, 1].
Tensor<float> frames_to_tensor(std::span<const Image* const> frames);

void write_dataset(const Dataset& dataset, const std::filesystem::path& directory);
Dataset read_dataset(const std::filesystem::path& directory);

void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

}  // namespace clab
