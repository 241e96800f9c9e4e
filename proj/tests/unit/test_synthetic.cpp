#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "clab/report.hpp"
#include "clab/synthetic.hpp"
#include "doctest.h"

using namespace clab;
namespace fs = std::filesystem;

namespace {

SyntheticVideoSpec one_track_spec(std::array<double, 2> blur) {
  SyntheticVideoSpec spec;
  spec.num_frames = 3;
  spec.height = spec.width = 64;
  spec.seed = 77;
  spec.degradation.blur_sigma_range = blur;
  spec.degradation.occluder_probability = 0;
  ObjectTrack t;
  t.shape = ShapeClass::kRectangle;
  t.color = {1.0, 0.0, 1.0};
  for (std::size_t f = 0; f < spec.num_frames; ++f) t.trajectory.push_back({32.0 + f, 30.0, 12.0, 0.3});
  spec.tracks.push_back(t);
  return spec;
}

double pixel_variance(const Image& img) {
  double mean = 0, sq = 0;
  for (auto p : img.pixels) mean += p;
  mean /= static_cast<double>(img.pixels.size());
  for (auto p : img.pixels) sq += (p - mean) * (p - mean);
  return sq / static_cast<double>(img.pixels.size());
}

GenerationConfig small_generation(std::size_t train_videos) {
  GenerationConfig g;
  g.train_videos = train_videos;
  g.val_videos = 2;
  g.frames_per_video = 4;
  g.height = g.width = 48;
  g.min_scale = 5;
  g.max_scale = 9;
  return g;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("clab_test_" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_SUITE("synthetic") {
  TEST_CASE("zero tracks give background-only frames") {
    SyntheticVideoSpec spec;
    spec.num_frames = 4;
    spec.height = spec.width = 32;
    const Video v = generate_video(spec);
    REQUIRE(v.frames.size() == 4);
    for (const auto& a : v.annotations) CHECK(a.empty());
  }

  TEST_CASE("generation is deterministic") {
    const auto spec = make_video_spec(3, 1234, GenerationConfig{});
    CHECK(generate_video(spec) == generate_video(spec));
    CHECK(generate_dataset(small_generation(3), 5, Split::kTrain) == generate_dataset(small_generation(3), 5, Split::kTrain));
    CHECK(content_hash(generate_dataset(small_generation(3), 5, Split::kTrain)) !=
          content_hash(generate_dataset(small_generation(3), 6, Split::kTrain)));
  }

  TEST_CASE("blur lowers per-frame pixel variance") {
    const Video sharp = generate_video(one_track_spec({0, 0}));
    const Video blurred = generate_video(one_track_spec({2, 2}));
    for (std::size_t f = 0; f < sharp.frames.size(); ++f) {
      CHECK(pixel_variance(blurred.frames[f]) < pixel_variance(sharp.frames[f]));
    }
  }

  TEST_CASE("boxes are tight around the rendered shape") {
    const Video v = generate_video(one_track_spec({0, 0}));
    auto is_object = [&](const Image& img, long x, long y) {
      return img.at(0, y, x) > 200 && img.at(1, y, x) < 60 && img.at(2, y, x) > 200;
    };
    for (std::size_t f = 0; f < v.frames.size(); ++f) {
      REQUIRE(v.annotations[f].size() == 1);
      const Box b = v.annotations[f][0].box;
      const Image& img = v.frames[f];
      bool top = false, bottom = false, left = false, right = false;
      for (long x = static_cast<long>(b.x1); x < static_cast<long>(b.x2); ++x) {
        top |= is_object(img, x, static_cast<long>(b.y1));
        bottom |= is_object(img, x, static_cast<long>(b.y2) - 1);
      }
      for (long y = static_cast<long>(b.y1); y < static_cast<long>(b.y2); ++y) {
        left |= is_object(img, static_cast<long>(b.x1), y);
        right |= is_object(img, static_cast<long>(b.x2) - 1, y);
      }
      CHECK((top && bottom && left && right));
      // Nothing of the object lies outside the box.
      for (long y = 0; y < 64; ++y) {
        for (long x = 0; x < 64; ++x) {
          if (x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2) continue;
          CHECK_FALSE(is_object(img, x, y));
        }
      }
    }
  }

  TEST_CASE("occluders keep the full box") {
    auto spec = one_track_spec({0, 0});
    const Video clear = generate_video(spec);
    spec.degradation.occluder_probability = 1.0;
    const Video occluded = generate_video(spec);
    CHECK(clear.annotations == occluded.annotations);
    CHECK(clear.frames != occluded.frames);
  }

  TEST_CASE("every generated box lies inside the image with positive extent") {
    const Dataset ds = generate_dataset(GenerationConfig{}, 11, Split::kVal);
    CHECK(ds.videos.size() == 50);
    std::size_t boxes = 0;
    for (const auto& v : ds.videos) {
      CHECK(v.frames.size() == 16);
      for (const auto& frame : v.annotations) {
        for (const auto& gt : frame) {
          CHECK(gt.box.x1 >= 0);
          CHECK(gt.box.y1 >= 0);
          CHECK(gt.box.x1 < gt.box.x2);
          CHECK(gt.box.y1 < gt.box.y2);
          CHECK(gt.box.x2 <= 128);
          CHECK(gt.box.y2 <= 128);
          ++boxes;
        }
      }
      // Object identity persists across frames.
      std::map<int, int> shape_of;
      for (const auto& frame : v.annotations) {
        for (const auto& gt : frame) {
          auto [it, fresh] = shape_of.emplace(gt.track_id, gt.class_id);
          CHECK(it->second == gt.class_id);
        }
      }
    }
    CHECK(boxes > 0);
  }

  TEST_CASE("spec validation") {
    auto spec = one_track_spec({0, 0});
    spec.tracks[0].trajectory[1].center_x = 80;  // leaves a 64 px image
    CHECK_THROWS_AS(generate_video(spec), std::invalid_argument);
    spec = one_track_spec({0, 0});
    spec.height = 16;
    CHECK_THROWS_AS(generate_video(spec), std::invalid_argument);
    spec = one_track_spec({0, 0});
    spec.num_frames = 0;
    CHECK_THROWS_AS(generate_video(spec), std::invalid_argument);
    spec = one_track_spec({0, 0});
    spec.degradation.blur_sigma_range = {2, 1};
    CHECK_THROWS_AS(generate_video(spec), std::invalid_argument);
    spec = one_track_spec({0, 0});
    spec.degradation.occluder_area_fraction_range = {0.1, 0.6};
    CHECK_THROWS_AS(generate_video(spec), std::invalid_argument);
    GenerationConfig g;
    g.train_videos = 0;
    CHECK_THROWS_AS(generate_dataset(g, 1, Split::kTrain), std::invalid_argument);
  }

  TEST_CASE("batch sampling follows the video-major layout") {
    const Dataset ds = generate_dataset(small_generation(20), 2, Split::kTrain);
    Rng rng(8);
    SUBCASE("N=16, T=3") {
      const auto b = sample_training_batch(ds, 16, 3, rng);
      CHECK(b.frames.shape() == Shape{48, 3, 48, 48});
      CHECK(b.annotations.size() == 16);
      std::map<int, int> per_video, targets;
      for (std::size_t i = 0; i < 48; ++i) {
        ++per_video[b.video_index[i]];
        if (b.frame_role[i] == FrameRole::kTarget) ++targets[b.video_index[i]];
      }
      CHECK(per_video.size() == 16);
      for (auto [v, c] : per_video) CHECK(c == 3);
      for (auto [v, c] : targets) CHECK(c == 1);
      std::set<std::size_t> sources(b.source_video.begin(), b.source_video.end());
      CHECK(sources.size() == 16);
      for (std::size_t n = 0; n < 16; ++n) {
        std::set<std::size_t> frames(b.source_frame.begin() + n * 3, b.source_frame.begin() + n * 3 + 3);
        CHECK(frames.size() == 3);
        CHECK(b.annotations[n] == ds.videos[b.source_video[n * 3]].annotations[b.source_frame[n * 3]]);
      }
    }
    SUBCASE("N=2, T=2") {
      const auto b = sample_training_batch(ds, 2, 2, rng);
      CHECK(b.frames.dim(0) == 4);
      CHECK(b.video_index == std::vector<int>{0, 0, 1, 1});
      CHECK(b.target_rows() == std::vector<std::size_t>{0, 2});
    }
    SUBCASE("degenerate and infeasible requests") {
      CHECK_THROWS_AS(sample_training_batch(ds, 1, 3, rng), std::invalid_argument);
      CHECK_THROWS_AS(sample_training_batch(ds, 2, 1, rng), std::invalid_argument);
      CHECK_NOTHROW(sample_training_batch(ds, 1, 1, rng, false));
      CHECK_THROWS_AS(sample_training_batch(ds, 21, 2, rng), std::invalid_argument);
      CHECK_THROWS_AS(sample_training_batch(ds, 2, 5, rng), std::invalid_argument);
    }
  }

  TEST_CASE("batch composition is determined by the seed") {
    const Dataset ds = generate_dataset(small_generation(10), 2, Split::kTrain);
    Rng a(42), b(42);
    const auto x = sample_training_batch(ds, 4, 3, a);
    const auto y = sample_training_batch(ds, 4, 3, b);
    CHECK(x.source_video == y.source_video);
    CHECK(x.source_frame == y.source_frame);
    CHECK(x.frames == y.frames);
  }

  TEST_CASE("pixel intensities are scaled to [0, 1]") {
    const Dataset ds = generate_dataset(small_generation(3), 2, Split::kTrain);
    Rng rng(1);
    const auto b = sample_training_batch(ds, 2, 2, rng);
    for (float v : b.frames.values()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  TEST_CASE("dataset round trip and inventory") {
    TempDir dir("roundtrip");
    const Dataset ds = generate_dataset(small_generation(3), 9, Split::kTrain);
    write_dataset(ds, dir.path);
    const Dataset back = read_dataset(dir.path);
    CHECK(back == ds);
    CHECK(back.videos.size() == 3);

    TempDir five("five");
    const Dataset ds5 = generate_dataset(small_generation(5), 9, Split::kTrain);
    write_dataset(ds5, five.path);
    const Dataset read5 = read_dataset(five.path);
    CHECK(read5.videos.size() == 5);
    for (const auto& v : read5.videos) CHECK(v.num_frames() == 4);
  }

  TEST_CASE("malformed datasets are rejected") {
    TempDir dir("malformed");
    const Dataset ds = generate_dataset(small_generation(2), 9, Split::kTrain);
    write_dataset(ds, dir.path);
    const fs::path video = dir.path / "video_0001";
    REQUIRE(fs::exists(video / "annotations.txt"));

    SUBCASE("missing annotation file") {
      fs::remove(video / "annotations.txt");
      CHECK_THROWS_AS(read_dataset(dir.path), std::runtime_error);
    }
    SUBCASE("malformed annotation line") {
      std::ofstream(video / "annotations.txt", std::ios::app) << "0 1 banana 0 0 1 1\n";
      CHECK_THROWS_AS(read_dataset(dir.path), std::runtime_error);
    }
    SUBCASE("image count mismatch") {
      fs::remove(video / "frame_0003.png");
      CHECK_THROWS_AS(read_dataset(dir.path), std::runtime_error);
    }
    SUBCASE("missing manifest") {
      fs::remove(dir.path / "dataset.json");
      CHECK_THROWS_AS(read_dataset(dir.path), std::runtime_error);
    }
  }
}
