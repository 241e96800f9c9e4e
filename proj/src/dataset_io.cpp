#include <png.h>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "clab/synthetic.hpp"
#include "json.hpp"

namespace clab {
namespace fs = std::filesystem;

void write_png(const Image& image, const fs::path& path) {
  std::vector<std::uint8_t> interleaved(image.pixels.size());
  const std::size_t area = image.height * image.width;
  for (std::size_t i = 0; i < area; ++i) {
    for (std::size_t c = 0; c < kImageChannels; ++c) interleaved[i * kImageChannels + c] = image.pixels[c * area + i];
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, interleaved.data(), 0, nullptr)) {
    throw std::runtime_error("write_png: " + path.string() + ": " + png.message);
  }
}

Image read_png(const fs::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw std::runtime_error("read_png: " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> interleaved(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, interleaved.data(), 0, nullptr)) {
    throw std::runtime_error("read_png: " + path.string() + ": " + png.message);
  }
  Image image(png.height, png.width);
  const std::size_t area = image.height * image.width;
  for (std::size_t i = 0; i < area; ++i) {
    for (std::size_t c = 0; c < kImageChannels; ++c) image.pixels[c * area + i] = interleaved[i * kImageChannels + c];
  }
  return image;
}

namespace {

constexpr const char* kFormat = "clab-synthetic-v1";
constexpr const char* kAnnotationFile = "annotations.txt";

std::string frame_name(std::size_t f) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04zu.png", f);
  return buf;
}

std::string video_dir_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "video_%04zu", i);
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

template <typename T>
T parse_field(const std::string& token, const fs::path& file, std::size_t line) {
  T value{};
  auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || end != token.data() + token.size()) {
    throw std::runtime_error(file.string() + ":" + std::to_string(line) + ": malformed field '" + token + "'");
  }
  return value;
}

}  // namespace

void write_dataset(const Dataset& dataset, const fs::path& directory) {
  fs::create_directories(directory);
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["num_classes"] = dataset.num_classes;
  manifest["videos"] = nlohmann::json::array();
  for (std::size_t i = 0; i < dataset.videos.size(); ++i) {
    const Video& v = dataset.videos[i];
    if (v.annotations.size() != v.frames.size()) {
      throw std::invalid_argument("write_dataset: video " + std::to_string(v.video_id) +
                                  " has mismatched frame and annotation counts");
    }
    const fs::path vdir = directory / video_dir_name(i);
    fs::create_directories(vdir);
    for (std::size_t f = 0; f < v.frames.size(); ++f) write_png(v.frames[f], vdir / frame_name(f));
    std::ofstream ann(vdir / kAnnotationFile);
    if (!ann) throw std::runtime_error("write_dataset: cannot write " + (vdir / kAnnotationFile).string());
    ann << "# frame track class x1 y1 x2 y2\n";
    for (std::size_t f = 0; f < v.annotations.size(); ++f) {
      for (const auto& gt : v.annotations[f]) {
        ann << f << ' ' << gt.track_id << ' ' << gt.class_id << ' ' << format_double(gt.box.x1) << ' '
            << format_double(gt.box.y1) << ' ' << format_double(gt.box.x2) << ' ' << format_double(gt.box.y2)
            << '\n';
      }
    }
    manifest["videos"].push_back({{"video_id", v.video_id}, {"dir", video_dir_name(i)}, {"num_frames", v.frames.size()}});
  }
  std::ofstream out(directory / "dataset.json");
  if (!out) throw std::runtime_error("write_dataset: cannot write manifest in " + directory.string());
  out << manifest.dump(2) << '\n';
}

Dataset read_dataset(const fs::path& directory) {
  const fs::path manifest_path = directory / "dataset.json";
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("read_dataset: missing manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("read_dataset: malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat) {
    throw std::runtime_error("read_dataset: " + manifest_path.string() + " is not a " + kFormat + " manifest");
  }

  Dataset ds;
  ds.num_classes = manifest.at("num_classes").get<std::size_t>();
  for (const auto& entry : manifest.at("videos")) {
    Video v;
    v.video_id = entry.at("video_id").get<int>();
    const fs::path vdir = directory / entry.at("dir").get<std::string>();
    const auto num_frames = entry.at("num_frames").get<std::size_t>();

    std::size_t pngs = 0;
    if (fs::is_directory(vdir)) {
      for (const auto& file : fs::directory_iterator(vdir)) pngs += file.path().extension() == ".png" ? 1 : 0;
    }
    if (pngs != num_frames) {
      throw std::runtime_error("read_dataset: " + vdir.string() + " holds " + std::to_string(pngs) +
                               " images but the manifest lists " + std::to_string(num_frames) + " frames");
    }
    for (std::size_t f = 0; f < num_frames; ++f) v.frames.push_back(read_png(vdir / frame_name(f)));

    const fs::path ann_path = vdir / kAnnotationFile;
    std::ifstream ann(ann_path);
    if (!ann) throw std::runtime_error("read_dataset: missing annotation file " + ann_path.string());
    v.annotations.assign(num_frames, {});
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(ann, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream fields(line);
      std::vector<std::string> tok;
      for (std::string t; fields >> t;) tok.push_back(t);
      if (tok.size() != 7) {
        throw std::runtime_error(ann_path.string() + ":" + std::to_string(line_no) + ": expected 7 fields, got " +
                                 std::to_string(tok.size()));
      }
      const auto frame = parse_field<std::size_t>(tok[0], ann_path, line_no);
      if (frame >= num_frames) {
        throw std::runtime_error(ann_path.string() + ":" + std::to_string(line_no) + ": frame " +
                                 std::to_string(frame) + " beyond the " + std::to_string(num_frames) + " images");
      }
      GroundTruthBox gt;
      gt.track_id = parse_field<int>(tok[1], ann_path, line_no);
      gt.class_id = parse_field<int>(tok[2], ann_path, line_no);
      gt.box = {parse_field<double>(tok[3], ann_path, line_no), parse_field<double>(tok[4], ann_path, line_no),
                parse_field<double>(tok[5], ann_path, line_no), parse_field<double>(tok[6], ann_path, line_no)};
      if (gt.class_id < 0 || static_cast<std::size_t>(gt.class_id) >= ds.num_classes || !gt.box.valid()) {
        throw std::runtime_error(ann_path.string() + ":" + std::to_string(line_no) + ": invalid class or box");
      }
      v.annotations[frame].push_back(gt);
    }
    ds.videos.push_back(std::move(v));
  }
  return ds;
}

}  // namespace clab
