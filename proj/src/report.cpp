#include "clab/report.hpp"

#include <charconv>
#include <iomanip>
#include <sstream>
#include <vector>

#include "clab/config.hpp"

namespace clab {
namespace {

std::string class_name(int k) {
  if (k >= 0 && static_cast<std::size_t>(k) < kNumShapeClasses) return shape_name(static_cast<ShapeClass>(k));
  return "class_" + std::to_string(k);
}

}  // namespace

nlohmann::json eval_to_json(const EvalResult& eval) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [k, ap] : eval.per_class_ap) per_class[class_name(k)] = ap;
  nlohmann::json gap = nlohmann::json::array();
  for (auto [t, g] : eval.alignment_gap_curve) gap.push_back({t, g});
  return {{"map", eval.map},
          {"per_class_ap", per_class},
          {"detections", eval.counts.detections},
          {"ground_truths", eval.counts.ground_truths},
          {"matches", eval.counts.matches},
          {"alignment_gap_curve", gap}};
}

std::string eval_report_text(const EvalResult& eval) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "class        AP@0.5\n";
  for (const auto& [k, ap] : eval.per_class_ap) out << std::left << std::setw(12) << class_name(k) << ' ' << ap << '\n';
  out << std::left << std::setw(12) << "mAP" << ' ' << eval.map << '\n';
  out << "detections " << eval.counts.detections << ", ground truths " << eval.counts.ground_truths << ", matched "
      << eval.counts.matches << '\n';
  return out.str();
}

std::string dataset_inventory(const Dataset& dataset, const std::string& name) {
  std::size_t frames = 0;
  std::vector<std::size_t> objects(dataset.num_classes, 0);
  for (const auto& v : dataset.videos) {
    frames += v.frames.size();
    for (const auto& per_frame : v.annotations) {
      for (const auto& gt : per_frame) {
        if (gt.class_id >= 0 && static_cast<std::size_t>(gt.class_id) < objects.size()) ++objects[gt.class_id];
      }
    }
  }
  std::ostringstream out;
  out << name << ": " << dataset.videos.size() << " videos, " << frames << " frames";
  for (std::size_t k = 0; k < objects.size(); ++k) out << ", " << objects[k] << " " << class_name(static_cast<int>(k));
  out << " boxes, content hash " << hex64(content_hash(dataset));
  return out.str();
}

std::uint64_t content_hash(const Dataset& dataset) {
  std::string bytes;
  auto put_number = [&](double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    bytes.append(buf, res.ptr);
    bytes.push_back(' ');
  };
  put_number(static_cast<double>(dataset.num_classes));
  for (const auto& v : dataset.videos) {
    put_number(v.video_id);
    for (std::size_t f = 0; f < v.frames.size(); ++f) {
      const auto& img = v.frames[f];
      put_number(static_cast<double>(img.height));
      put_number(static_cast<double>(img.width));
      bytes.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
      for (const auto& gt : v.annotations[f]) {
        for (double c : {static_cast<double>(gt.track_id), static_cast<double>(gt.class_id), gt.box.x1, gt.box.y1,
                         gt.box.x2, gt.box.y2}) {
          put_number(c);
        }
      }
    }
  }
  return fnv1a64(bytes);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

}  // namespace clab
