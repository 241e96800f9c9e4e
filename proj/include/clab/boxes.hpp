#pragma once

#include <algorithm>

namespace clab {

// Axis-aligned box in pixel coordinates, x1 < x2 and y1 < y2 when valid.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 < x2 && y1 < y2; }
  bool operator==(const Box&) const = default;
};

struct GroundTruthBox {
  Box box;
  int class_id = 0;
  int track_id = 0;
  bool operator==(const GroundTruthBox&) const = default;
};

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0;
  bool operator==(const Detection&) const = default;
};

// Intersection over union; 0 when the union is empty.
inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace clab
