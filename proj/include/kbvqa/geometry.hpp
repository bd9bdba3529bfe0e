#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace kbvqa::geometry {

/// Axis-aligned box in pixel coordinates, x0 <= x1 and y0 <= y1.
struct BBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const noexcept { return x1 - x0; }
  double height() const noexcept { return y1 - y0; }
  double area() const noexcept { return width() * height(); }
  bool degenerate() const noexcept { return area() <= 0.0; }
  bool well_formed() const noexcept { return x0 <= x1 && y0 <= y1; }
  bool contains(const BBox& other) const noexcept {
    return x0 <= other.x0 && y0 <= other.y0 && x1 >= other.x1 && y1 >= other.y1;
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// A grounded region: box, detector confidence in [0,1], and the matched phrase.
struct Detection {
  BBox box;
  double score = 0.0;
  std::string label;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct ImageSize {
  int width = 0;
  int height = 0;

  bool valid() const noexcept { return width > 0 && height > 0; }
  BBox full_frame() const noexcept {
    return {0.0, 0.0, static_cast<double>(width), static_cast<double>(height)};
  }

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

// Keeps detections whose score is strictly greater than `threshold`, in input order.
std::vector<Detection> filter_by_confidence(std::span<const Detection> dets, double threshold);

// Intersection area over the smaller box's area. Zero if either box has zero area.
double overlap_ratio(const BBox& a, const BBox& b) noexcept;

/// Greedy overlap suppression favouring larger boxes.
///
/// Detections are visited in descending area order (ties by input index). A
/// detection is dropped when its overlap_ratio with any detection already kept
/// exceeds `overlap_threshold`. The result is returned in visiting order.
std::vector<Detection> suppress_overlaps(std::span<const Detection> dets, double overlap_threshold);

/// Grows each side of `box` outward by `factor` times the box's own extent on
/// that axis and clamps the result to the image. A zero extent grows by
/// `factor` times the image extent around the box centre instead, so a
/// positive factor never yields a degenerate box.
BBox expand_region(const BBox& box, const ImageSize& img, double factor);

std::size_t count_detections(std::span<const Detection> dets) noexcept;

}  // namespace kbvqa::geometry
