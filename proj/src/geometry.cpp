#include "kbvqa/geometry.hpp"

#include <algorithm>
#include <numeric>

namespace kbvqa::geometry {

std::vector<Detection> filter_by_confidence(std::span<const Detection> dets, double threshold) {
  std::vector<Detection> kept;
  kept.reserve(dets.size());
  for (const auto& d : dets) {
    if (d.score > threshold) kept.push_back(d);
  }
  return kept;
}

double overlap_ratio(const BBox& a, const BBox& b) noexcept {
  const double area_a = a.area();
  const double area_b = b.area();
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;

  const double iw = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double ih = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double ratio = (iw * ih) / std::min(area_a, area_b);
  return std::clamp(ratio, 0.0, 1.0);
}

std::vector<Detection> suppress_overlaps(std::span<const Detection> dets, double overlap_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return dets[i].box.area() > dets[j].box.area();
  });

  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const auto& candidate = dets[idx];
    const bool dominated = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return overlap_ratio(candidate.box, k.box) > overlap_threshold;
    });
    if (!dominated) kept.push_back(candidate);
  }
  return kept;
}

namespace {

// Grows [lo, hi] by factor * extent per side, or factor * limit around the
// centre when the interval is empty, then clamps to [0, limit].
void grow_interval(double& lo, double& hi, double limit, double factor) {
  const double extent = hi - lo;
  const double delta = extent > 0.0 ? factor * extent : factor * limit;
  lo = std::clamp(lo - delta, 0.0, limit);
  hi = std::clamp(hi + delta, 0.0, limit);
}

}  // namespace

BBox expand_region(const BBox& box, const ImageSize& img, double factor) {
  if (factor <= 0.0) return box;
  BBox out = box;
  grow_interval(out.x0, out.x1, static_cast<double>(img.width), factor);
  grow_interval(out.y0, out.y1, static_cast<double>(img.height), factor);
  return out;
}

std::size_t count_detections(std::span<const Detection> dets) noexcept { return dets.size(); }

}  // namespace kbvqa::geometry
