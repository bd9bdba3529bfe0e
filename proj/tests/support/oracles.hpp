#pragma once
// Brute-force reference implementations, written without reusing library code.

#include <algorithm>
#include <cstddef>
#include <vector>

#include "kbvqa/geometry.hpp"

namespace kbvqa::test {

inline double ref_overlap(const geometry::BBox& a, const geometry::BBox& b) {
  const double wa = a.x1 - a.x0, ha = a.y1 - a.y0;
  const double wb = b.x1 - b.x0, hb = b.y1 - b.y0;
  const double area_a = wa * ha, area_b = wb * hb;
  if (area_a <= 0 || area_b <= 0) return 0.0;
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (iw <= 0 || ih <= 0) return 0.0;
  return (iw * ih) / std::min(area_a, area_b);
}

// Repeatedly picks the largest unvisited box (lowest index on ties) and keeps
// it unless it overlaps an already-kept box beyond the threshold.
inline std::vector<geometry::Detection> ref_suppress(const std::vector<geometry::Detection>& dets,
                                                     double threshold) {
  std::vector<bool> visited(dets.size(), false);
  std::vector<geometry::Detection> kept;
  for (std::size_t round = 0; round < dets.size(); ++round) {
    std::size_t best = dets.size();
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (visited[i]) continue;
      if (best == dets.size() || dets[i].box.area() > dets[best].box.area()) best = i;
    }
    visited[best] = true;
    bool drop = false;
    for (const auto& k : kept) drop = drop || ref_overlap(dets[best].box, k.box) > threshold;
    if (!drop) kept.push_back(dets[best]);
  }
  return kept;
}

// Indices of the k highest scores, ties by index, via insertion into a
// sorted list.
inline std::vector<std::size_t> ref_top_k(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto pos = order.begin();
    while (pos != order.end() && scores[*pos] >= scores[i]) ++pos;
    order.insert(pos, i);
  }
  if (order.size() > k) order.resize(k);
  return order;
}

}  // namespace kbvqa::test
