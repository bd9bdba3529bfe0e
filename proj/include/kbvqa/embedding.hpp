#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace kbvqa {

inline constexpr std::size_t kDefaultEmbeddingDim = 384;

/// Dense sentence embedding. All similarity computations go through these.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t dim() const noexcept { return values_.size(); }
  const std::vector<double>& values() const noexcept { return values_; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<double> values_;
};

}  // namespace kbvqa
