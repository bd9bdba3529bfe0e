#pragma once

// Abstract interfaces for the four model roles the pipeline depends on.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kbvqa/embedding.hpp"
#include "kbvqa/geometry.hpp"

namespace kbvqa {

/// Reference to an image on the local filesystem.
struct ImageRef {
  std::string path;
};

struct GroundingResult {
  std::vector<geometry::Detection> detections;
  geometry::ImageSize image_size;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual const std::string& id() const = 0;
  virtual std::size_t dim() const = 0;
  // One vector per input, in input order.
  virtual std::vector<EmbeddingVector> embed(std::span<const std::string> texts) = 0;
};

class Grounder {
 public:
  virtual ~Grounder() = default;
  virtual const std::string& id() const = 0;
  virtual GroundingResult ground(const ImageRef& image, const std::string& prompt,
                                 double box_threshold) = 0;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual const std::string& id() const = 0;
  // An absent region means the whole image.
  virtual std::vector<std::string> caption(const ImageRef& image,
                                           const std::optional<geometry::BBox>& region,
                                           const std::string& instruction, int n) = 0;
};

class ChatLlm {
 public:
  virtual ~ChatLlm() = default;
  virtual const std::string& id() const = 0;
  virtual std::string chat(const std::string& prompt, int max_tokens, double temperature) = 0;
};

}  // namespace kbvqa
