#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kbvqa/backends.hpp"
#include "kbvqa/geometry.hpp"

namespace kbvqa::backends {

/// Canned responses for MockService. Rules are tried in order; the first
/// match wins and an empty match field matches anything. Unmatched requests
/// fall through to seeded synthetic output.
///
/// JSON form:
///   {
///     "image_size": {"width": 640, "height": 480},
///     "ground":   [{"prompt_contains": "", "image_contains": "", "detections":
///                    [{"box": [x0,y0,x1,y1], "score": 0.9, "label": "cake"}]}],
///     "captions": [{"backend": "llava", "instruction_contains": "", "image_contains": "",
///                   "texts": ["..."]}],
///     "chat":     [{"prefix": "", "contains": "", "reply": "..."}],
///     "embeddings": {"some text": {"0": 1.0, "7": -0.5}}
///   }
/// Embedding overrides are sparse index -> value maps (or dense arrays).
struct MockScript {
  struct GroundRule {
    std::string prompt_contains;
    std::string image_contains;
    std::vector<geometry::Detection> detections;
  };
  struct CaptionRule {
    std::string backend;
    std::string instruction_contains;
    std::string image_contains;
    std::vector<std::string> texts;
  };
  struct ChatRule {
    std::string prefix;
    std::string contains;
    std::string reply;
  };

  std::optional<geometry::ImageSize> image_size;
  std::vector<GroundRule> ground;
  std::vector<CaptionRule> captions;
  std::vector<ChatRule> chat;
  std::map<std::string, nlohmann::json> embeddings;

  // Throws ConfigError on unknown keys or wrong types.
  static MockScript from_json(const nlohmann::json& j);
  static MockScript load(const std::filesystem::path& path);
};

/// In-process stand-in for every model role. Responses are pure functions of
/// (seed, script, request), so whole pipeline runs are bit-reproducible.
///
/// Synthetic behaviour when no rule matches:
///  - embed: sum of per-token seeded random vectors over non-stop-word
///    tokens, L2-normalized, so texts sharing words are similar;
///  - ground: 0-2 seeded boxes per prompt phrase;
///  - caption: n template sentences seeded by (backend, image, region,
///    instruction, index);
///  - chat: recognises the pipeline's prompt templates and answers in the
///    expected shape (label, short summary, two QA pairs, short answer).
class MockService final : public Service {
 public:
  explicit MockService(std::uint64_t seed = 0, MockScript script = {},
                       std::size_t dim = kDefaultEmbeddingDim);

  nlohmann::json invoke(const BackendRequest& request) override;

 private:
  nlohmann::json embed(const nlohmann::json& payload) const;
  nlohmann::json ground(const nlohmann::json& payload) const;
  nlohmann::json caption(const std::string& backend_id, const nlohmann::json& payload) const;
  nlohmann::json chat(const nlohmann::json& payload) const;

  std::vector<double> embed_text(const std::string& text) const;
  geometry::ImageSize image_size() const;

  std::uint64_t seed_;
  MockScript script_;
  std::size_t dim_;
};

}  // namespace kbvqa::backends
