#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kbvqa/backends.hpp"
#include "kbvqa/mock_backend.hpp"
#include "kbvqa/pipeline.hpp"

namespace kbvqa::backends {

struct BackendConfig {
  enum class Kind { Mock, Http };

  Kind kind = Kind::Mock;
  std::uint64_t mock_seed = 0;
  MockScript mock_script;
  HttpOptions http;
  // backend id -> base URL; ids not listed use http.base_url.
  std::map<std::string, std::string> routes;
  ImageTransfer image_transfer = ImageTransfer::Path;
  std::string embedder_id = "minilm";
  std::string grounder_id = "grounding-dino";
  std::string chat_id = "llama3";
  std::size_t embedding_dim = kDefaultEmbeddingDim;
  std::optional<std::filesystem::path> cache_dir;

  // "mock", "mock:<seed>" or "http". Throws ConfigError otherwise.
  void set_kind(const std::string& spec);
};

/// Sends each request to the service registered for its backend id.
class RoutingService final : public Service {
 public:
  explicit RoutingService(std::shared_ptr<Service> fallback) : fallback_(std::move(fallback)) {}

  void add_route(const std::string& backend_id, std::shared_ptr<Service> service) {
    routes_[backend_id] = std::move(service);
  }
  json invoke(const BackendRequest& request) override;

 private:
  std::shared_ptr<Service> fallback_;
  std::map<std::string, std::shared_ptr<Service>> routes_;
};

/// A ready-to-use BackendSet plus handles on the layers beneath it.
/// Layering: typed adapters -> cache (optional) -> transport counter ->
/// mock or HTTP.
struct BackendStack {
  pipeline::BackendSet set;
  std::shared_ptr<CountingService> transport;
  std::shared_ptr<CachedService> cache;  // null without a cache dir
};

/// `base` replaces the mock/HTTP service at the bottom of the stack when
/// given (tests use it to inject faults).
BackendStack build_backend_stack(const BackendConfig& config, const std::vector<std::string>& captioner_ids,
                                 std::shared_ptr<Service> base = nullptr);

}  // namespace kbvqa::backends
