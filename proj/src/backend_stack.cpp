#include "kbvqa/backend_stack.hpp"

#include <charconv>

namespace kbvqa::backends {

void BackendConfig::set_kind(const std::string& spec) {
  if (spec == "http") {
    kind = Kind::Http;
    return;
  }
  if (spec == "mock") {
    kind = Kind::Mock;
    return;
  }
  if (spec.rfind("mock:", 0) == 0) {
    const std::string digits = spec.substr(5);
    std::uint64_t seed = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), seed);
    if (digits.empty() || ec != std::errc{} || ptr != digits.data() + digits.size()) {
      throw ConfigError("invalid mock seed in --backend '" + spec + "'");
    }
    kind = Kind::Mock;
    mock_seed = seed;
    return;
  }
  throw ConfigError("unknown backend '" + spec + "' (expected mock[:seed] or http)");
}

json RoutingService::invoke(const BackendRequest& request) {
  if (auto it = routes_.find(request.backend_id); it != routes_.end()) return it->second->invoke(request);
  return fallback_->invoke(request);
}

BackendStack build_backend_stack(const BackendConfig& config, const std::vector<std::string>& captioner_ids,
                                 std::shared_ptr<Service> base) {
  if (!base) {
    if (config.kind == BackendConfig::Kind::Mock) {
      base = std::make_shared<MockService>(config.mock_seed, config.mock_script, config.embedding_dim);
    } else {
      auto router = std::make_shared<RoutingService>(std::make_shared<HttpService>(config.http));
      for (const auto& [id, url] : config.routes) {
        HttpOptions opts = config.http;
        opts.base_url = url;
        router->add_route(id, std::make_shared<HttpService>(opts));
      }
      base = router;
    }
  }

  BackendStack stack;
  stack.transport = std::make_shared<CountingService>(std::move(base));
  std::shared_ptr<Service> top = stack.transport;
  if (config.cache_dir) {
    stack.cache = std::make_shared<CachedService>(top, std::make_shared<CacheStore>(*config.cache_dir));
    top = stack.cache;
  }

  stack.set.embedder = std::make_shared<ServiceEmbedder>(config.embedder_id, top, config.embedding_dim);
  stack.set.grounder = std::make_shared<ServiceGrounder>(config.grounder_id, top, config.image_transfer);
  stack.set.chat = std::make_shared<ServiceChat>(config.chat_id, top);
  for (const auto& id : captioner_ids) {
    stack.set.captioners[id] = std::make_shared<ServiceCaptioner>(id, top, config.image_transfer);
  }
  return stack;
}

}  // namespace kbvqa::backends
