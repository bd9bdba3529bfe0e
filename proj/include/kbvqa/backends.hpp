#pragma once

// Wire-level backend services and the typed role adapters built on them.
//
// Every model call is expressed as a BackendRequest whose payload is exactly
// the JSON body of the corresponding HTTP endpoint. A Service turns a request
// into a response body; HTTP, mock, counting and caching services all share
// that one shape, so caching and call accounting work the same whether the
// models are remote or simulated.

#include <array>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kbvqa/errors.hpp"
#include "kbvqa/roles.hpp"

namespace kbvqa::backends {

using nlohmann::json;

enum class Role { Embed, Ground, Caption, Chat };

std::string_view to_string(Role role) noexcept;
// "/v1/embeddings", "/v1/ground", "/v1/caption", "/v1/chat".
std::string_view endpoint(Role role) noexcept;

/// Sorted keys, no insignificant whitespace, UTF-8 (invalid bytes replaced).
std::string canonical_json(const json& value);

struct BackendRequest {
  std::string backend_id;
  Role role = Role::Embed;
  json payload;
};

/// SHA-256 over backend_id, role name and canonical payload, NUL-separated.
class CacheKey {
 public:
  static CacheKey of(const BackendRequest& request);

  const std::array<std::uint8_t, 32>& digest() const noexcept { return digest_; }
  std::string hex() const;

  friend bool operator==(const CacheKey&, const CacheKey&) = default;

 private:
  std::array<std::uint8_t, 32> digest_{};
};

// Schema checks shared with the reference server. Empty result means valid.
std::vector<std::string> validate_request(Role role, const json& payload);
std::vector<std::string> validate_response(Role role, const json& body);

/// Turns a request into a response body. Implementations must tolerate
/// concurrent calls.
class Service {
 public:
  virtual ~Service() = default;
  virtual json invoke(const BackendRequest& request) = 0;
};

/// Counts calls reaching the wrapped service.
class CountingService final : public Service {
 public:
  explicit CountingService(std::shared_ptr<Service> inner) : inner_(std::move(inner)) {}

  json invoke(const BackendRequest& request) override;
  std::size_t calls() const noexcept { return calls_.load(); }
  void reset() noexcept { calls_ = 0; }

 private:
  std::shared_ptr<Service> inner_;
  std::atomic<std::size_t> calls_{0};
};

/// Directory of `<sha256-hex>.json` files, one per cached response.
class CacheStore {
 public:
  struct Stats {
    std::size_t entries = 0;
    std::uintmax_t bytes = 0;
  };

  // Creates the directory if needed. Throws CacheError when it cannot.
  explicit CacheStore(std::filesystem::path dir);

  const std::filesystem::path& dir() const noexcept { return dir_; }

  // nullopt on a miss or on an unreadable / corrupted entry.
  std::optional<json> load(const CacheKey& key, Role role) const;
  void store(const CacheKey& key, const BackendRequest& request, const json& response);

  static Stats stats(const std::filesystem::path& dir);
  // Swaps in an empty directory, then deletes the old contents.
  static void clear(const std::filesystem::path& dir);

 private:
  std::mutex& stripe(const CacheKey& key) const;

  std::filesystem::path dir_;
  mutable std::array<std::mutex, 64> stripes_;
};

/// Memoizes responses in a CacheStore. Only schema-valid responses are kept.
class CachedService final : public Service {
 public:
  CachedService(std::shared_ptr<Service> inner, std::shared_ptr<CacheStore> store)
      : inner_(std::move(inner)), store_(std::move(store)) {}

  json invoke(const BackendRequest& request) override;

  std::size_t hits() const noexcept { return hits_.load(); }
  std::size_t misses() const noexcept { return misses_.load(); }

 private:
  std::shared_ptr<Service> inner_;
  std::shared_ptr<CacheStore> store_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> misses_{0};
};

// ---- HTTP -----------------------------------------------------------------

struct HttpReply {
  int status = 0;
  std::string body;
};

/// Minimal POST transport. nullopt means no response at all (connect
/// failure, timeout).
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::optional<HttpReply> post(const std::string& path, const std::string& body,
                                        const std::string& bearer_token) = 0;
};

/// cpp-httplib client. `base_url` is "http[s]://host[:port][/prefix]".
class HttplibTransport final : public Transport {
 public:
  HttplibTransport(std::string base_url, std::chrono::milliseconds timeout);

  std::optional<HttpReply> post(const std::string& path, const std::string& body,
                                const std::string& bearer_token) override;

 private:
  std::string origin_;
  std::string prefix_;
  std::chrono::milliseconds timeout_;
};

struct HttpOptions {
  std::string base_url = "http://127.0.0.1:8000";
  std::string api_key;
  std::chrono::milliseconds timeout{120'000};
  std::chrono::milliseconds retry_backoff{500};
  int max_retries = 1;
};

/// Posts requests to `<base_url><endpoint(role)>`. Transport failures and
/// 5xx replies are retried `max_retries` times after `retry_backoff`; 4xx
/// replies fail immediately.
class HttpService final : public Service {
 public:
  explicit HttpService(HttpOptions options, std::shared_ptr<Transport> transport = nullptr);

  json invoke(const BackendRequest& request) override;

 private:
  HttpOptions options_;
  std::shared_ptr<Transport> transport_;
};

// ---- typed role adapters --------------------------------------------------

enum class ImageTransfer { Path, Base64 };

// {"path": ...} or {"base64": ...}. Throws BackendError(ImageNotFound).
json image_payload(const ImageRef& image, ImageTransfer transfer);

class ServiceEmbedder final : public Embedder {
 public:
  ServiceEmbedder(std::string id, std::shared_ptr<Service> service,
                  std::size_t dim = kDefaultEmbeddingDim)
      : id_(std::move(id)), service_(std::move(service)), dim_(dim) {}

  const std::string& id() const override { return id_; }
  std::size_t dim() const override { return dim_; }
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;

 private:
  std::string id_;
  std::shared_ptr<Service> service_;
  std::size_t dim_;
};

class ServiceGrounder final : public Grounder {
 public:
  ServiceGrounder(std::string id, std::shared_ptr<Service> service,
                  ImageTransfer transfer = ImageTransfer::Path)
      : id_(std::move(id)), service_(std::move(service)), transfer_(transfer) {}

  const std::string& id() const override { return id_; }
  GroundingResult ground(const ImageRef& image, const std::string& prompt,
                         double box_threshold) override;

 private:
  std::string id_;
  std::shared_ptr<Service> service_;
  ImageTransfer transfer_;
};

class ServiceCaptioner final : public Captioner {
 public:
  ServiceCaptioner(std::string id, std::shared_ptr<Service> service,
                   ImageTransfer transfer = ImageTransfer::Path)
      : id_(std::move(id)), service_(std::move(service)), transfer_(transfer) {}

  const std::string& id() const override { return id_; }
  std::vector<std::string> caption(const ImageRef& image,
                                   const std::optional<geometry::BBox>& region,
                                   const std::string& instruction, int n) override;

 private:
  std::string id_;
  std::shared_ptr<Service> service_;
  ImageTransfer transfer_;
};

class ServiceChat final : public ChatLlm {
 public:
  ServiceChat(std::string id, std::shared_ptr<Service> service)
      : id_(std::move(id)), service_(std::move(service)) {}

  const std::string& id() const override { return id_; }
  std::string chat(const std::string& prompt, int max_tokens, double temperature) override;

 private:
  std::string id_;
  std::shared_ptr<Service> service_;
};

}  // namespace kbvqa::backends
