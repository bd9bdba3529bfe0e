#include "kbvqa/backends.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "kbvqa/json_schema.hpp"

namespace kbvqa {

std::string_view to_string(BackendErrorKind kind) noexcept {
  switch (kind) {
    case BackendErrorKind::Transport: return "transport";
    case BackendErrorKind::HttpStatus: return "http-status";
    case BackendErrorKind::MalformedResponse: return "malformed-response";
    case BackendErrorKind::DimensionMismatch: return "dimension-mismatch";
    case BackendErrorKind::ImageNotFound: return "image-not-found";
    case BackendErrorKind::EmptyCompletion: return "empty-completion";
    case BackendErrorKind::InvalidRequest: return "invalid-request";
  }
  return "unknown";
}

}  // namespace kbvqa

namespace kbvqa::backends {

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::Embed: return "embed";
    case Role::Ground: return "ground";
    case Role::Caption: return "caption";
    case Role::Chat: return "chat";
  }
  return "unknown";
}

std::string_view endpoint(Role role) noexcept {
  switch (role) {
    case Role::Embed: return "/v1/embeddings";
    case Role::Ground: return "/v1/ground";
    case Role::Caption: return "/v1/caption";
    case Role::Chat: return "/v1/chat";
  }
  return "/";
}

std::string canonical_json(const json& value) {
  // nlohmann::json objects are std::map backed, so keys are already sorted.
  return value.dump(-1, ' ', false, json::error_handler_t::replace);
}

CacheKey CacheKey::of(const BackendRequest& request) {
  const std::string payload = canonical_json(request.payload);
  const std::string_view role = to_string(request.role);

  CacheKey key;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const char sep = '\0';
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx, request.backend_id.data(), request.backend_id.size());
  EVP_DigestUpdate(ctx, &sep, 1);
  EVP_DigestUpdate(ctx, role.data(), role.size());
  EVP_DigestUpdate(ctx, &sep, 1);
  EVP_DigestUpdate(ctx, payload.data(), payload.size());
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, key.digest_.data(), &len);
  EVP_MD_CTX_free(ctx);
  return key;
}

std::string CacheKey::hex() const {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (auto b : digest_) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

namespace {

std::string_view schema_stem(Role role) {
  switch (role) {
    case Role::Embed: return "embeddings";
    case Role::Ground: return "ground";
    case Role::Caption: return "caption";
    case Role::Chat: return "chat";
  }
  return "";
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += "; ";
    out += p;
  }
  return out;
}

}  // namespace

std::vector<std::string> validate_request(Role role, const json& payload) {
  return json_schema::validate(
      json_schema::bundled(std::string(schema_stem(role)) + ".request.schema.json"), payload);
}

std::vector<std::string> validate_response(Role role, const json& body) {
  return json_schema::validate(
      json_schema::bundled(std::string(schema_stem(role)) + ".response.schema.json"), body);
}

json CountingService::invoke(const BackendRequest& request) {
  ++calls_;
  return inner_->invoke(request);
}

// ---- cache ----------------------------------------------------------------

namespace fs = std::filesystem;

CacheStore::CacheStore(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec || !fs::is_directory(dir_)) {
    throw CacheError("cannot create cache directory " + dir_.string() + ": " + ec.message());
  }
}

std::mutex& CacheStore::stripe(const CacheKey& key) const {
  return stripes_[key.digest()[0] % stripes_.size()];
}

std::optional<json> CacheStore::load(const CacheKey& key, Role role) const {
  std::lock_guard lock(stripe(key));
  const fs::path file = dir_ / (key.hex() + ".json");
  std::ifstream in(file, std::ios::binary);
  if (!in) return std::nullopt;
  json entry = json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (entry.is_discarded() || !entry.is_object() || !entry.contains("response") ||
      entry.value("key", std::string{}) != key.hex()) {
    return std::nullopt;
  }
  json response = entry["response"];
  if (!validate_response(role, response).empty()) return std::nullopt;
  return response;
}

void CacheStore::store(const CacheKey& key, const BackendRequest& request, const json& response) {
  const json entry = {{"key", key.hex()},
                      {"backend_id", request.backend_id},
                      {"role", to_string(request.role)},
                      {"response", response}};
  const std::string text = entry.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";

  std::lock_guard lock(stripe(key));
  const fs::path file = dir_ / (key.hex() + ".json");
  std::ostringstream tmp_name;
  tmp_name << key.hex() << ".tmp." << std::this_thread::get_id();
  const fs::path tmp = dir_ / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    out.flush();
    if (!out) throw CacheError("cannot write cache entry " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, file, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw CacheError("cannot publish cache entry " + file.string());
  }
}

CacheStore::Stats CacheStore::stats(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw CacheError("cache directory does not exist: " + dir.string());
  Stats s;
  for (const auto& e : fs::directory_iterator(dir, ec)) {
    if (!e.is_regular_file() || e.path().extension() != ".json") continue;
    ++s.entries;
    s.bytes += e.file_size();
  }
  if (ec) throw CacheError("cannot list cache directory " + dir.string() + ": " + ec.message());
  return s;
}

void CacheStore::clear(const fs::path& requested) {
  fs::path dir = requested.lexically_normal();
  if (!dir.has_filename()) dir = dir.parent_path();
  std::error_code ec;
  if (!fs::exists(dir, ec)) {
    fs::create_directories(dir, ec);
    if (ec) throw CacheError("cannot create cache directory " + dir.string() + ": " + ec.message());
    return;
  }
  fs::path trash = dir;
  trash += ".trash-" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count());
  fs::rename(dir, trash, ec);
  if (ec) throw CacheError("cannot clear cache directory " + dir.string() + ": " + ec.message());
  fs::create_directories(dir, ec);
  if (ec) throw CacheError("cannot recreate cache directory " + dir.string() + ": " + ec.message());
  fs::remove_all(trash, ec);
  if (ec) throw CacheError("cannot delete old cache contents " + trash.string() + ": " + ec.message());
}

json CachedService::invoke(const BackendRequest& request) {
  const CacheKey key = CacheKey::of(request);
  if (auto hit = store_->load(key, request.role)) {
    ++hits_;
    return *std::move(hit);
  }
  ++misses_;
  json response = inner_->invoke(request);
  if (validate_response(request.role, response).empty()) store_->store(key, request, response);
  return response;
}

// ---- HTTP -------------------------------------------------------------------

HttpService::HttpService(HttpOptions options, std::shared_ptr<Transport> transport)
    : options_(std::move(options)), transport_(std::move(transport)) {
  if (!transport_) transport_ = std::make_shared<HttplibTransport>(options_.base_url, options_.timeout);
}

json HttpService::invoke(const BackendRequest& request) {
  const std::string path(endpoint(request.role));
  const std::string body = canonical_json(request.payload);

  std::string last_failure;
  for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
    if (attempt > 0 && options_.retry_backoff.count() > 0) std::this_thread::sleep_for(options_.retry_backoff);

    auto reply = transport_->post(path, body, options_.api_key);
    if (!reply) {
      last_failure = "no response from " + options_.base_url + path;
      continue;
    }
    if (reply->status >= 500) {
      last_failure = "HTTP " + std::to_string(reply->status) + " from " + path + ": " + reply->body;
      if (attempt == options_.max_retries) {
        throw BackendError(BackendErrorKind::HttpStatus, last_failure, reply->status);
      }
      continue;
    }
    if (reply->status < 200 || reply->status >= 300) {
      throw BackendError(BackendErrorKind::HttpStatus,
                         "HTTP " + std::to_string(reply->status) + " from " + path + ": " + reply->body,
                         reply->status);
    }
    json parsed = json::parse(reply->body, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded()) {
      throw BackendError(BackendErrorKind::MalformedResponse, "response from " + path + " is not JSON");
    }
    return parsed;
  }
  throw BackendError(BackendErrorKind::Transport, last_failure);
}

// ---- adapters ---------------------------------------------------------------

namespace {

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

void require_valid_request(Role role, const json& payload) {
  if (auto errors = validate_request(role, payload); !errors.empty()) {
    throw BackendError(BackendErrorKind::InvalidRequest,
                       std::string(to_string(role)) + " request rejected: " + join(errors));
  }
}

void require_valid_response(Role role, const json& body) {
  if (auto errors = validate_response(role, body); !errors.empty()) {
    throw BackendError(BackendErrorKind::MalformedResponse,
                       std::string(to_string(role)) + " response invalid: " + join(errors));
  }
}

json box_json(const geometry::BBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

}  // namespace

json image_payload(const ImageRef& image, ImageTransfer transfer) {
  std::error_code ec;
  if (image.path.empty() || !fs::is_regular_file(image.path, ec)) {
    throw BackendError(BackendErrorKind::ImageNotFound, "image not found: " + image.path);
  }
  if (transfer == ImageTransfer::Path) return {{"path", image.path}};

  std::ifstream in(image.path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (!in && !in.eof()) throw BackendError(BackendErrorKind::ImageNotFound, "cannot read image: " + image.path);
  return {{"base64", base64_encode(buf.str())}};
}

std::vector<EmbeddingVector> ServiceEmbedder::embed(std::span<const std::string> texts) {
  const json payload = {{"input", json(std::vector<std::string>(texts.begin(), texts.end()))}};
  require_valid_request(Role::Embed, payload);

  const json body = service_->invoke({id_, Role::Embed, payload});
  require_valid_response(Role::Embed, body);

  const auto& data = body["data"];
  if (data.size() != texts.size()) {
    throw BackendError(BackendErrorKind::DimensionMismatch,
                       "expected " + std::to_string(texts.size()) + " embeddings, got " +
                           std::to_string(data.size()));
  }
  std::vector<EmbeddingVector> out;
  out.reserve(data.size());
  for (const auto& item : data) {
    auto values = item["embedding"].get<std::vector<double>>();
    if (values.size() != dim_) {
      throw BackendError(BackendErrorKind::DimensionMismatch,
                         "expected embedding dim " + std::to_string(dim_) + ", got " +
                             std::to_string(values.size()));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw BackendError(BackendErrorKind::MalformedResponse, "non-finite embedding value");
    }
    out.emplace_back(std::move(values));
  }
  return out;
}

GroundingResult ServiceGrounder::ground(const ImageRef& image, const std::string& prompt,
                                        double box_threshold) {
  if (prompt.empty()) throw BackendError(BackendErrorKind::InvalidRequest, "grounding prompt is empty");
  const json payload = {{"image", image_payload(image, transfer_)},
                        {"prompt", prompt},
                        {"box_threshold", box_threshold}};
  require_valid_request(Role::Ground, payload);

  const json body = service_->invoke({id_, Role::Ground, payload});
  require_valid_response(Role::Ground, body);

  GroundingResult result;
  result.image_size = {body["image_size"]["width"].get<int>(), body["image_size"]["height"].get<int>()};
  const double w = result.image_size.width;
  const double h = result.image_size.height;
  for (const auto& d : body["detections"]) {
    const auto& b = d["box"];
    geometry::BBox box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    if (!box.well_formed()) {
      throw BackendError(BackendErrorKind::MalformedResponse, "detection box has x0 > x1 or y0 > y1: " + b.dump());
    }
    // Detectors report slightly out-of-frame coordinates; pin them to the image.
    box = {std::clamp(box.x0, 0.0, w), std::clamp(box.y0, 0.0, h), std::clamp(box.x1, 0.0, w),
           std::clamp(box.y1, 0.0, h)};
    result.detections.push_back({box, d["score"].get<double>(), d["label"].get<std::string>()});
  }
  return result;
}

std::vector<std::string> ServiceCaptioner::caption(const ImageRef& image,
                                                   const std::optional<geometry::BBox>& region,
                                                   const std::string& instruction, int n) {
  json payload = {{"image", image_payload(image, transfer_)}, {"instruction", instruction}, {"n", n}};
  if (region) payload["region"] = box_json(*region);
  require_valid_request(Role::Caption, payload);

  const json body = service_->invoke({id_, Role::Caption, payload});
  require_valid_response(Role::Caption, body);

  auto captions = body["captions"].get<std::vector<std::string>>();
  if (captions.size() > static_cast<std::size_t>(n)) captions.resize(static_cast<std::size_t>(n));
  return captions;
}

std::string ServiceChat::chat(const std::string& prompt, int max_tokens, double temperature) {
  const json payload = {{"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                        {"max_tokens", max_tokens},
                        {"temperature", temperature}};
  require_valid_request(Role::Chat, payload);

  const json body = service_->invoke({id_, Role::Chat, payload});
  require_valid_response(Role::Chat, body);

  auto content = body["content"].get<std::string>();
  if (content.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw BackendError(BackendErrorKind::EmptyCompletion, "chat backend returned an empty completion");
  }
  return content;
}

}  // namespace kbvqa::backends
