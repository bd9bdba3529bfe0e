#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "kbvqa/backends.hpp"
#include "kbvqa/roles.hpp"

namespace kbvqa::test {

std::filesystem::path fixture(const std::string& relative);
std::string read_file(const std::filesystem::path& path);

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};
CliResult run_cli(const std::vector<std::string>& args);

nlohmann::json without_metadata(nlohmann::json j);

// Embedder returning fixed vectors per text; unknown texts throw.
class TableEmbedder final : public Embedder {
 public:
  explicit TableEmbedder(std::map<std::string, std::vector<double>> table, std::size_t dim);

  const std::string& id() const override { return id_; }
  std::size_t dim() const override { return dim_; }
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;

  int calls() const noexcept { return calls_.load(); }

 private:
  std::string id_ = "table";
  std::map<std::string, std::vector<double>> table_;
  std::size_t dim_;
  std::atomic<int> calls_{0};
};

/// Loopback HTTP server speaking the wire protocol on top of a Service.
/// "/v1/<endpoint>" uses `default_id` as the backend id; "/<id>/v1/<endpoint>"
/// uses <id>, so per-backend routes can share one server.
class WireServer {
 public:
  explicit WireServer(std::shared_ptr<backends::Service> service, std::string default_id = "default");
  ~WireServer();
  WireServer(const WireServer&) = delete;
  WireServer& operator=(const WireServer&) = delete;

  int port() const noexcept { return port_; }
  std::string base_url() const;
  std::string base_url(const std::string& backend_id) const;
  int requests() const noexcept { return requests_.load(); }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> requests_{0};
};

}  // namespace kbvqa::test
