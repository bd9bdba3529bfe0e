#include "test_support.hpp"

#include <httplib.h>

#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "kbvqa/cli.hpp"
#include "kbvqa/errors.hpp"

namespace kbvqa::test {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path fixture(const std::string& relative) { return fs::path(KBVQA_FIXTURES_DIR) / relative; }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TempDir::TempDir() {
  std::random_device rd;
  const auto base = fs::temp_directory_path();
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto candidate = base / ("kbvqa-test-" + std::to_string(rd()));
    if (fs::create_directory(candidate)) {
      path_ = candidate;
      return;
    }
  }
  throw std::runtime_error("cannot create temp dir");
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

CliResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

json without_metadata(json j) {
  if (j.is_object()) {
    j.erase("metadata");
    for (auto& [_, v] : j.items()) v = without_metadata(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = without_metadata(v);
  }
  return j;
}

TableEmbedder::TableEmbedder(std::map<std::string, std::vector<double>> table, std::size_t dim)
    : table_(std::move(table)), dim_(dim) {}

std::vector<EmbeddingVector> TableEmbedder::embed(std::span<const std::string> texts) {
  ++calls_;
  std::vector<EmbeddingVector> out;
  for (const auto& t : texts) {
    auto it = table_.find(t);
    if (it == table_.end()) throw std::out_of_range("no fixture vector for '" + t + "'");
    out.emplace_back(it->second);
  }
  return out;
}

struct WireServer::Impl {
  httplib::Server server;
};

namespace {

std::optional<backends::Role> role_for(const std::string& name) {
  if (name == "embeddings") return backends::Role::Embed;
  if (name == "ground") return backends::Role::Ground;
  if (name == "caption") return backends::Role::Caption;
  if (name == "chat") return backends::Role::Chat;
  return std::nullopt;
}

}  // namespace

WireServer::WireServer(std::shared_ptr<backends::Service> service, std::string default_id)
    : impl_(std::make_unique<Impl>()) {
  auto handler = [this, service, default_id](const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    const std::string id = req.matches[1].length() > 0 ? req.matches[1].str() : default_id;
    const auto role = role_for(req.matches[2].str());
    auto reply_error = [&](int status, const std::string& msg) {
      res.status = status;
      res.set_content(json{{"error", msg}}.dump(), "application/json");
    };
    if (!role) return reply_error(404, "unknown endpoint");
    const json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded()) return reply_error(400, "malformed JSON");
    if (auto errs = backends::validate_request(*role, body); !errs.empty()) return reply_error(400, errs.front());
    try {
      res.set_content(service->invoke({id, *role, body}).dump(), "application/json");
    } catch (const std::exception& e) {
      reply_error(500, e.what());
    }
  };
  impl_->server.set_tcp_nodelay(true);
  impl_->server.Post(R"(/(?:([^/]+)/)?v1/([a-z]+))", handler);
  port_ = impl_->server.bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw std::runtime_error("cannot bind loopback port");
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

WireServer::~WireServer() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

std::string WireServer::base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
std::string WireServer::base_url(const std::string& backend_id) const { return base_url() + "/" + backend_id; }

}  // namespace kbvqa::test
