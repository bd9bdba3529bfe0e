#include <httplib.h>

#include "kbvqa/backends.hpp"

namespace kbvqa::backends {

HttplibTransport::HttplibTransport(std::string base_url, std::chrono::milliseconds timeout)
    : timeout_(timeout) {
  const auto scheme_end = base_url.find("://");
  const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_start = base_url.find('/', host_start);
  origin_ = base_url.substr(0, path_start);
  if (path_start != std::string::npos) prefix_ = base_url.substr(path_start);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
}

std::optional<HttpReply> HttplibTransport::post(const std::string& path, const std::string& body,
                                                const std::string& bearer_token) {
  httplib::Client client(origin_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);
  client.set_tcp_nodelay(true);
  httplib::Headers headers;
  if (!bearer_token.empty()) headers.emplace("Authorization", "Bearer " + bearer_token);

  auto res = client.Post(prefix_ + path, headers, body, "application/json");
  if (!res) return std::nullopt;
  return HttpReply{res->status, res->body};
}

}  // namespace kbvqa::backends
