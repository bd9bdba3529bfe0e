#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kbvqa {

enum class BackendErrorKind {
  Transport,
  HttpStatus,
  MalformedResponse,
  DimensionMismatch,
  ImageNotFound,
  EmptyCompletion,
  InvalidRequest,
};

std::string_view to_string(BackendErrorKind kind) noexcept;

/// Failure reported by (or while talking to) a model backend.
class BackendError : public std::runtime_error {
 public:
  BackendError(BackendErrorKind kind, const std::string& message, int http_status = 0)
      : std::runtime_error(message), kind_(kind), http_status_(http_status) {}

  BackendErrorKind kind() const noexcept { return kind_; }
  int http_status() const noexcept { return http_status_; }

 private:
  BackendErrorKind kind_;
  int http_status_;
};

/// Response-cache storage failure. Kept apart from BackendError so callers can
/// tell a broken cache directory from a broken model server.
class CacheError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A pipeline stage failed; `stage()` names it.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kbvqa
