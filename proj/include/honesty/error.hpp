#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace honesty {

// Base for every error raised by the pipeline. `code` is a short machine
// readable tag used by the CLI and the HTTP error envelope.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& message, std::string detail = {})
      : std::runtime_error(message), code_(std::move(code)), detail_(std::move(detail)) {}

  const std::string& code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

private:
  std::string code_;
  std::string detail_;
};

class IoError : public Error {
public:
  explicit IoError(const std::string& message, std::string detail = {})
      : Error("io_error", message, std::move(detail)) {}
};

class PreconditionError : public Error {
public:
  explicit PreconditionError(const std::string& message, std::string detail = {})
      : Error("precondition", message, std::move(detail)) {}
};

class ValidationError : public Error {
public:
  explicit ValidationError(const std::string& message, std::string detail = {})
      : Error("validation", message, std::move(detail)) {}
};

class NotFoundError : public Error {
public:
  explicit NotFoundError(const std::string& message, std::string detail = {})
      : Error("not_found", message, std::move(detail)) {}
};

// Malformed or truncated artifact. `offset` is the byte position where
// decoding stopped.
class FormatError : public Error {
public:
  FormatError(const std::string& message, std::size_t offset)
      : Error("format", message + " (at byte offset " + std::to_string(offset) + ")",
              std::to_string(offset)),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

// Remote peer answered but broke the wire contract.
class ProtocolError : public Error {
public:
  explicit ProtocolError(const std::string& message, std::string detail = {})
      : Error("protocol", message, std::move(detail)) {}
};

// Remote peer could not be reached. Carries enough to schedule a retry.
class TransportError : public Error {
public:
  TransportError(const std::string& message, int attempts, double retry_after_seconds)
      : Error("transport", message,
              "attempts=" + std::to_string(attempts) +
                  " retry_after_s=" + std::to_string(retry_after_seconds)),
        attempts_(attempts),
        retry_after_(retry_after_seconds) {}
  int attempts() const noexcept { return attempts_; }
  double retry_after_seconds() const noexcept { return retry_after_; }

private:
  int attempts_;
  double retry_after_;
};

class DivergenceError : public Error {
public:
  DivergenceError(const std::string& message, std::string detail)
      : Error("divergence", message, std::move(detail)) {}
};

// An annotation action that the task's current stage does not admit.
class StageError : public Error {
public:
  StageError(const std::string& message, std::string current_stage)
      : Error("stage", message, current_stage), stage_(std::move(current_stage)) {}
  const std::string& stage() const noexcept { return stage_; }

private:
  std::string stage_;
};

}  // namespace honesty
