#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>

namespace trajmsm {

// Structured error codes shared by the whole pipeline. The CLI maps these to
// machine-readable JSON; the simulation harness counts failures per code.
enum class ErrorCode {
  missing_cell,
  ragged_panel,
  domain_error,
  rank_deficient,
  separation,
  empty_class,
  degenerate_class,
  monotone_likelihood,
  no_events,
  empty_group,
  too_many_failures,
  config_error,
  io_error,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::missing_cell: return "MissingCell";
    case ErrorCode::ragged_panel: return "RaggedPanel";
    case ErrorCode::domain_error: return "DomainError";
    case ErrorCode::rank_deficient: return "RankDeficient";
    case ErrorCode::separation: return "Separation";
    case ErrorCode::empty_class: return "EmptyClass";
    case ErrorCode::degenerate_class: return "DegenerateClass";
    case ErrorCode::monotone_likelihood: return "MonotoneLikelihood";
    case ErrorCode::no_events: return "NoEvents";
    case ErrorCode::empty_group: return "EmptyGroup";
    case ErrorCode::too_many_failures: return "TooManyFailures";
    case ErrorCode::config_error: return "ConfigError";
    case ErrorCode::io_error: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  using Context = std::map<std::string, std::string>;

  Error(ErrorCode code, const std::string& message, Context context = {})
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        message_(message),
        context_(std::move(context)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }
  const Context& context() const noexcept { return context_; }

 private:
  ErrorCode code_;
  std::string message_;
  Context context_;
};

}  // namespace trajmsm
