#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ecs {

enum class ErrorKind {
  InvalidDimension,
  TruncationOverflow,
  Regime,
  NearNode,
  Domain,
  Sequencing,
  ImpossibleOutcome,
  IncompleteRecord,
  UnknownSetting,
  Stiffness,
  Config,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Parse and schema failures carry a source position (1-based, 0 when unknown).
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, int line = 0, int column = 0)
      : Error(ErrorKind::Config, what), line_(line), column_(column) {}
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

// Process exit status per error class: configuration 2, physics 3, numerics 4.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
      return 2;
    case ErrorKind::TruncationOverflow:
    case ErrorKind::Stiffness:
      return 4;
    default:
      return 3;
  }
}

// Non-fatal diagnostics are appended here when the caller passes a sink.
using Warnings = std::vector<std::string>;

inline void warn(Warnings* sink, std::string message) {
  if (sink) sink->push_back(std::move(message));
}

}  // namespace ecs
