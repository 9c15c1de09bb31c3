#pragma once

#include <stdexcept>
#include <string>

namespace ldreg {

enum class ErrorKind {
  Config,
  Training,
  Degenerate,
  Contract,
  Io,
};

/// Base for every error raised by the library. The kind decides how the C API
/// and the CLI report it (exit code 2 for configuration problems, 1 otherwise).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error(ErrorKind::Training, what) {}
};

/// All importance weights vanished, a dispersion over fewer than two values,
/// or an estimate built from too few samples.
class DegenerateError : public Error {
 public:
  explicit DegenerateError(const std::string& what) : Error(ErrorKind::Degenerate, what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::Contract, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

}  // namespace ldreg
