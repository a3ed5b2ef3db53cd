#pragma once

#include <stdexcept>
#include <string>

namespace plume {

/// Process exit codes used by the command line tool.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfig = 2,
  kData = 3,
  kNumerical = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Invalid or inconsistent configuration (bad seed count, bad ranges, missing paths).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

/// Malformed, missing or non-finite input data, including shape mismatches.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::kData, what) {}
};

/// A numerical procedure could not proceed (instability, non-SPD matrix, failed search).
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ExitCode::kNumerical, what) {}
};

/// Domain violation of a mathematical precondition, e.g. a non-positive RBF shape.
class DomainError : public NumericalError {
 public:
  explicit DomainError(const std::string& what) : NumericalError(what) {}
};

}  // namespace plume
