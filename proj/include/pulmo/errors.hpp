#pragma once

#include <stdexcept>
#include <string>

namespace pulmo {

// Base class for everything thrown by this library. CLI maps these to exit 1;
// anything else escaping is a bug.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

// Shape / axis mismatches between tensors.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& msg) : Error("dimension", msg) {}
};

// NaN / Inf where finite values are required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

// Value outside its documented domain.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& msg) : Error("domain", msg) {}
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

// Caller broke a call-sequence contract (e.g. backward without forward).
class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& msg) : Error("protocol", msg) {}
};

// Dataset ingestion failures; message carries the offending row / file.
class IngestionError : public Error {
 public:
  explicit IngestionError(const std::string& msg) : Error("ingestion", msg) {}
};

// Malformed binary / text artifact on disk.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error("format", msg) {}
};

// Optimization blew up (non-finite loss or gradient).
class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& msg) : Error("training", msg) {}
};

}  // namespace pulmo
