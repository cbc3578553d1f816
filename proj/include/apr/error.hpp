#pragma once

#include <stdexcept>
#include <string>

namespace apr {

/// Caller violated an API contract (bad arguments, double init, ...).
class UsageError : public std::runtime_error {
public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

/// A peer sent bytes that do not form a valid frame sequence.
class ProtocolError : public std::runtime_error {
public:
  explicit ProtocolError(const std::string& what, int rank = -1)
      : std::runtime_error(what), rank_(rank) {}
  int rank() const { return rank_; }

private:
  int rank_;
};

/// Mesh establishment failed (peer unreachable, bad endpoint list, ...).
class StartupError : public std::runtime_error {
public:
  explicit StartupError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed configuration (environment variables, affinity lists, ...).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Frame payload too large for the wire format.
class EncodingError : public std::runtime_error {
public:
  explicit EncodingError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace apr
