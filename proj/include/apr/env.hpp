#pragma once

#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "apr/error.hpp"

namespace apr::env {

inline std::optional<std::string> get(const char* name) {
  const char* v = std::getenv(name);
  if (!v || *v == '\0')
    return std::nullopt;
  return std::string(v);
}

inline std::uint64_t get_u64(const char* name, std::uint64_t fallback) {
  const auto v = get(name);
  if (!v)
    return fallback;
  char* end = nullptr;
  const unsigned long long parsed = std::strtoull(v->c_str(), &end, 10);
  if (end == v->c_str() || *end != '\0')
    throw ConfigError(std::string(name) + "='" + *v + "' is not an integer");
  return parsed;
}

inline int get_int(const char* name, int fallback) {
  return static_cast<int>(get_u64(name, static_cast<std::uint64_t>(fallback)));
}

inline bool get_flag(const char* name, bool fallback) {
  const auto v = get(name);
  if (!v)
    return fallback;
  if (*v == "1" || *v == "true" || *v == "on" || *v == "yes")
    return true;
  if (*v == "0" || *v == "false" || *v == "off" || *v == "no")
    return false;
  throw ConfigError(std::string(name) + "='" + *v + "' is not a boolean");
}

inline std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto pos = text.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(text.substr(start));
      break;
    }
    out.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

} // namespace apr::env
