#pragma once

// Typed reads from JSON config objects. Errors carry the dotted field path,
// e.g. "sim.d: expected an integer >= 1".

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "postdrift/error.hpp"

namespace postdrift::jsonutil {

using nlohmann::json;

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline const json& object_at(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  return j;
}

inline void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> known) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(join(path, it.key()) + ": unknown field");
  }
}

inline double get_double(const json& j, const std::string& path, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(join(path, key) + ": expected a number");
  return v.get<double>();
}

inline std::int64_t get_int(const json& j, const std::string& path, const char* key, std::int64_t fallback,
                            std::int64_t min_value) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < min_value)
    throw ConfigError(join(path, key) + ": expected an integer >= " + std::to_string(min_value));
  return v.get<std::int64_t>();
}

inline std::uint64_t get_seed(const json& j, const std::string& path, const char* key, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ConfigError(join(path, key) + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::string get_string(const json& j, const std::string& path, const char* key, std::string fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_string()) throw ConfigError(join(path, key) + ": expected a string");
  return v.get<std::string>();
}

inline json read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
}

}  // namespace postdrift::jsonutil
