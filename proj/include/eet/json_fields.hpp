#pragma once

// Strict reading of JSON config objects: optional keys fill existing
// defaults, type errors name the offending key, unknown keys are rejected.

#include <set>
#include <string>

#include "json.hpp"

#include "eet/numerics.hpp"

namespace eet {

class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(where_ + ": expected a JSON object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(where_ + "." + key + ": " + e.what());
    }
  }

  /// Marks a key as handled by the caller.
  const nlohmann::json* sub(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw Error("unknown config key " + where_ + "." + key);
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace eet
