#pragma once

#include <json.hpp>

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

namespace revsam {

/// Malformed or inconsistent configuration input.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                                std::string_view what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || (k == key);
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + std::string(what));
  }
}

template <typename T>
void read_optional(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

}  // namespace revsam
