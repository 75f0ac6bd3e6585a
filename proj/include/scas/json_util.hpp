#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"
#include "scas/error.hpp"

namespace scas {

// Throws kConfig when j is not an object or has a key outside `allowed`.
inline void require_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                         const std::string& context) {
  if (!j.is_object()) fail(ErrorKind::kConfig, context + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) fail(ErrorKind::kConfig, context + ": unknown key '" + key + "'");
  }
}

// Reads j[key] into out when present, wrapping type errors as kConfig.
template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out, const std::string& context) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, context + "." + key + ": " + e.what());
  }
}

}  // namespace scas
