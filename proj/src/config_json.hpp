#pragma once

#include "gaitforge/env.hpp"

#include <json.hpp>

#include <algorithm>
#include <initializer_list>
#include <string>

namespace gaitforge::detail {

using json = nlohmann::json;

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& prefix) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + prefix + key + "' has the wrong type");
  }
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& prefix) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      throw ConfigError("unknown config field '" + prefix + it.key() + "'");
    }
  }
}

inline json parse_section(std::string_view doc, const char* section) {
  json j;
  try {
    j = json::parse(doc.begin(), doc.end());
  } catch (const json::exception& e) {
    throw ConfigError(std::string(section) + " config: " + e.what());
  }
  if (!j.is_object()) throw ConfigError(std::string(section) + " config must be an object");
  return j;
}

}  // namespace gaitforge::detail
