/*
 * Copyright 2026 The gpimpute Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <stdexcept>
#include <string>

#include "json.hpp"

namespace gpimpute {

// Malformed or invalid configuration. key is the dotted path of the offending entry.
struct ConfigError : std::runtime_error {
    ConfigError(std::string k, const std::string& what)
        : std::runtime_error(k + ": " + what), key(std::move(k)) {}
    std::string key;
};

inline std::string join_key(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

inline const nlohmann::json& require(const nlohmann::json& j, const std::string& key,
                                     const std::string& path) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError(join_key(path, key), "missing");
    return j.at(key);
}

template <typename T>
T get_as(const nlohmann::json& v, const std::string& full_key) {
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(full_key, "wrong type");
    }
}

template <typename T>
T get_req(const nlohmann::json& j, const std::string& key, const std::string& path) {
    return get_as<T>(require(j, key, path), join_key(path, key));
}

template <typename T>
T get_opt(const nlohmann::json& j, const std::string& key, const std::string& path, T fallback) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    return get_as<T>(j.at(key), join_key(path, key));
}

}  // namespace gpimpute
