#pragma once

#include <cstdint>
#include <string>

#include "fibro/error.hpp"
#include "json.hpp"

namespace fibro {

/// Checked read of a non-negative integer. nlohmann converts -3 to a huge
/// unsigned value on its own, so the sign is tested first.
template <class T>
T json_unsigned(const nlohmann::json& v, const std::string& what) {
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw ValidationError(what + " must be a non-negative integer, got " + v.dump());
    }
    return v.get<T>();
}

template <class T>
T json_unsigned(const nlohmann::json& j, const char* key, T fallback, const std::string& context) {
    if (!j.contains(key)) return fallback;
    return json_unsigned<T>(j.at(key), context + ": " + key);
}

} // namespace fibro
