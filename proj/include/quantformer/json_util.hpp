#pragma once

#include <cstdint>

#include <json.hpp>

namespace quantformer {

/// Integer >= 0, whether the parser stored it as signed or unsigned.
inline bool is_count(const nlohmann::json& j) {
    return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

} // namespace quantformer
