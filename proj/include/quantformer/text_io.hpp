#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace quantformer {

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);
std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_integer(std::string_view text);

/// Splits on commas; no quoting support (the schemas here never need it).
std::vector<std::string_view> split_fields(std::string_view line);
std::string_view trim(std::string_view s);

/// 64-bit FNV-1a, stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view bytes);

} // namespace quantformer
