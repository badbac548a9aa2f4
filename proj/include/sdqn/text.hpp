#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace sdqn {

/// Shortest decimal form that parses back to the same double.
std::string format_number(double value);
std::optional<double> parse_number(std::string_view text);
std::optional<long long> parse_integer(std::string_view text);

std::string_view trim(std::string_view text) noexcept;

} // namespace sdqn
