#pragma once

#include <string>
#include <string_view>

#include "livetalk/types.hpp"

namespace livetalk {

/// Parses "200ms", "1.5s", "250us", "2min", "1h". A bare number is taken as
/// milliseconds. Rounds to the nearest microsecond; negative values throw.
Micros parse_duration(std::string_view text);

/// Shortest exact rendering in the largest unit that divides the value, e.g. "200ms".
std::string format_duration(Micros value);

}  // namespace livetalk
