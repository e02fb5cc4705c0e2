#include "livetalk/duration.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <utility>

namespace livetalk {

Micros parse_duration(std::string_view text) {
  const auto bad = [&] { return Error("invalid duration '" + std::string(text) + "'"); };
  std::size_t end = 0;
  while (end < text.size() && (std::isdigit(static_cast<unsigned char>(text[end])) || text[end] == '.')) ++end;
  if (end == 0) throw bad();
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + end, value);
  if (ec != std::errc() || ptr != text.data() + end) throw bad();
  std::string_view unit = text.substr(end);
  while (!unit.empty() && unit.front() == ' ') unit.remove_prefix(1);
  static constexpr std::pair<std::string_view, double> kUnits[] = {
      {"", 1e3}, {"us", 1.0}, {"ms", 1e3}, {"s", 1e6}, {"min", 60e6}, {"m", 60e6}, {"h", 3600e6}};
  for (const auto& [name, scale] : kUnits) {
    if (unit == name) {
      const double us = value * scale;
      if (!std::isfinite(us) || us > 9.2e18) throw bad();
      return static_cast<Micros>(std::llround(us));
    }
  }
  throw bad();
}

std::string format_duration(Micros value) {
  static constexpr std::pair<Micros, std::string_view> kUnits[] = {
      {3'600'000'000, "h"}, {60'000'000, "min"}, {1'000'000, "s"}, {1'000, "ms"}};
  if (value != 0) {
    for (const auto& [scale, name] : kUnits) {
      if (value % scale == 0) return std::to_string(value / scale) + std::string(name);
    }
  }
  return std::to_string(value) + "us";
}

}  // namespace livetalk
