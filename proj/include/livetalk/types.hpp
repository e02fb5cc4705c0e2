#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace livetalk {

/// Absolute time in integer microseconds. Messenger transcripts count from the
/// Unix epoch (UTC); spoken transcripts count from session start.
using Micros = std::int64_t;

inline constexpr Micros kMicrosPerSecond = 1'000'000;
inline constexpr Micros kMicrosPerDecisecond = 100'000;
inline constexpr Micros kMicrosPerCentisecond = 10'000;

using EventId = std::uint64_t;
using TokenId = std::int32_t;

enum class Format : std::uint8_t { messenger, spoken };

std::string_view to_string(Format format);
Format parse_format(std::string_view name);

/// One transcript entry.
struct Event {
  Micros time = 0;
  char speaker = 'A';
  std::string text;

  friend bool operator==(const Event&, const Event&) = default;
};

enum class Provenance : std::uint8_t { user, model };

std::string_view to_string(Provenance provenance);
Provenance parse_provenance(std::string_view name);

/// Smallest time step a format can represent.
constexpr Micros granularity(Format format) {
  return format == Format::messenger ? kMicrosPerDecisecond : kMicrosPerCentisecond;
}

constexpr Micros truncate_to_granularity(Micros time, Format format) {
  const Micros g = granularity(format);
  return time - (time % g);
}

/// Speaker ids legal for the format: {A, B} for messenger, A-Z for spoken.
constexpr bool valid_speaker(char speaker, Format format) {
  if (format == Format::messenger) return speaker == 'A' || speaker == 'B';
  return speaker >= 'A' && speaker <= 'Z';
}

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace livetalk
