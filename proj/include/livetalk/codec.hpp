#pragma once

// Timed diarized transcript wire formats.
//
// Messenger entry:  [timestamp suffix][speaker][text]<eom>
//   full timestamp: YYYY Month DD Wd +HH :MM ;SS .D (no spaces), e.g.
//   "2024February28W+22:32;13.8". Leading groups shared with the previous
//   entry are omitted; the decisecond is always rendered.
// Spoken entry:     [sec][dsec][csec][speaker][word]\n
//   the three digits are the start time modulo 10 seconds in centiseconds.

#include <array>
#include <bitset>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "livetalk/types.hpp"

namespace livetalk {

inline constexpr std::string_view kMessengerEom = "<eom>";
inline constexpr std::string_view kSpokenEom = "\n";

constexpr std::string_view eom_sentinel(Format format) {
  return format == Format::messenger ? kMessengerEom : kSpokenEom;
}

// ---------------------------------------------------------------------------
// Civil calendar (proleptic Gregorian, UTC)

std::int64_t days_from_civil(int year, int month, int day);
int days_in_month(int year, int month);
/// Monday = 0 ... Sunday = 6.
int weekday_from_days(std::int64_t days);

inline constexpr std::array<std::string_view, 12> kMonthNames = {
    "January", "February", "March",     "April",   "May",      "June",
    "July",    "August",   "September", "October", "November", "December"};
inline constexpr std::array<std::string_view, 7> kWeekdayNames = {"M",  "Tu", "W", "Th",
                                                                  "F",  "Sa", "Su"};

/// Calendar breakdown of a messenger time at decisecond granularity.
struct MessengerTimestamp {
  int year = 1970;
  int month = 1;  // 1..12
  int day = 1;    // 1..31
  int wday = 3;   // Monday = 0
  int hour = 0;
  int minute = 0;
  int second = 0;
  int decisecond = 0;

  static MessengerTimestamp from_micros(Micros time);
  Micros to_micros() const;

  friend bool operator==(const MessengerTimestamp&, const MessengerTimestamp&) = default;
};

/// Omission groups, coarsest first. The decisecond is always rendered.
enum class TimeGroup : std::uint8_t { year_month = 0, day = 1, hour = 2, minute = 3, second = 4, decisecond = 5 };
inline constexpr int kGroupCount = 6;

/// Value of one group, comparable within the group (year_month packs both fields).
int group_value(const MessengerTimestamp& ts, int group);

/// First group at which `next` differs from `prev`; decisecond (5) when the
/// two agree on everything coarser.
int first_differing_group(const MessengerTimestamp& prev, const MessengerTimestamp& next);

/// Renders groups [first, last) with their leading separators, e.g.
/// groups [3, 6) of 22:32:13.8 give ":32;13.8".
std::string render_messenger_groups(const MessengerTimestamp& ts, int first, int last = kGroupCount);

/// Start of the window of times whose groups [0, group] equal those of `ts`.
Micros group_window_start(const MessengerTimestamp& ts, int group);
/// One past the end of that window.
Micros group_window_end(const MessengerTimestamp& ts, int group);

// ---------------------------------------------------------------------------
// Spoken timestamps

/// Time within a 10 second window in centiseconds, rendered as three digits.
struct SpokenTimestamp {
  int code = 0;  // 0..999

  static SpokenTimestamp from_micros(Micros time);
  std::string render() const;
};

/// Absolute time of a spoken code relative to the previous entry; equal codes
/// mean a simultaneous entry, otherwise the delta is (code - prev) mod 1000 cs.
Micros spoken_advance(Micros prev, int code);

// ---------------------------------------------------------------------------
// Streaming grammar state

struct GrammarOptions {
  /// Accept the separator-less minute form ("33;03.6") and weekday mismatches.
  bool lenient = false;
  /// Legality only: require the minimal (canonical) timestamp rendering.
  bool canonical = true;
};

/// Position within an entry. Messenger fields follow the full-render order;
/// `lead` holds one or two digits that may begin a year or a day.
enum class ParsePhase : std::uint8_t {
  entry_start,
  lead,
  year,
  month,
  day,
  wday,
  hour,
  minute,
  second,
  decisecond,
  spoken_code,
  speaker,
  body,
};

enum class StepError : std::uint8_t {
  none,
  unexpected_char,
  bad_field_value,
  unknown_month,
  bad_weekday,
  time_regression,
  empty_word,
};

std::string_view to_string(StepError error);

struct StepResult {
  StepError error = StepError::none;
  bool entry_complete = false;

  bool ok() const { return error == StepError::none; }
};

/// Deterministic parser state after consuming a character stream. Small and
/// trivially copyable; the message text itself is accumulated by the decoder.
struct CodecState {
  Format format = Format::messenger;
  bool has_prev = false;
  Micros prev = 0;
  MessengerTimestamp prev_ts;  // calendar breakdown of prev (messenger)

  ParsePhase phase = ParsePhase::entry_start;
  std::uint8_t consumed = 0;  // characters consumed within the current field
  std::uint8_t level = 0;     // first rendered group of the current entry
  bool bare_minute = false;   // lenient separator-less minute form
  bool canonical = true;      // rendered timestamp is the minimal one
  bool weekday_mismatch = false;
  int value = 0;              // partial numeric field
  std::array<char, 10> name{};  // partial month / weekday name
  MessengerTimestamp fields;  // accumulated fields (omitted ones copied from prev)

  Micros time = 0;  // valid once the timestamp of the current entry is complete
  char speaker = 0;
  std::uint8_t eom_progress = 0;  // chars of the messenger sentinel matched
  std::uint32_t body_chars = 0;

  static CodecState initial(Format format);
  /// State at an entry boundary whose previous entry ended at `prev`.
  static CodecState after(Format format, Micros prev);

  bool at_entry_start() const { return phase == ParsePhase::entry_start; }
  bool timestamp_complete() const { return phase == ParsePhase::speaker || phase == ParsePhase::body; }
  bool in_body() const { return phase == ParsePhase::body; }
};

/// Advances the state by one byte. On error the state is unspecified.
StepResult step(CodecState& state, unsigned char c, const GrammarOptions& options = {});

/// Bounds on the times reachable by completing the current entry.
struct CompletionBounds {
  Micros earliest = 0;
  Micros latest = 0;
};

/// Hull of all valid completions of the current entry's timestamp (ignoring
/// canonicality), or nullopt when no valid completion exists.
std::optional<CompletionBounds> completion_bounds(const CodecState& state);

/// True when the current entry can still complete with time >= min_time
/// (and, if options.canonical, with its minimal rendering).
bool can_complete(const CodecState& state, Micros min_time, const GrammarOptions& options = {});

/// Characters that keep the stream grammatical and completable at or after
/// min_time. In the message body `free_text` is set: any text character is
/// allowed until the sentinel.
struct LegalSet {
  std::bitset<256> chars;
  bool free_text = false;
};

LegalSet legal_continuations(const CodecState& state, Micros min_time,
                             const GrammarOptions& options = {});

// ---------------------------------------------------------------------------
// Encoding / decoding

class EncodeError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  DecodeError(const std::string& what, std::size_t offset) : Error(what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Renders one entry relative to `state` (which must be at an entry
/// boundary) and advances it. Times are truncated to the format granularity.
std::string encode_entry(const Event& event, CodecState& state);

struct EncodedTranscript {
  std::string text;
  std::vector<std::string> entries;
  CodecState state;
};

EncodedTranscript encode(std::span<const Event> events, Format format);
EncodedTranscript encode(std::span<const Event> events, const CodecState& initial);

/// Incremental decoder; feed characters one at a time or in chunks.
class TranscriptDecoder {
 public:
  explicit TranscriptDecoder(const CodecState& initial, GrammarOptions options = {});

  /// Returns the completed event when `c` ends an entry; throws DecodeError.
  std::optional<Event> feed(char c);
  void feed(std::string_view text, std::vector<Event>& out);

  const CodecState& state() const { return state_; }
  /// Message text of the entry in progress (sentinel prefix excluded).
  std::string partial_text() const;
  std::size_t weekday_warnings() const { return weekday_warnings_; }

 private:
  CodecState state_;
  GrammarOptions options_;
  std::string text_;
  std::size_t offset_ = 0;
  std::size_t weekday_warnings_ = 0;
};

struct DecodeResult {
  std::vector<Event> events;
  CodecState state;
  std::string partial_text;
  std::size_t weekday_warnings = 0;
};

DecodeResult decode(std::string_view text, const CodecState& initial, GrammarOptions options = {});
DecodeResult decode(std::string_view text, Format format, GrammarOptions options = {});

}  // namespace livetalk
