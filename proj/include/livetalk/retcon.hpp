#pragma once

// Revisions of earlier user input ("retcons") and an unstable recognizer
// stream that produces them.

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "livetalk/clock.hpp"
#include "livetalk/history.hpp"

namespace livetalk {

class RetconError : public Error {
 public:
  using Error::Error;
};

struct RetconCommand {
  EventId target = 0;
  std::string text;
  std::optional<Micros> time;  // new time; default keeps the original
  Micros issue_time = 0;
};

/// Why an event cannot be encoded in `format` (speaker, text), if it cannot.
std::optional<std::string> event_error(const Event& event, Format format);

/// Revises a user event in place and returns the replacement. Model events,
/// unknown ids, unencodable text and reordering times are rejected.
Event apply_retcon(History& history, const RetconCommand& command);

/// A recognized word whose text may be revised after it was first issued.
struct AsrWord {
  Micros onset = 0;
  std::string text;  // first hypothesis, issued at the onset
  std::vector<std::pair<Micros, std::string>> revisions;  // (issue time, corrected text)
};

/// Message inputs at each onset (tagged "w<index>") and retcon inputs at
/// each revision's issue time.
std::vector<Input> asr_inputs(std::span<const AsrWord> words);

/// One line of a recognizer feed: the current hypothesis for word `index`,
/// issued at `t_us`. An index's first record is the word's onset; `final`
/// marks its last record.
struct FeederRecord {
  std::size_t index = 0;
  std::string text;
  Micros t_us = 0;
  bool final = false;
};

/// Feed records in issue order; every word ends with a final record.
std::vector<FeederRecord> feeder_records(std::span<const AsrWord> words);

/// Words from feed records. Indices must first appear in order 0, 1, ...;
/// records after a final one, or issued before their word's onset, throw.
std::vector<AsrWord> feeder_words(std::span<const FeederRecord> records);

/// Wraps a final word sequence as an unstable stream: each word is first
/// issued with probability `instability` as a wrong hypothesis drawn from
/// `confusions`, then corrected after a delay uniform in [0, max_delay].
std::vector<AsrWord> unstable_asr_feeder(std::span<const Event> words, std::span<const std::string> confusions,
                                         double instability, Micros max_delay, std::uint64_t seed);

}  // namespace livetalk
