#pragma once

// Event interchange files: one JSON record per line,
// {"t_us": <int>, "speaker": "<letter>", "text": "...", "doc": "..."?}.
// Consecutive lines sharing a "doc" value form one document.

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "livetalk/clock.hpp"
#include "livetalk/retcon.hpp"
#include "livetalk/types.hpp"

namespace livetalk {

struct Document {
  std::string id;
  std::vector<Event> events;
};

using Corpus = std::vector<Document>;

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line) : Error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

Corpus read_corpus(std::istream& in);
Corpus read_corpus(const std::filesystem::path& path);

/// All events of all documents, in file order.
std::vector<Event> flatten(const Corpus& corpus);

/// Text that is not valid UTF-8 is written with replacement characters.
void write_events(std::ostream& out, std::span<const Event> events, const std::string& doc = {});
void write_corpus(std::ostream& out, const Corpus& corpus);
void write_corpus(const std::filesystem::path& path, const Corpus& corpus);

/// Timed user inputs for a virtual-clock run, one record per line:
/// {"t_us", "type": "message"|"retcon"|"close", "text", "speaker"?, "tag"?}
/// with retcons addressed by "event_id" or "target_tag" and an optional
/// "new_t_us".
std::vector<Input> read_input_script(std::istream& in);
std::vector<Input> read_input_script(const std::filesystem::path& path);

/// Recognizer feeds, one {"index", "text", "t_us", "final"} record per line
/// with non-decreasing t_us.
std::vector<FeederRecord> read_feeder(std::istream& in);
std::vector<FeederRecord> read_feeder(const std::filesystem::path& path);
void write_feeder(std::ostream& out, std::span<const FeederRecord> records);

}  // namespace livetalk
