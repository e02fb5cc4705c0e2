#pragma once

// Append-only JSON-lines session log. Every line ends in a CRC-32 of its
// body; replay stops at the first line that fails the check.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "livetalk/history.hpp"

namespace livetalk {

/// Appends `"crc":"xxxxxxxx"` to a compact object dump. The checksum covers
/// the line as it would read without that member.
std::string seal_log_line(const nlohmann::json& record);

/// Parsed body of a sealed line, or nullopt with `problem` set.
std::optional<nlohmann::json> open_log_line(std::string_view line, std::string* problem = nullptr);

class TranscriptLog {
 public:
  /// Creates the file; fails if it already exists.
  TranscriptLog(std::filesystem::path path, const std::string& session_id, const nlohmann::json& config);
  /// Reopens a replayed log for appending after its last valid line.
  static TranscriptLog resume(std::filesystem::path path, std::uint64_t next_seq);

  /// Each call writes one flushed line and returns the record as written,
  /// without the checksum. `tag` is the client reference of a user message.
  nlohmann::json event(const HistoryEntry& entry, const std::string& tag = {});
  nlohmann::json retcon(EventId id, const Event& replacement);
  nlohmann::json close(const std::string& reason, std::uint64_t history_digest);

  const std::filesystem::path& path() const { return path_; }
  std::uint64_t next_seq() const { return seq_; }

 private:
  TranscriptLog(std::filesystem::path path, std::uint64_t seq, std::ios::openmode mode);
  nlohmann::json write(nlohmann::json record);

  std::filesystem::path path_;
  std::ofstream out_;
  std::uint64_t seq_ = 0;
};

struct LogRecord {
  std::uint64_t seq = 0;
  std::string kind;  // session, event, retcon, close
  nlohmann::json body;
};

struct ReplayResult {
  std::string session_id;
  nlohmann::json config;
  History history{Format::messenger};
  std::vector<LogRecord> records;
  std::size_t valid_lines = 0;
  std::uint64_t valid_bytes = 0;
  bool corrupt = false;  // something after the valid prefix was dropped
  std::string problem;
  bool closed = false;
};

/// Applies an event or retcon record to `history`; other kinds are ignored.
/// Throws Error when the record does not fit the history.
void apply_log_record(History& history, const nlohmann::json& record);

/// Rebuilds the history from a log. With `truncate`, the file is cut back to
/// its valid prefix.
ReplayResult replay_log(const std::filesystem::path& path, bool truncate = false);

}  // namespace livetalk
