#pragma once

// Finalized session history with stable event ids and revision lineage.

#include <cstdint>
#include <span>
#include <vector>

#include "livetalk/types.hpp"

namespace livetalk {

struct HistoryEntry {
  EventId id = 0;
  Event event;
  Provenance provenance = Provenance::user;
  std::vector<Event> revisions;  // superseded versions, oldest first
};

class History {
 public:
  explicit History(Format format) : format_(format) {}

  /// Appends a finalized event; its time must not precede the last entry.
  EventId append(Event event, Provenance provenance);
  /// Replaces an entry in place, keeping the superseded version. The new time
  /// must stay between its neighbours.
  void revise(EventId id, Event replacement);

  /// Index of `id`, or npos.
  std::size_t index_of(EventId id) const;
  const HistoryEntry* find(EventId id) const;

  std::span<const HistoryEntry> entries() const { return entries_; }
  std::vector<Event> events() const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  Micros last_time() const { return entries_.empty() ? 0 : entries_.back().event.time; }
  Format format() const { return format_; }
  /// Incremented by every revision.
  std::uint64_t generation() const { return generation_; }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  Format format_;
  std::vector<HistoryEntry> entries_;
  EventId next_id_ = 1;
  std::uint64_t generation_ = 0;
};

/// FNV-1a digest of one event (time, speaker and text).
std::uint64_t event_hash(const Event& event);
/// Digest of a sequence of events, order-sensitive.
std::uint64_t events_hash(std::span<const Event> events);
std::uint64_t history_hash(const History& history);
/// Sixteen lowercase hex digits, as digests appear in traces and logs.
std::string hex_digest(std::uint64_t digest);

}  // namespace livetalk
