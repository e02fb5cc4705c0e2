#include "livetalk/history.hpp"

#include <algorithm>

namespace livetalk {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

void mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

void mix_u64(std::uint64_t& h, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  mix(h, b, 8);
}

}  // namespace

EventId History::append(Event event, Provenance provenance) {
  if (!entries_.empty() && event.time < entries_.back().event.time) {
    throw Error("history append out of order");
  }
  HistoryEntry e;
  e.id = next_id_++;
  e.event = std::move(event);
  e.provenance = provenance;
  entries_.push_back(std::move(e));
  return entries_.back().id;
}

void History::revise(EventId id, Event replacement) {
  const std::size_t i = index_of(id);
  if (i == npos) throw Error("unknown event id " + std::to_string(id));
  if (i > 0 && replacement.time < entries_[i - 1].event.time) throw Error("revision precedes the previous entry");
  if (i + 1 < entries_.size() && replacement.time > entries_[i + 1].event.time) {
    throw Error("revision follows the next entry");
  }
  HistoryEntry& e = entries_[i];
  e.revisions.push_back(std::move(e.event));
  e.event = std::move(replacement);
  ++generation_;
}

std::size_t History::index_of(EventId id) const {
  // Ids are assigned in append order, so the entries are sorted by id.
  auto it = std::lower_bound(entries_.begin(), entries_.end(), id,
                             [](const HistoryEntry& e, EventId v) { return e.id < v; });
  return it != entries_.end() && it->id == id ? static_cast<std::size_t>(it - entries_.begin()) : npos;
}

const HistoryEntry* History::find(EventId id) const {
  const std::size_t i = index_of(id);
  return i == npos ? nullptr : &entries_[i];
}

std::vector<Event> History::events() const {
  std::vector<Event> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.event);
  return out;
}

std::uint64_t event_hash(const Event& event) {
  std::uint64_t h = kFnvOffset;
  mix_u64(h, static_cast<std::uint64_t>(event.time));
  mix(h, &event.speaker, 1);
  mix_u64(h, event.text.size());
  mix(h, event.text.data(), event.text.size());
  return h;
}

std::uint64_t events_hash(std::span<const Event> events) {
  std::uint64_t h = kFnvOffset;
  for (const Event& e : events) mix_u64(h, event_hash(e));
  return h;
}

std::uint64_t history_hash(const History& history) {
  std::uint64_t h = kFnvOffset;
  for (const auto& e : history.entries()) mix_u64(h, event_hash(e.event));
  return h;
}

std::string hex_digest(std::uint64_t digest) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, digest >>= 4) s[static_cast<std::size_t>(i)] = kDigits[digest & 15];
  return s;
}

}  // namespace livetalk
