#pragma once

// Real-time event scheduling: candidates are generated ahead of their
// timestamps, held until due, and re-examined whenever the user speaks.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "livetalk/clock.hpp"
#include "livetalk/constrained.hpp"
#include "livetalk/history.hpp"
#include "livetalk/speculation.hpp"

namespace livetalk {

struct SessionConfig {
  Format format = Format::messenger;
  char user_speaker = 'A';
  Micros t_react = 200'000;
  bool speculation = false;
  std::uint64_t seed = 0;
  DecodeLimits limits;
  /// Modeled time per generated token on a virtual clock.
  Micros token_cost = 0;
  /// Tokens kept free for the entry being generated; 0 picks a default.
  std::size_t context_reserve = 0;
  /// Stop once the clock reaches this time with nothing due before it.
  std::optional<Micros> end_time;
  std::size_t max_events = SIZE_MAX;
  /// Keep trace records in memory (Session::trace()).
  bool keep_trace = true;
};

enum class Disposition : std::uint8_t { keep, discard };

/// A pending candidate survives user input at `input_time` only when another
/// speaker says it within the reaction window.
Disposition candidate_disposition(char speaker, Micros candidate_time, char user_speaker, Micros input_time,
                                  Micros t_react);

struct TraceRecord {
  std::uint64_t seq = 0;
  Micros t = 0;  // session clock when recorded
  std::string kind;
  nlohmann::json data;
};

nlohmann::json to_json(const TraceRecord& record);
/// One-line JSON; invalid UTF-8 in model text is replaced.
std::string dump_trace(const TraceRecord& record);
TraceRecord trace_from_json(const nlohmann::json& j);

using TraceSink = std::function<void(const TraceRecord&)>;

struct SessionMetrics {
  std::size_t candidates = 0;
  std::size_t emitted = 0;
  std::size_t kept = 0;
  std::size_t discarded = 0;
  std::size_t self_discarded = 0;  // user-speaker candidates that fell due
  std::size_t inputs = 0;
  std::size_t retcons = 0;
  std::size_t rejected = 0;
  std::size_t speculations = 0;
  std::size_t speculation_skipped = 0;
  std::size_t draft_offered = 0;
  std::size_t draft_accepted = 0;
  std::size_t tokens = 0;
  std::size_t starved_steps = 0;
  std::vector<Micros> token_compute;     // wall time per generated token
  std::vector<Micros> event_latency;     // session time from generation start to a complete entry
  std::vector<Micros> emission_lag;      // emission instant minus event time
  std::vector<Micros> input_times;
};

enum class SessionStatus : std::uint8_t { closed, ended, failed };

struct SessionResult {
  SessionStatus status = SessionStatus::ended;
  std::string error;
};

class Session {
 public:
  Session(SessionConfig config, std::shared_ptr<const Backend> backend, TraceSink sink = {});

  /// Finalized events present before the session starts.
  void seed(const Event& event, Provenance provenance);

  /// Runs until a close input, the end time, the event limit or a backend
  /// failure. The history stays intact on failure.
  SessionResult run(Clock& clock);

  const History& history() const { return history_; }
  const SessionMetrics& metrics() const { return metrics_; }
  const std::vector<TraceRecord>& trace() const { return trace_; }
  const SessionConfig& config() const { return config_; }

 private:
  enum class Flow { go_on, restart, stop };

  struct Candidate {
    std::uint64_t id = 0;
    std::optional<EventGenerator> gen;
    Micros started = 0;
    std::optional<Micros> interrupted;  // first unresolved input time
    std::vector<std::uint64_t> unresolved;  // trace seqs of inputs awaiting the timestamp
  };

  SharedContext context();
  void start_candidate(Clock& clock);
  Flow on_input(Clock& clock, Input input);
  Flow decide(Clock& clock, Micros input_time);
  void discard(Clock& clock, const std::string& reason);
  void emit(Clock& clock);
  bool can_start() const;
  void record(Clock& clock, std::string kind, nlohmann::json data);
  nlohmann::json candidate_json() const;

  SessionConfig config_;
  std::shared_ptr<const Backend> backend_;
  TokenMasker masker_;
  TraceSink sink_;
  Rng rng_;
  History history_;
  SessionMetrics metrics_;
  std::vector<TraceRecord> trace_;
  std::uint64_t seq_ = 0;
  std::uint64_t next_candidate_ = 1;
  std::map<std::string, EventId> tags_;

  Micros t_cur_ = 0;
  std::optional<Candidate> cand_;
  // Consecutive user-speaker candidates due at the floor. A model that keeps
  // predicting the user at the same instant would never advance; past the
  // limit the session waits for input instead.
  static constexpr std::size_t kSelfStreakLimit = 1000;
  std::size_t self_streak_ = 0;

  SharedContext ctx_;
  std::size_t ctx_size_ = 0;
  std::uint64_t ctx_generation_ = 0;
};

/// Summary of generation latency against the reaction window.
struct LatencyReport {
  Micros p50_token = 0;  // wall compute per token
  Micros p99_token = 0;
  Micros p50_event = 0;  // generation start to complete entry
  Micros p99_event = 0;
  Micros max_event = 0;
  std::size_t events = 0;
  bool within_react = false;  // p99 event latency below t_react
  Micros median_input_gap = 0;
  /// User input keeps arriving sooner than an entry can be generated (median
  /// gap between inputs below the median generation latency), so candidates
  /// are invalidated before they can be emitted.
  bool starved = false;
};

LatencyReport measure_t_latency(const SessionMetrics& metrics, Micros t_react);

/// Nearest-rank percentile (p in [0, 100]) of unsorted values; 0 when empty.
Micros percentile(std::vector<Micros> values, double p);

struct AuditReport {
  bool ok = true;
  std::vector<std::string> violations;
  std::size_t emitted = 0;
  std::size_t kept_through = 0;
};

/// Replays a trace and checks that every emitted event was generated from
/// the history it was emitted into, up to inputs it was kept through; that
/// keeps obey the reaction window; that model events are never revised and
/// that the recorded history digests match the replay.
AuditReport audit_trace(std::span<const TraceRecord> trace, char user_speaker, Micros t_react);

}  // namespace livetalk
