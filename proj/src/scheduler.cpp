#include "livetalk/scheduler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "livetalk/retcon.hpp"

namespace livetalk {

namespace {

using nlohmann::json;

json event_json(const Event& e) { return {{"time", e.time}, {"speaker", std::string(1, e.speaker)}, {"text", e.text}}; }

std::string hex(std::uint64_t v) { return hex_digest(v); }

bool header_complete(const EventGenerator& g) { return g.done() || g.state().in_body(); }

}  // namespace

Disposition candidate_disposition(char speaker, Micros candidate_time, char user_speaker, Micros input_time,
                                  Micros t_react) {
  if (speaker != user_speaker && candidate_time - input_time <= t_react) return Disposition::keep;
  return Disposition::discard;
}

std::string dump_trace(const TraceRecord& r) {
  return to_json(r).dump(-1, ' ', false, json::error_handler_t::replace);
}

json to_json(const TraceRecord& r) { return {{"seq", r.seq}, {"t", r.t}, {"kind", r.kind}, {"data", r.data}}; }

TraceRecord trace_from_json(const json& j) {
  TraceRecord r;
  r.seq = j.at("seq").get<std::uint64_t>();
  r.t = j.at("t").get<Micros>();
  r.kind = j.at("kind").get<std::string>();
  r.data = j.value("data", json::object());
  return r;
}

Session::Session(SessionConfig config, std::shared_ptr<const Backend> backend, TraceSink sink)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      masker_(backend_->tokenizer()),
      sink_(std::move(sink)),
      rng_(config_.seed),
      history_(config_.format) {
  if (!valid_speaker(config_.user_speaker, config_.format)) throw Error("invalid user speaker");
  if (config_.t_react < 0) throw Error("t_react must be non-negative");
}

void Session::seed(const Event& event, Provenance provenance) {
  if (auto err = event_error(event, config_.format)) throw Error("seed event rejected: " + *err);
  history_.append(event, provenance);
}

void Session::record(Clock& clock, std::string kind, json data) {
  TraceRecord r{++seq_, clock.now(), std::move(kind), std::move(data)};
  if (sink_) sink_(r);
  if (config_.keep_trace) trace_.push_back(std::move(r));
}

SharedContext Session::context() {
  const Tokenizer& tok = backend_->tokenizer();
  const std::size_t budget = backend_->context_budget();
  const std::size_t reserve =
      config_.context_reserve ? config_.context_reserve : config_.limits.max_message_tokens + 32;
  const std::size_t limit = budget > reserve ? budget - reserve : 0;
  if (ctx_ && ctx_generation_ == history_.generation()) {
    if (ctx_size_ == history_.size()) return ctx_;
    auto next = std::make_shared<Context>(*ctx_);
    bool ok = true;
    try {
      for (std::size_t i = ctx_size_; i < history_.size(); ++i) {
        tok.encode_append(encode_entry(history_.entries()[i].event, next->state), next->tokens);
      }
    } catch (const EncodeError&) {
      ok = false;
    }
    if (ok && next->tokens.size() <= limit) {
      ctx_ = std::move(next);
      ctx_size_ = history_.size();
      return ctx_;
    }
  }
  const std::vector<Event> events = history_.events();
  ctx_ = build_context(tok, events, config_.format, budget, reserve);
  ctx_size_ = history_.size();
  ctx_generation_ = history_.generation();
  return ctx_;
}

bool Session::can_start() const {
  if (!ctx_) return true;
  return can_complete(ctx_->state, t_cur_);
}

nlohmann::json Session::candidate_json() const {
  const CandidateEvent c = cand_->gen->candidate();
  json j = {{"cand", cand_->id}, {"time", c.event.time}, {"speaker", std::string(1, c.event.speaker)}};
  return j;
}

void Session::start_candidate(Clock& clock) {
  Candidate c;
  c.id = next_candidate_++;
  c.gen.emplace(*backend_, masker_, context(), t_cur_, config_.limits);
  c.started = clock.now();
  cand_.reset();
  cand_.emplace(std::move(c));
  ++metrics_.candidates;
  record(clock, "candidate",
         {{"cand", cand_->id},
          {"min_time", t_cur_},
          {"hist_size", history_.size()},
          {"hist_hash", hex(history_hash(history_))}});
}

void Session::discard(Clock& clock, const std::string& reason) {
  json j = cand_->gen->timestamp_complete() ? candidate_json() : json{{"cand", cand_->id}};
  j["reason"] = reason;
  record(clock, "discard", std::move(j));
  ++metrics_.discarded;
  cand_.reset();
}

Session::Flow Session::decide(Clock& clock, Micros input_time) {
  const CandidateEvent c = cand_->gen->candidate();
  const Micros t = c.event.time;
  const Micros first = *cand_->interrupted;
  if (t < input_time) {
    discard(clock, "stale");
    return Flow::restart;
  }
  if (t < history_.last_time()) {
    discard(clock, "invalid");
    return Flow::restart;
  }
  if (candidate_disposition(c.event.speaker, t, config_.user_speaker, first, config_.t_react) == Disposition::keep) {
    json j = candidate_json();
    j["input_time"] = first;
    j["inputs"] = cand_->unresolved;
    record(clock, "keep", std::move(j));
    ++metrics_.kept;
    cand_->interrupted.reset();
    cand_->unresolved.clear();
    return Flow::go_on;
  }
  if (config_.speculation && t - first > config_.t_react) {
    const Micros lo = std::max(first + config_.t_react + 1, t_cur_);
    SpeculationResult res;
    EventGenerator g = speculate(*backend_, masker_, c, context(), lo, t_cur_, rng_, res, config_.limits);
    ++metrics_.speculations;
    if (res.outcome != SpeculationResult::Outcome::speculated) ++metrics_.speculation_skipped;
    metrics_.draft_offered += res.offered;
    metrics_.draft_accepted += res.accepted;
    const std::uint64_t from = cand_->id;
    Candidate next;
    next.id = next_candidate_++;
    next.gen.emplace(std::move(g));
    next.started = clock.now();
    json steps = json::array();
    for (const auto& s : res.steps) steps.push_back({s.token, s.p, s.q, s.accepted});
    record(clock, "speculate",
           {{"cand", from},
            {"next", next.id},
            {"time", t},
            {"input_time", first},
            {"lo", lo},
            {"outcome", to_string(res.outcome)},
            {"level", res.level},
            {"offered", res.offered},
            {"accepted", res.accepted},
            {"steps", std::move(steps)}});
    cand_.reset();
    cand_.emplace(std::move(next));
    ++metrics_.candidates;
    record(clock, "candidate",
           {{"cand", cand_->id},
            {"min_time", t_cur_},
            {"hist_size", history_.size()},
            {"hist_hash", hex(history_hash(history_))},
            {"speculative", true}});
    return Flow::go_on;
  }
  discard(clock, c.event.speaker == config_.user_speaker ? "user_speaker" : "window");
  return Flow::restart;
}

Session::Flow Session::on_input(Clock& clock, Input in) {
  Micros mark = 0;
  std::uint64_t seq = 0;
  switch (in.kind) {
    case Input::Kind::close:
      record(clock, "close", json::object());
      return Flow::stop;
    case Input::Kind::message: {
      const Micros t = std::max(truncate_to_granularity(in.time, config_.format), history_.last_time());
      Event e{t, in.speaker ? in.speaker : config_.user_speaker, std::move(in.text)};
      if (auto err = event_error(e, config_.format)) {
        ++metrics_.rejected;
        record(clock, "reject", {{"tag", in.tag}, {"error", *err}});
        return Flow::go_on;
      }
      const EventId id = history_.append(e, Provenance::user);
      if (!in.tag.empty()) tags_[in.tag] = id;
      self_streak_ = 0;
      ++metrics_.inputs;
      metrics_.input_times.push_back(t);
      t_cur_ = std::max(t_cur_, t);
      json j = event_json(e);
      j["id"] = id;
      j["tag"] = in.tag;
      j["arrived"] = in.time;
      j["hist_hash"] = hex(history_hash(history_));
      record(clock, "input", std::move(j));
      mark = t;
      break;
    }
    case Input::Kind::retcon: {
      EventId target = in.target;
      if (!target) {
        auto it = tags_.find(in.target_tag);
        target = it == tags_.end() ? 0 : it->second;
      }
      Event replaced;
      try {
        if (const HistoryEntry* old = history_.find(target)) replaced = old->event;
        std::optional<Micros> when;
        if (in.replacement_time) when = truncate_to_granularity(*in.replacement_time, config_.format);
        apply_retcon(history_, {target, in.text, when, in.time});
      } catch (const RetconError& e) {
        ++metrics_.rejected;
        record(clock, "reject", {{"target", target}, {"tag", in.target_tag}, {"error", e.what()}});
        return Flow::go_on;
      }
      ++metrics_.retcons;
      self_streak_ = 0;
      const Micros issue = std::max(in.time, history_.last_time());
      t_cur_ = std::max(t_cur_, issue);
      const Event& now = history_.find(target)->event;
      json j = event_json(now);
      j["id"] = target;
      j["issue_time"] = issue;
      j["replaced"] = event_json(replaced);
      j["hist_hash"] = hex(history_hash(history_));
      record(clock, "retcon", std::move(j));
      mark = issue;
      break;
    }
  }
  seq = seq_;
  if (!cand_) return Flow::go_on;
  cand_->unresolved.push_back(seq);
  if (!cand_->interrupted) cand_->interrupted = mark;
  if (header_complete(*cand_->gen)) return decide(clock, t_cur_);
  return Flow::go_on;
}

void Session::emit(Clock& clock) {
  const CandidateEvent c = cand_->gen->candidate();
  if (c.event.speaker == config_.user_speaker) {
    self_streak_ = c.event.time > t_cur_ ? 1 : self_streak_ + 1;
    t_cur_ = std::max(t_cur_, c.event.time);
    ++metrics_.self_discarded;
    discard(clock, "user_speaker_due");
    return;
  }
  if (c.event.time < history_.last_time()) {
    discard(clock, "invalid");
    return;
  }
  const EventId id = history_.append(c.event, Provenance::model);
  const Micros now = clock.now();
  self_streak_ = 0;
  ++metrics_.emitted;
  metrics_.emission_lag.push_back(now - c.event.time);
  metrics_.starved_steps += c.starved_steps;
  t_cur_ = std::max(t_cur_, c.event.time);
  json j = event_json(c.event);
  j["cand"] = cand_->id;
  j["id"] = id;
  j["emitted_at"] = now;
  j["tokens"] = c.tokens.size();
  j["event_hash"] = hex(event_hash(c.event));
  j["hist_hash"] = hex(history_hash(history_));
  record(clock, "emit", std::move(j));
  cand_.reset();
}

SessionResult Session::run(Clock& clock) {
  record(clock, "start",
         {{"format", to_string(config_.format)},
          {"user_speaker", std::string(1, config_.user_speaker)},
          {"t_react", config_.t_react},
          {"speculation", config_.speculation},
          {"seed", config_.seed},
          {"max_message_tokens", config_.limits.max_message_tokens},
          {"backend", backend_->describe()}});
  for (const auto& e : history_.entries()) {
    json j = event_json(e.event);
    j["id"] = e.id;
    j["provenance"] = to_string(e.provenance);
    record(clock, "seed", std::move(j));
  }
  t_cur_ = std::max(clock.now(), history_.last_time());
  auto finish = [&](SessionStatus status, std::string reason) {
    record(clock, "end",
           {{"reason", reason}, {"emitted", metrics_.emitted}, {"hist_hash", hex(history_hash(history_))}});
    return SessionResult{status, status == SessionStatus::failed ? reason : std::string()};
  };
  const auto past_end = [&](Micros t) { return config_.end_time && t > *config_.end_time; };

  try {
    for (;;) {
      if (metrics_.emitted >= config_.max_events) return finish(SessionStatus::ended, "max_events");
      if (!cand_) {
        if (clock.pending()) {
          if (on_input(clock, *clock.poll()) == Flow::stop) return finish(SessionStatus::closed, "closed");
          continue;
        }
        if (past_end(clock.now())) return finish(SessionStatus::ended, "end_time");
        context();
        if (!can_start() || self_streak_ >= kSelfStreakLimit) {
          record(clock, "idle", {{"min_time", t_cur_}, {"reason", can_start() ? "user_speaker_loop" : "no_legal_entry"}});
          self_streak_ = 0;
          if (!clock.wait_for_input()) return finish(SessionStatus::ended, "no_input");
          continue;
        }
        start_candidate(clock);
      }

      Flow flow = Flow::go_on;
      while (cand_ && !cand_->gen->done()) {
        if (clock.pending()) {
          flow = on_input(clock, *clock.poll());
          if (flow == Flow::stop) return finish(SessionStatus::closed, "closed");
          continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        cand_->gen->sample(rng_);
        const auto t1 = std::chrono::steady_clock::now();
        metrics_.token_compute.push_back(std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count());
        ++metrics_.tokens;
        clock.spend(config_.token_cost);
        if (cand_->interrupted && header_complete(*cand_->gen)) {
          flow = decide(clock, t_cur_);
        }
      }
      if (!cand_) continue;
      if (cand_->started >= 0) {
        metrics_.event_latency.push_back(clock.now() - cand_->started);
        cand_->started = -1;
      }

      const Micros due = cand_->gen->candidate().event.time;
      if (auto p = clock.pending(); p && *p < due) {
        if (on_input(clock, *clock.poll()) == Flow::stop) return finish(SessionStatus::closed, "closed");
        continue;
      }
      if (due > clock.now()) {
        if (past_end(due)) {
          if (!clock.wait_until(*config_.end_time + 1)) return finish(SessionStatus::ended, "end_time");
          continue;
        }
        if (clock.wait_until(due)) continue;
        if (due > clock.now()) continue;
      }
      emit(clock);
    }
  } catch (const StarvedError& e) {
    return finish(SessionStatus::failed, e.what());
  } catch (const BackendError& e) {
    return finish(SessionStatus::failed, e.what());
  }
}

Micros percentile(std::vector<Micros> values, double p) {
  if (values.empty()) return 0;
  std::sort(values.begin(), values.end());
  // The tolerance keeps ranks like 99.9% of 10^4 from rounding up past 9990.
  const double exact = p / 100.0 * static_cast<double>(values.size());
  const double rank = std::ceil(exact - 1e-9 * std::max(1.0, exact));
  const std::size_t k = rank < 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
  return values[std::min(k, values.size() - 1)];
}

LatencyReport measure_t_latency(const SessionMetrics& m, Micros t_react) {
  LatencyReport r;
  r.p50_token = percentile(m.token_compute, 50);
  r.p99_token = percentile(m.token_compute, 99);
  r.p50_event = percentile(m.event_latency, 50);
  r.p99_event = percentile(m.event_latency, 99);
  r.max_event = m.event_latency.empty() ? 0 : *std::max_element(m.event_latency.begin(), m.event_latency.end());
  r.events = m.event_latency.size();
  r.within_react = !m.event_latency.empty() && r.p99_event < t_react;
  std::vector<Micros> gaps;
  for (std::size_t i = 1; i < m.input_times.size(); ++i) gaps.push_back(m.input_times[i] - m.input_times[i - 1]);
  r.median_input_gap = percentile(gaps, 50);
  if (gaps.size() >= 2) {
    // Without a single complete entry the generation latency is unbounded.
    r.starved = m.event_latency.empty() || r.median_input_gap < r.p50_event;
  }
  return r;
}

AuditReport audit_trace(std::span<const TraceRecord> trace, char user_speaker, Micros t_react) {
  AuditReport rep;
  auto fail = [&](const TraceRecord& r, const std::string& what) {
    rep.ok = false;
    rep.violations.push_back("#" + std::to_string(r.seq) + " " + r.kind + ": " + what);
  };
  struct Entry {
    EventId id;
    Event event;
    bool model;
  };
  std::vector<Entry> hist;
  std::vector<std::uint64_t> changes;  // seqs of inputs and retcons
  struct Snapshot {
    std::size_t changes = 0;
    std::set<std::uint64_t> kept;
  };
  std::map<std::uint64_t, Snapshot> cands;
  std::set<EventId> ids;

  auto digest = [&] {
    std::vector<Event> ev;
    for (const auto& e : hist) ev.push_back(e.event);
    return hex(events_hash(ev));
  };
  auto read_event = [](const json& d) {
    return Event{d.at("time").get<Micros>(), d.at("speaker").get<std::string>().at(0), d.at("text").get<std::string>()};
  };
  auto check_hash = [&](const TraceRecord& r) {
    if (r.data.contains("hist_hash") && r.data["hist_hash"].get<std::string>() != digest()) {
      fail(r, "history digest differs from the replay");
    }
  };

  for (const TraceRecord& r : trace) {
    const json& d = r.data;
    if (r.kind == "seed" || r.kind == "input") {
      const Event e = read_event(d);
      const EventId id = d.at("id").get<EventId>();
      if (!ids.insert(id).second) fail(r, "duplicate event id");
      if (!hist.empty() && e.time < hist.back().event.time) fail(r, "input precedes the last entry");
      hist.push_back({id, e, d.value("provenance", "user") == "model"});
      if (r.kind == "input") changes.push_back(r.seq);
      check_hash(r);
    } else if (r.kind == "retcon") {
      const EventId id = d.at("id").get<EventId>();
      auto it = std::find_if(hist.begin(), hist.end(), [&](const Entry& e) { return e.id == id; });
      if (it == hist.end()) {
        fail(r, "retcon of an unknown event");
        continue;
      }
      if (it->model) fail(r, "retcon of a model event");
      it->event = read_event(d);
      changes.push_back(r.seq);
      check_hash(r);
    } else if (r.kind == "candidate") {
      cands[d.at("cand").get<std::uint64_t>()] = {changes.size(), {}};
      if (d.at("hist_size").get<std::size_t>() != hist.size()) fail(r, "history size differs from the replay");
      check_hash(r);
    } else if (r.kind == "keep") {
      auto& snap = cands[d.at("cand").get<std::uint64_t>()];
      for (const auto& s : d.at("inputs")) snap.kept.insert(s.get<std::uint64_t>());
      const char speaker = d.at("speaker").get<std::string>().at(0);
      const Micros gap = d.at("time").get<Micros>() - d.at("input_time").get<Micros>();
      if (speaker == user_speaker || gap < 0 || gap > t_react) fail(r, "keep outside the reaction window");
      ++rep.kept_through;
    } else if (r.kind == "emit") {
      const std::uint64_t cand = d.at("cand").get<std::uint64_t>();
      auto it = cands.find(cand);
      if (it == cands.end()) {
        fail(r, "emission of an unknown candidate");
        continue;
      }
      for (std::size_t i = it->second.changes; i < changes.size(); ++i) {
        if (!it->second.kept.count(changes[i])) {
          fail(r, "history changed after generation without a keep (#" + std::to_string(changes[i]) + ")");
        }
      }
      const Event e = read_event(d);
      if (e.speaker == user_speaker) fail(r, "model emitted as the user speaker");
      if (!hist.empty() && e.time < hist.back().event.time) fail(r, "emission precedes the last entry");
      if (d.at("emitted_at").get<Micros>() < e.time) fail(r, "emitted before its timestamp");
      if (d.contains("event_hash") && d["event_hash"].get<std::string>() != hex(event_hash(e))) {
        fail(r, "event digest mismatch");
      }
      const EventId id = d.at("id").get<EventId>();
      if (!ids.insert(id).second) fail(r, "duplicate event id");
      hist.push_back({id, e, true});
      check_hash(r);
      ++rep.emitted;
    }
  }
  return rep;
}

}  // namespace livetalk
