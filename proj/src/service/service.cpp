#include "livetalk/service.hpp"

#include <condition_variable>
#include <ctime>
#include <thread>

#include "livetalk/duration.hpp"
#include "livetalk/retcon.hpp"
#include "livetalk/transcript_log.hpp"

namespace livetalk {

using nlohmann::json;

struct Service::Hosted {
  std::string id;
  SessionConfig config;
  bool debug = true;
  std::filesystem::path log_path;
  InputChannel channel;
  std::unique_ptr<TranscriptLog> log;  // null for sessions loaded from disk
  std::unique_ptr<Session> session;

  std::mutex mu;
  std::condition_variable done;
  History history{Format::messenger};  // mirror of the log, readable from any thread
  std::vector<std::pair<std::uint64_t, std::string>> frames;  // (log seq, frame)
  std::vector<ClientPtr> clients;
  json effective;
  bool finished = false;
  std::thread lane;

  explicit Hosted(std::size_t queue) : channel(queue) {}
};

namespace {

class FrameError : public Error {
 public:
  FrameError(std::string code, const std::string& message) : Error(message), code(std::move(code)) {}
  std::string code;
};

std::string dump(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

template <class T>
T field(const json& frame, const char* key, T fallback) {
  if (!frame.contains(key) || frame[key].is_null()) return fallback;
  try {
    return frame[key].get<T>();
  } catch (const json::exception&) {
    throw FrameError("bad_field", std::string("field '") + key + "' has the wrong type");
  }
}

char speaker_field(const json& frame, const char* key, char fallback) {
  const std::string s = field<std::string>(frame, key, std::string());
  if (s.empty()) return fallback;
  if (s.size() != 1) throw FrameError("bad_field", std::string("field '") + key + "' must be one letter");
  return s[0];
}

Micros duration_field(const json& frame, const char* key, Micros fallback) {
  if (!frame.contains(key) || frame[key].is_null()) return fallback;
  const json& v = frame[key];
  try {
    if (v.is_number_integer()) {
      const Micros us = v.get<Micros>();
      if (us < 0) throw Error("negative duration");
      return us;
    }
    if (v.is_string()) return parse_duration(v.get<std::string>());
  } catch (const std::exception& e) {
    throw FrameError("bad_field", std::string("field '") + key + "': " + e.what());
  }
  throw FrameError("bad_field", std::string("field '") + key + "' must be microseconds or a duration string");
}

bool safe_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  for (const char c : id) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') return false;
  }
  return true;
}

}  // namespace

std::string event_frame(const std::string& session, const json& record) {
  json j = record;
  j["type"] = record.value("kind", "") == "close" ? "session_closed" : "event";
  j["session"] = session;
  return dump(j);
}

std::string error_frame(const std::string& code, const std::string& message, const json& ref) {
  json j = {{"type", "error"}, {"code", code}, {"message", message}};
  if (!ref.is_null()) j["ref"] = ref;
  return dump(j);
}

Service::Service(ServiceOptions options, std::shared_ptr<const Backend> backend)
    : options_(std::move(options)), backend_(std::move(backend)) {
  if (!backend_) throw Error("service needs a backend");
  options_.defaults.keep_trace = false;
}

Service::~Service() { shutdown(); }

void Service::handle(const ClientPtr& client, std::string_view text) {
  json ref;
  try {
    json frame;
    try {
      frame = json::parse(text);
    } catch (const json::exception& e) {
      throw FrameError("bad_frame", std::string("frame is not JSON: ") + e.what());
    }
    if (!frame.is_object()) throw FrameError("bad_frame", "frame must be an object");
    const std::string type = field<std::string>(frame, "type", std::string());
    ref = {{"type", type}};
    if (frame.contains("tag")) ref["tag"] = frame["tag"];
    if (type == "create_session") {
      create_session(client, frame);
    } else if (type == "attach") {
      attach(client, frame);
    } else if (type == "user_message" || type == "retcon" || type == "close") {
      forward(client, frame);
    } else {
      throw FrameError("unknown_type", "unknown frame type '" + type + "'");
    }
  } catch (const FrameError& e) {
    if (!client->send(error_frame(e.code, e.what(), ref))) client->close();
  } catch (const std::exception& e) {
    if (!client->send(error_frame("internal", e.what(), ref))) client->close();
  }
}

std::string Service::new_session_id() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  for (;;) {
    std::string id = std::string(stamp) + "-" + std::to_string(++counter_);
    if (!sessions_.count(id) && !std::filesystem::exists(options_.log_dir / (id + ".jsonl"))) return id;
  }
}

std::filesystem::path Service::log_path(const std::string& session) const {
  return options_.log_dir / (session + ".jsonl");
}

void Service::create_session(const ClientPtr& client, const json& frame) {
  SessionConfig cfg = options_.defaults;
  if (frame.contains("format")) {
    try {
      cfg.format = parse_format(field<std::string>(frame, "format", std::string()));
    } catch (const FrameError&) {
      throw;
    } catch (const std::exception& e) {
      throw FrameError("bad_field", e.what());
    }
  }
  cfg.user_speaker = speaker_field(frame, "user_speaker", cfg.user_speaker);
  if (!valid_speaker(cfg.user_speaker, cfg.format)) throw FrameError("bad_field", "user_speaker is not valid for the format");
  cfg.t_react = duration_field(frame, "t_react", cfg.t_react);
  cfg.seed = field<std::uint64_t>(frame, "seed", cfg.seed);
  cfg.speculation = field<bool>(frame, "speculation", cfg.speculation);
  cfg.limits.max_message_tokens = field<std::size_t>(frame, "max_message_tokens", cfg.limits.max_message_tokens);
  if (cfg.limits.max_message_tokens == 0) throw FrameError("bad_field", "max_message_tokens must be positive");

  std::vector<std::pair<Event, Provenance>> seeds;
  if (frame.contains("history")) {
    if (!frame["history"].is_array()) throw FrameError("bad_field", "history must be an array");
    Micros last = 0;
    for (const json& h : frame["history"]) {
      Event e;
      e.time = field<Micros>(h, "t_us", 0);
      e.speaker = speaker_field(h, "speaker", cfg.user_speaker);
      e.text = field<std::string>(h, "text", std::string());
      Provenance p = Provenance::user;
      try {
        p = parse_provenance(field<std::string>(h, "provenance", std::string("user")));
      } catch (const FrameError&) {
        throw;
      } catch (const std::exception& ex) {
        throw FrameError("bad_field", ex.what());
      }
      if (e.time < last) throw FrameError("bad_history", "history times must not decrease");
      if (truncate_to_granularity(e.time, cfg.format) != e.time) {
        throw FrameError("bad_history", "history time " + std::to_string(e.time) + " is finer than the format allows");
      }
      if (auto err = event_error(e, cfg.format)) throw FrameError("bad_history", *err);
      last = e.time;
      seeds.emplace_back(std::move(e), p);
    }
  }

  auto hosted = std::make_shared<Hosted>(options_.input_queue);
  hosted->config = cfg;
  hosted->debug = field<bool>(frame, "debug", options_.debug);
  hosted->history = History(cfg.format);
  hosted->effective = {{"format", to_string(cfg.format)},
                       {"user_speaker", std::string(1, cfg.user_speaker)},
                       {"t_react", cfg.t_react},
                       {"seed", cfg.seed},
                       {"speculation", cfg.speculation},
                       {"debug", hosted->debug},
                       {"max_message_tokens", cfg.limits.max_message_tokens},
                       {"backend", backend_->describe()}};

  std::string previous;
  {
    std::lock_guard lock(mu_);
    if (stopping_) throw FrameError("shutting_down", "the server is shutting down");
    hosted->id = new_session_id();
    hosted->log_path = log_path(hosted->id);
    std::filesystem::create_directories(options_.log_dir);
    hosted->log = std::make_unique<TranscriptLog>(hosted->log_path, hosted->id, hosted->effective);
    Hosted* raw = hosted.get();
    hosted->session = std::make_unique<Session>(cfg, backend_, [this, raw](const TraceRecord& r) { on_trace(*raw, r); });
    for (auto& [e, p] : seeds) hosted->session->seed(e, p);
    sessions_[hosted->id] = hosted;
    auto it = client_session_.find(client.get());
    if (it != client_session_.end()) previous = it->second;
    client_session_[client.get()] = hosted->id;
    {
      std::lock_guard hlock(hosted->mu);
      json created = {{"type", "session_created"},
                      {"session", hosted->id},
                      {"config", hosted->effective},
                      {"log", hosted->log_path.string()}};
      if (frame.contains("tag")) created["tag"] = frame["tag"];
      if (client->send(dump(created))) {
        hosted->clients.push_back(client);
      } else {
        client->close();
      }
    }
    // Started under the registry lock so shutdown() always sees a joinable lane.
    hosted->lane = std::thread([this, hosted] { run_lane(hosted); });
    if (!previous.empty()) {
      auto old = sessions_.find(previous);
      previous.clear();
      if (old != sessions_.end()) {
        std::lock_guard hlock(old->second->mu);
        std::erase(old->second->clients, client);
      }
    }
  }
}

void Service::attach(const ClientPtr& client, const json& frame) {
  const std::string id = field<std::string>(frame, "session", std::string());
  if (!safe_id(id)) throw FrameError("unknown_session", "no session '" + id + "'");
  const std::uint64_t after = field<std::uint64_t>(frame, "after_seq", 0);

  std::shared_ptr<Hosted> hosted;
  std::string previous;
  {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it != sessions_.end()) {
      hosted = it->second;
    } else if (std::filesystem::exists(log_path(id))) {
      ReplayResult r = replay_log(log_path(id));
      if (r.valid_lines == 0) throw FrameError("unknown_session", "log of '" + id + "' is unreadable: " + r.problem);
      hosted = std::make_shared<Hosted>(1);
      hosted->id = id;
      hosted->log_path = log_path(id);
      hosted->effective = r.config;
      hosted->history = std::move(r.history);
      hosted->finished = true;
      for (const LogRecord& rec : r.records) {
        if (rec.seq > 0) hosted->frames.emplace_back(rec.seq, event_frame(id, rec.body));
      }
      if (r.corrupt) hosted->effective["log_problem"] = r.problem;
      sessions_[id] = hosted;
    } else {
      throw FrameError("unknown_session", "no session '" + id + "'");
    }
    auto cs = client_session_.find(client.get());
    if (cs != client_session_.end() && cs->second != id) previous = cs->second;
    client_session_[client.get()] = id;
  }
  if (!previous.empty()) {
    std::shared_ptr<Hosted> old;
    {
      std::lock_guard lock(mu_);
      auto it = sessions_.find(previous);
      if (it != sessions_.end()) old = it->second;
    }
    if (old) drop(*old, client);
  }

  std::lock_guard lock(hosted->mu);
  const std::uint64_t next = hosted->frames.empty() ? 1 : hosted->frames.back().first + 1;
  json attached = {{"type", "attached"},
                   {"session", id},
                   {"config", hosted->effective},
                   {"next_seq", next},
                   {"closed", hosted->finished}};
  if (frame.contains("tag")) attached["tag"] = frame["tag"];
  bool ok = client->send(dump(attached));
  for (const auto& [seq, f] : hosted->frames) {
    if (!ok) break;
    if (seq > after) ok = client->send(f);
  }
  if (!ok) {
    client->close();
    return;
  }
  if (!hosted->finished &&
      std::find(hosted->clients.begin(), hosted->clients.end(), client) == hosted->clients.end()) {
    hosted->clients.push_back(client);
  }
}

std::shared_ptr<Service::Hosted> Service::session_of(const ClientPtr& client, const json& frame) const {
  std::lock_guard lock(mu_);
  std::string id = field<std::string>(frame, "session", std::string());
  if (id.empty()) {
    auto it = client_session_.find(client.get());
    if (it == client_session_.end()) throw FrameError("no_session", "create or attach to a session first");
    id = it->second;
  }
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw FrameError("unknown_session", "no session '" + id + "'");
  return it->second;
}

void Service::forward(const ClientPtr& client, const json& frame) {
  const std::shared_ptr<Hosted> hosted = session_of(client, frame);
  const std::string type = frame["type"].get<std::string>();
  const SessionConfig& cfg = hosted->config;
  Input in;
  if (type == "user_message") {
    if (!frame.contains("text")) throw FrameError("bad_field", "user_message needs text");
    if (frame.contains("client_time") && !frame["client_time"].is_number()) {
      throw FrameError("bad_field", "client_time must be a number");
    }
    const std::string tag = field<std::string>(frame, "tag", std::string());
    in = Input::message(0, field<std::string>(frame, "text", std::string()), tag);
    in.speaker = speaker_field(frame, "speaker", 0);
    if (auto err = event_error({0, in.speaker ? in.speaker : cfg.user_speaker, in.text}, cfg.format)) {
      throw FrameError("invalid_message", *err);
    }
  } else if (type == "retcon") {
    const std::string text = field<std::string>(frame, "text", std::string());
    const EventId target = field<EventId>(frame, "event_id", 0);
    const std::string target_tag = field<std::string>(frame, "target_tag", std::string());
    if (!target && target_tag.empty()) throw FrameError("bad_field", "retcon needs event_id or target_tag");
    in = target ? Input::retcon(0, target, text) : Input::retcon_tag(0, target_tag, text);
    if (frame.contains("t_us")) in.replacement_time = field<Micros>(frame, "t_us", 0);
    {
      std::lock_guard lock(hosted->mu);
      if (target) {
        const HistoryEntry* e = hosted->history.find(target);
        if (e && e->provenance == Provenance::model) {
          throw FrameError("invalid_retcon", "model events cannot be revised");
        }
        if (e) {
          if (auto err = event_error({0, e->event.speaker, text}, cfg.format)) throw FrameError("invalid_retcon", *err);
        }
      }
    }
  } else {
    in = Input::close(0);
  }
  {
    std::lock_guard lock(hosted->mu);
    if (hosted->finished) throw FrameError("session_closed", "session '" + hosted->id + "' is closed");
  }
  if (!hosted->channel.push(std::move(in))) throw FrameError("busy", "session input queue is full");
}

void Service::drop(Hosted& hosted, const ClientPtr& client) {
  std::lock_guard lock(hosted.mu);
  std::erase(hosted.clients, client);
}

void Service::disconnect(const ClientPtr& client) {
  std::shared_ptr<Hosted> hosted;
  {
    std::lock_guard lock(mu_);
    auto it = client_session_.find(client.get());
    if (it == client_session_.end()) return;
    auto s = sessions_.find(it->second);
    if (s != sessions_.end()) hosted = s->second;
    client_session_.erase(it);
  }
  if (hosted) drop(*hosted, client);
}

void Service::publish(Hosted& hosted, std::string frame, std::uint64_t seq) {
  for (auto it = hosted.clients.begin(); it != hosted.clients.end();) {
    if ((*it)->send(frame)) {
      ++it;
    } else {
      (*it)->close();
      it = hosted.clients.erase(it);
    }
  }
  if (seq > 0) hosted.frames.emplace_back(seq, std::move(frame));
}

void Service::on_trace(Hosted& hosted, const TraceRecord& r) {
  const History& h = hosted.session->history();
  json record;
  bool logged = true;
  if (r.kind == "input" || r.kind == "emit" || r.kind == "seed") {
    const EventId id = r.data.at("id").get<EventId>();
    std::string tag;
    if (r.kind == "input") tag = r.data.value("tag", std::string());
    record = hosted.log->event(*h.find(id), tag);
  } else if (r.kind == "retcon") {
    const EventId id = r.data.at("id").get<EventId>();
    record = hosted.log->retcon(id, h.find(id)->event);
  } else if (r.kind == "end") {
    record = hosted.log->close(r.data.value("reason", std::string()), history_hash(h));
  } else {
    logged = false;
  }

  std::lock_guard lock(hosted.mu);
  if (logged) {
    apply_log_record(hosted.history, record);
    publish(hosted, event_frame(hosted.id, record), record.at("seq").get<std::uint64_t>());
  } else if (r.kind == "reject") {
    publish(hosted, error_frame("rejected", r.data.value("error", std::string("input rejected")), r.data), 0);
  }
  if (!logged && hosted.debug) {
    json j = {{"type", "debug"}, {"session", hosted.id}, {"kind", r.kind}, {"trace_seq", r.seq}, {"t", r.t},
              {"data", r.data}};
    publish(hosted, dump(j), 0);
  }
}

void Service::run_lane(std::shared_ptr<Hosted> hosted) {
  WallClock clock(hosted->channel, hosted->config.format);
  std::string failure;
  try {
    const SessionResult result = hosted->session->run(clock);
    if (result.status == SessionStatus::failed) failure = result.error;
  } catch (const std::exception& e) {
    failure = e.what();
  }
  std::lock_guard lock(hosted->mu);
  if (!failure.empty()) publish(*hosted, error_frame("session_failed", failure, {{"session", hosted->id}}), 0);
  hosted->finished = true;
  hosted->clients.clear();
  hosted->done.notify_all();
}

bool Service::wait_closed(const std::string& session, std::chrono::milliseconds timeout) {
  std::shared_ptr<Hosted> hosted;
  {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(session);
    if (it == sessions_.end()) return false;
    hosted = it->second;
  }
  std::unique_lock lock(hosted->mu);
  return hosted->done.wait_for(lock, timeout, [&] { return hosted->finished; }) || hosted->finished;
}

std::optional<History> Service::history(const std::string& session) const {
  std::shared_ptr<Hosted> hosted;
  {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(session);
    if (it == sessions_.end()) return std::nullopt;
    hosted = it->second;
  }
  std::lock_guard lock(hosted->mu);
  return hosted->history;
}

std::vector<std::string> Service::sessions() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, _] : sessions_) out.push_back(id);
  return out;
}

void Service::shutdown() {
  std::vector<std::shared_ptr<Hosted>> all;
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
    for (const auto& [_, h] : sessions_) all.push_back(h);
  }
  for (const auto& h : all) {
    if (!h->lane.joinable()) continue;
    while (!h->channel.push(Input::close(0))) {
      {
        std::lock_guard lock(h->mu);
        if (h->finished) break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    h->lane.join();
  }
}

}  // namespace livetalk
