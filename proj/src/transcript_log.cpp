#include "livetalk/transcript_log.hpp"

#include <boost/crc.hpp>
#include <cstdio>

namespace livetalk {

using nlohmann::json;

namespace {

constexpr std::string_view kCrcKey = ",\"crc\":\"";

std::uint32_t crc32(std::string_view bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

bool valid_utf8(const std::string& s) {
  try {
    (void)json(s).dump();
    return true;
  } catch (const json::type_error&) {
    return false;
  }
}

std::string to_hex(const std::string& s) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * s.size());
  for (const unsigned char c : s) {
    out += kDigits[c >> 4];
    out += kDigits[c & 15];
  }
  return out;
}

std::string from_hex(const std::string& s) {
  if (s.size() % 2) throw Error("odd text_hex length");
  std::string out;
  for (std::size_t i = 0; i < s.size(); i += 2) out += static_cast<char>(std::stoi(s.substr(i, 2), nullptr, 16));
  return out;
}

void put_event(json& j, const Event& e) {
  j["t_us"] = e.time;
  j["speaker"] = std::string(1, e.speaker);
  if (valid_utf8(e.text)) {
    j["text"] = e.text;
  } else {
    j["text_hex"] = to_hex(e.text);
  }
}

Event get_event(const json& j) {
  Event e;
  e.time = j.at("t_us").get<Micros>();
  const std::string speaker = j.at("speaker").get<std::string>();
  if (speaker.size() != 1) throw Error("speaker must be one letter");
  e.speaker = speaker[0];
  e.text = j.contains("text_hex") ? from_hex(j["text_hex"].get<std::string>()) : j.at("text").get<std::string>();
  return e;
}

}  // namespace

std::string seal_log_line(const json& record) {
  std::string body = record.dump();
  if (!record.is_object() || record.empty()) throw Error("log record must be a non-empty object");
  char crc[9];
  std::snprintf(crc, sizeof crc, "%08x", crc32(body));
  body.pop_back();
  body += kCrcKey;
  body += crc;
  body += "\"}";
  return body;
}

std::optional<json> open_log_line(std::string_view line, std::string* problem) {
  const auto fail = [&](std::string why) -> std::optional<json> {
    if (problem) *problem = std::move(why);
    return std::nullopt;
  };
  const std::size_t tail = kCrcKey.size() + 8 + 2;
  if (line.size() < tail || line.substr(line.size() - 2) != "\"}") return fail("missing checksum");
  const std::size_t at = line.size() - tail;
  if (line.substr(at, kCrcKey.size()) != kCrcKey) return fail("missing checksum");
  const std::string body = std::string(line.substr(0, at)) + "}";
  const std::string_view hex = line.substr(line.size() - 10, 8);
  std::uint32_t stored = 0;
  for (const char c : hex) {
    int v = 0;
    if (c >= '0' && c <= '9') {
      v = c - '0';
    } else if (c >= 'a' && c <= 'f') {
      v = c - 'a' + 10;
    } else {
      return fail("malformed checksum");
    }
    stored = (stored << 4) | static_cast<std::uint32_t>(v);
  }
  if (crc32(body) != stored) return fail("checksum mismatch");
  try {
    json j = json::parse(body);
    if (!j.is_object()) return fail("record is not an object");
    return j;
  } catch (const json::exception& e) {
    return fail(std::string("unparseable record: ") + e.what());
  }
}

TranscriptLog::TranscriptLog(std::filesystem::path path, std::uint64_t seq, std::ios::openmode mode)
    : path_(std::move(path)), seq_(seq) {
  out_.open(path_, mode);
  if (!out_) throw Error("cannot open log " + path_.string());
}

TranscriptLog::TranscriptLog(std::filesystem::path path, const std::string& session_id, const json& config)
    : path_(std::move(path)) {
  if (std::filesystem::exists(path_)) throw Error("log already exists: " + path_.string());
  out_.open(path_, std::ios::binary | std::ios::out);
  if (!out_) throw Error("cannot create log " + path_.string());
  write({{"kind", "session"}, {"session", session_id}, {"config", config}});
}

TranscriptLog TranscriptLog::resume(std::filesystem::path path, std::uint64_t next_seq) {
  return TranscriptLog(std::move(path), next_seq, std::ios::binary | std::ios::app);
}

json TranscriptLog::write(json record) {
  record["seq"] = seq_;
  out_ << seal_log_line(record) << '\n';
  out_.flush();
  if (!out_) throw Error("log write failed: " + path_.string());
  ++seq_;
  return record;
}

json TranscriptLog::event(const HistoryEntry& entry, const std::string& tag) {
  json j = {{"kind", "event"}, {"id", entry.id}};
  put_event(j, entry.event);
  j["provenance"] = to_string(entry.provenance);
  if (!tag.empty()) j["tag"] = tag;
  return write(std::move(j));
}

json TranscriptLog::retcon(EventId id, const Event& replacement) {
  json j = {{"kind", "retcon"}, {"id", id}};
  put_event(j, replacement);
  j["provenance"] = to_string(Provenance::user);
  j["retcon_of"] = id;
  return write(std::move(j));
}

json TranscriptLog::close(const std::string& reason, std::uint64_t history_digest) {
  return write({{"kind", "close"}, {"reason", reason}, {"hist_hash", hex_digest(history_digest)}});
}

void apply_log_record(History& history, const json& record) {
  const std::string kind = record.at("kind").get<std::string>();
  if (kind == "event") {
    const EventId id = record.at("id").get<EventId>();
    const EventId got = history.append(get_event(record), parse_provenance(record.at("provenance").get<std::string>()));
    if (got != id) throw Error("event id " + std::to_string(id) + " out of order");
  } else if (kind == "retcon") {
    const EventId id = record.at("retcon_of").get<EventId>();
    const HistoryEntry* old = history.find(id);
    if (!old || old->provenance != Provenance::user) throw Error("retcon of unknown or model event");
    history.revise(id, get_event(record));
  }
}

ReplayResult replay_log(const std::filesystem::path& path, bool truncate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open log " + path.string());
  ReplayResult r;
  std::string line;
  std::uint64_t offset = 0;
  const auto stop = [&](std::string why) {
    r.corrupt = true;
    r.problem = "line " + std::to_string(r.valid_lines + 1) + ": " + why;
  };
  while (std::getline(in, line)) {
    if (in.eof()) {
      stop("incomplete line");
      break;
    }
    std::string why;
    auto j = open_log_line(line, &why);
    if (!j) {
      stop(why);
      break;
    }
    try {
      LogRecord rec;
      rec.seq = j->at("seq").get<std::uint64_t>();
      rec.kind = j->at("kind").get<std::string>();
      if (rec.seq != r.valid_lines) throw Error("sequence gap");
      if (r.closed) throw Error("record after close");
      if (rec.seq == 0) {
        if (rec.kind != "session") throw Error("first record must be the session header");
        r.session_id = j->at("session").get<std::string>();
        r.config = j->at("config");
        r.history = History(parse_format(r.config.at("format").get<std::string>()));
      } else if (rec.kind == "event" || rec.kind == "retcon") {
        apply_log_record(r.history, *j);
      } else if (rec.kind == "close") {
        r.closed = true;
      } else {
        throw Error("unknown record kind '" + rec.kind + "'");
      }
      rec.body = std::move(*j);
      r.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      stop(e.what());
      break;
    }
    offset += line.size() + 1;
    r.valid_bytes = offset;
    ++r.valid_lines;
  }
  in.close();
  if (r.corrupt && truncate) std::filesystem::resize_file(path, r.valid_bytes);
  return r;
}

}  // namespace livetalk
