#include "livetalk/event_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"

namespace livetalk {

using nlohmann::json;

Corpus read_corpus(std::istream& in) {
  Corpus out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(n) + ": " + e.what(), n);
    }
    if (!j.is_object() || !j.contains("t_us") || !j.contains("speaker") || !j.contains("text")) {
      throw ParseError("line " + std::to_string(n) + ": expected t_us, speaker and text", n);
    }
    Event e;
    try {
      e.time = j["t_us"].get<Micros>();
      const std::string speaker = j["speaker"].get<std::string>();
      if (speaker.size() != 1) throw ParseError("line " + std::to_string(n) + ": speaker must be one letter", n);
      e.speaker = speaker[0];
      e.text = j["text"].get<std::string>();
    } catch (const json::exception& ex) {
      throw ParseError("line " + std::to_string(n) + ": " + ex.what(), n);
    }
    const std::string doc = j.contains("doc") ? j["doc"].get<std::string>() : std::string();
    if (out.empty() || out.back().id != doc) out.push_back({doc, {}});
    out.back().events.push_back(std::move(e));
  }
  return out;
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_corpus(in);
}

std::vector<Event> flatten(const Corpus& corpus) {
  std::vector<Event> out;
  for (const Document& d : corpus) out.insert(out.end(), d.events.begin(), d.events.end());
  return out;
}

void write_events(std::ostream& out, std::span<const Event> events, const std::string& doc) {
  for (const Event& e : events) {
    json j = {{"t_us", e.time}, {"speaker", std::string(1, e.speaker)}, {"text", e.text}};
    if (!doc.empty()) j["doc"] = doc;
    out << j.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
  }
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const Document& d : corpus) write_events(out, d.events, d.id);
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_corpus(out, corpus);
}

std::vector<Input> read_input_script(std::istream& in) {
  std::vector<Input> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fail = [&](const std::string& why) { return ParseError("line " + std::to_string(n) + ": " + why, n); };
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw fail("expected an object");
      const Micros t = j.at("t_us").get<Micros>();
      const std::string type = j.value("type", std::string("message"));
      Input input;
      if (type == "message") {
        input = Input::message(t, j.at("text").get<std::string>(), j.value("tag", std::string()));
        const std::string speaker = j.value("speaker", std::string());
        if (speaker.size() > 1) throw fail("speaker must be one letter");
        if (!speaker.empty()) input.speaker = speaker[0];
      } else if (type == "retcon") {
        const std::string text = j.at("text").get<std::string>();
        if (j.contains("event_id")) {
          input = Input::retcon(t, j["event_id"].get<EventId>(), text);
        } else if (j.contains("target_tag")) {
          input = Input::retcon_tag(t, j["target_tag"].get<std::string>(), text);
        } else {
          throw fail("retcon needs event_id or target_tag");
        }
        if (j.contains("new_t_us")) input.replacement_time = j["new_t_us"].get<Micros>();
      } else if (type == "close") {
        input = Input::close(t);
      } else {
        throw fail("unknown input type '" + type + "'");
      }
      if (!out.empty() && t < out.back().time) throw fail("input times must not decrease");
      out.push_back(std::move(input));
    } catch (const json::exception& e) {
      throw fail(e.what());
    }
  }
  return out;
}

std::vector<Input> read_input_script(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_input_script(in);
}

std::vector<FeederRecord> read_feeder(std::istream& in) {
  std::vector<FeederRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fail = [&](const std::string& why) { return ParseError("line " + std::to_string(n) + ": " + why, n); };
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw fail("expected an object");
      FeederRecord r;
      r.index = j.at("index").get<std::size_t>();
      r.text = j.at("text").get<std::string>();
      r.t_us = j.at("t_us").get<Micros>();
      r.final = j.value("final", false);
      if (!out.empty() && r.t_us < out.back().t_us) throw fail("t_us must not decrease");
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw fail(e.what());
    }
  }
  return out;
}

std::vector<FeederRecord> read_feeder(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_feeder(in);
}

void write_feeder(std::ostream& out, std::span<const FeederRecord> records) {
  for (const FeederRecord& r : records) {
    out << json{{"index", r.index}, {"text", r.text}, {"t_us", r.t_us}, {"final", r.final}}.dump(
               -1, ' ', false, json::error_handler_t::replace)
        << '\n';
  }
}

}  // namespace livetalk
