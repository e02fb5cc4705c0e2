#include "livetalk/retcon.hpp"

#include <algorithm>

#include "livetalk/codec.hpp"

namespace livetalk {

std::optional<std::string> event_error(const Event& event, Format format) {
  CodecState s = CodecState::after(format, event.time);
  try {
    encode_entry(event, s);
  } catch (const EncodeError& e) {
    return std::string(e.what());
  }
  return std::nullopt;
}

Event apply_retcon(History& history, const RetconCommand& command) {
  const HistoryEntry* entry = history.find(command.target);
  if (!entry) throw RetconError("retcon of unknown event id " + std::to_string(command.target));
  if (entry->provenance != Provenance::user) {
    throw RetconError("retcon of model event " + std::to_string(command.target) + " is not allowed");
  }
  Event replacement{command.time.value_or(entry->event.time), entry->event.speaker, command.text};
  if (auto err = event_error(replacement, history.format())) throw RetconError("retcon rejected: " + *err);
  try {
    history.revise(command.target, replacement);
  } catch (const Error& e) {
    throw RetconError(std::string("retcon rejected: ") + e.what());
  }
  return replacement;
}

std::vector<Input> asr_inputs(std::span<const AsrWord> words) {
  std::vector<Input> out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string tag = "w" + std::to_string(i);
    out.push_back(Input::message(words[i].onset, words[i].text, tag));
    for (const auto& [at, text] : words[i].revisions) {
      out.push_back(Input::retcon_tag(std::max(at, words[i].onset), tag, text));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Input& a, const Input& b) { return a.time < b.time; });
  return out;
}

std::vector<FeederRecord> feeder_records(std::span<const AsrWord> words) {
  std::vector<FeederRecord> out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const AsrWord& w = words[i];
    out.push_back({i, w.text, w.onset, w.revisions.empty()});
    for (std::size_t k = 0; k < w.revisions.size(); ++k) {
      out.push_back({i, w.revisions[k].second, std::max(w.revisions[k].first, w.onset), k + 1 == w.revisions.size()});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const FeederRecord& a, const FeederRecord& b) { return a.t_us < b.t_us; });
  return out;
}

std::vector<AsrWord> feeder_words(std::span<const FeederRecord> records) {
  std::vector<AsrWord> out;
  std::vector<bool> closed;
  for (const FeederRecord& r : records) {
    const std::string where = "feed record for word " + std::to_string(r.index);
    if (r.index == out.size()) {
      out.push_back({r.t_us, r.text, {}});
      closed.push_back(r.final);
      continue;
    }
    if (r.index > out.size()) throw RetconError(where + " skips an index");
    if (closed[r.index]) throw RetconError(where + " follows its final record");
    if (r.t_us < out[r.index].onset) throw RetconError(where + " precedes the word's onset");
    AsrWord& w = out[r.index];
    const std::string& current = w.revisions.empty() ? w.text : w.revisions.back().second;
    if (r.text != current) w.revisions.emplace_back(r.t_us, r.text);
    closed[r.index] = r.final;
  }
  return out;
}

std::vector<AsrWord> unstable_asr_feeder(std::span<const Event> words, std::span<const std::string> confusions,
                                         double instability, Micros max_delay, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<Micros> delay(0, max_delay);
  std::vector<AsrWord> out;
  for (const Event& w : words) {
    AsrWord a;
    a.onset = w.time;
    a.text = w.text;
    if (!confusions.empty() && u(rng) < instability) {
      std::uniform_int_distribution<std::size_t> pick(0, confusions.size() - 1);
      a.text = confusions[pick(rng)];
      if (a.text != w.text) a.revisions.emplace_back(w.time + delay(rng), w.text);
    }
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace livetalk
