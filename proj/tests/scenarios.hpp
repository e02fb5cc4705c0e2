#pragma once

// Small enumerable scenarios shared by the unit tests and the acceptance run.

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "livetalk/backend.hpp"
#include "livetalk/constrained.hpp"
#include "oracle.hpp"
#include "support.hpp"

namespace livetalk::testing {

/// Deterministic pseudo-random logits keyed on the whole prefix, over a
/// support chosen from the text of the entry in progress and the number of
/// finished entries in the prefix.
using SupportRule = std::function<std::vector<std::string>(const std::string& entry, std::size_t entries)>;

inline FunctionBackend::Fn phased_logits(SharedTokenizer tok, Format format, SupportRule rule, std::uint64_t salt) {
  return [tok, format, rule, salt](std::span<const TokenId> prefix, TokenDistribution& out) {
    std::uint64_t h = 1469598103934665603ull ^ salt;
    for (TokenId t : prefix) h = (h ^ static_cast<std::uint64_t>(t)) * 1099511628211ull;
    const std::string text = tok->decode(prefix);
    const std::string_view eom = eom_sentinel(format);
    std::size_t entries = 0, start = 0;
    for (std::size_t p = text.find(eom); p != std::string::npos; p = text.find(eom, p + eom.size())) {
      ++entries;
      start = p + eom.size();
    }
    for (const std::string& piece : rule(text.substr(start), entries)) {
      const auto ids = tok->encode(piece);
      if (ids.size() != 1) throw Error("support piece is not a single token: " + piece);
      const TokenId t = ids[0];
      std::uint64_t x = (h ^ static_cast<std::uint64_t>(t) * 0x9e3779b97f4a7c15ull) * 0xbf58476d1ce4e5b9ull;
      x ^= x >> 31;
      out.logp[static_cast<std::size_t>(t)] = 3.0 * static_cast<double>(x >> 11) * 0x1.0p-53;
    }
  };
}

/// Interrupted draft and its post-interruption context.
struct SpeculationScenario {
  SharedTokenizer tok;
  std::shared_ptr<FunctionBackend> backend;
  Format format = Format::messenger;
  std::vector<Event> before;  // history the draft was sampled from
  std::vector<Event> after;   // history including the interruption
  Micros old_min = 0;
  Micros interruption = 0;
  Micros t_react = 200'000;
  DecodeLimits limits{1};
  Micros lo() const { return interruption + t_react + 1; }
  Micros horizon = 0;  // last representable time of interest
};

/// Messenger: the old entry ends at :45.2, the interruption at :46.3. Drafts
/// timed :46.6 re-render with the ";46" prefix omitted; one of their
/// tokenizations straddles it. Six outcomes after the interruption.
inline SpeculationScenario messenger_speculation_scenario() {
  SpeculationScenario s;
  s.tok = std::make_shared<Tokenizer>(
      Tokenizer::from_pieces({";", ".", "4", "5", "6", "46", "6.", "55", ".5", "B", "<eom>", "A", "h"}));
  s.format = Format::messenger;
  const Micros prev = utc(2024, 3, 5, 10, 20, 45, 2);
  s.before = {{prev, 'B', "h"}};
  s.interruption = utc(2024, 3, 5, 10, 20, 46, 3);
  s.after = {{prev, 'B', "h"}, {s.interruption, 'A', "h"}};
  s.old_min = prev;
  s.horizon = prev + 60 * kMicrosPerSecond;
  SupportRule rule = [](const std::string& z, std::size_t entries) -> std::vector<std::string> {
    if (z.find('B') != std::string::npos) return {"<eom>"};
    if (z.empty()) return {";", ".", ".5"};
    std::vector<std::string> all = {";", ".", "5", "6", "6.", "55", ".5", "B"};
    if (entries < 2) all.insert(all.end(), {"4", "46"});
    return all;
  };
  s.backend = std::make_shared<FunctionBackend>(s.tok, phased_logits(s.tok, s.format, rule, 11), "phased");
  return s;
}

/// Spoken: the old entry at 1.00 s, the interruption at 1.10 s, nine codes
/// 1.11 to 1.33 s of which three are late enough to be drafts.
inline SpeculationScenario spoken_speculation_scenario() {
  SpeculationScenario s;
  s.tok = std::make_shared<Tokenizer>(Tokenizer::from_pieces({"1", "2", "3", "12", "23", "B", "x", "\n", "x\n", "A"}));
  s.format = Format::spoken;
  s.before = {{1'000'000, 'B', "x"}};
  s.interruption = 1'100'000;
  s.after = {{1'000'000, 'B', "x"}, {s.interruption, 'A', "x"}};
  s.old_min = 1'000'000;
  s.horizon = 1'000'000 + 10 * kMicrosPerSecond - kMicrosPerCentisecond;
  SupportRule rule = [](const std::string& z, std::size_t) -> std::vector<std::string> {
    if (z.find('B') != std::string::npos) return {"x", "x\n", "\n"};
    if (z.empty()) return {"1", "12"};
    return {"1", "2", "3", "12", "23", "B"};
  };
  s.backend = std::make_shared<FunctionBackend>(s.tok, phased_logits(s.tok, s.format, rule, 12), "phased");
  return s;
}

/// Every token sequence of the masked process with its probability, using
/// the whole-string oracle for legality.
inline std::map<std::vector<TokenId>, double> enumerate_token_paths(const Backend& backend,
                                                                    const std::vector<TokenId>& context,
                                                                    const EntryOracle& oracle, std::size_t max_tokens) {
  const Tokenizer& tok = backend.tokenizer();
  std::map<std::vector<TokenId>, double> out;
  std::vector<TokenId> prefix = context;
  std::vector<TokenId> path;
  std::function<void(const std::string&, double, std::size_t)> walk = [&](const std::string& z, double mass,
                                                                          std::size_t body_tokens) {
    if (path.size() >= max_tokens) return;
    TokenDistribution d;
    backend.next_logprobs(prefix, d);
    const bool in_body = oracle.body_start(z) != std::string::npos;
    std::vector<std::pair<TokenId, double>> kept;
    double hi = kNegInf;
    for (std::size_t i = 0; i < tok.size(); ++i) {
      if (d.logp[i] == kNegInf) continue;
      if (!oracle.legal(z, tok.piece(static_cast<TokenId>(i)), body_tokens)) continue;
      kept.emplace_back(static_cast<TokenId>(i), d.logp[i]);
      hi = std::max(hi, d.logp[i]);
    }
    double sum = 0.0;
    for (auto& [i, lp] : kept) sum += std::exp(lp - hi);
    for (auto& [i, lp] : kept) {
      const double p = std::exp(lp - hi) / sum;
      const std::string next = z + tok.piece(i);
      path.push_back(i);
      if (oracle.judge(next) == EntryOracle::Verdict::complete) {
        out[path] += mass * p;
      } else {
        prefix.push_back(i);
        walk(next, mass * p, body_tokens + (in_body ? 1 : 0));
        prefix.pop_back();
      }
      path.pop_back();
    }
  };
  walk("", 1.0, 0);
  return out;
}

/// Distribution of transported drafts: old-process token sequences with
/// t >= lo whose tokens split exactly where the new rendering begins, with
/// that leading part removed. Computed from whole strings and the encoder.
inline std::map<std::vector<TokenId>, double> transported_drafts(const SpeculationScenario& s) {
  const auto old_ctx = build_context(*s.tok, s.before, s.format);
  const auto new_ctx = build_context(*s.tok, s.after, s.format);
  EntryOracle oracle(old_ctx->state, s.old_min, s.horizon, s.limits.max_message_tokens);
  const auto paths = enumerate_token_paths(*s.backend, old_ctx->tokens, oracle, 16);
  std::map<std::vector<TokenId>, double> out;
  double total = 0.0;
  for (const auto& [tokens, p] : paths) {
    const std::string old_text = s.tok->decode(tokens);
    const auto dec = decode(old_text, old_ctx->state);
    const Event e = dec.events.at(0);
    if (e.time < s.lo()) continue;
    CodecState ns = new_ctx->state;
    std::string new_text;
    try {
      new_text = encode_entry(e, ns);
    } catch (const EncodeError&) {
      continue;
    }
    if (old_text.size() < new_text.size() || old_text.compare(old_text.size() - new_text.size(), new_text.size(),
                                                              new_text) != 0) {
      continue;
    }
    const std::size_t omit = old_text.size() - new_text.size();
    std::size_t covered = 0, k = 0;
    while (covered < omit) covered += s.tok->piece(tokens[k++]).size();
    if (covered != omit) continue;
    out[std::vector<TokenId>(tokens.begin() + static_cast<std::ptrdiff_t>(k), tokens.end())] += p;
    total += p;
  }
  for (auto& [k, v] : out) v /= total;
  return out;
}

/// q(y | x') from the transported-draft distribution.
inline double transported_conditional(const std::map<std::vector<TokenId>, double>& drafts,
                                      const std::vector<TokenId>& prefix, TokenId y) {
  double num = 0.0, den = 0.0;
  for (const auto& [d, p] : drafts) {
    if (d.size() < prefix.size() || !std::equal(prefix.begin(), prefix.end(), d.begin())) continue;
    den += p;
    if (d.size() > prefix.size() && d[prefix.size()] == y) num += p;
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace livetalk::testing

#include "livetalk/mock_backend.hpp"
#include "livetalk/scheduler.hpp"

namespace livetalk::testing {

/// Compact transcript key: "time_cs speaker text" per event.
inline std::string transcript_key(std::span<const Event> events) {
  std::string k;
  for (const Event& e : events) {
    k += std::to_string(e.time / kMicrosPerCentisecond) + e.speaker + e.text + ";";
  }
  return k;
}

/// Event-level distribution of the masked next-entry process.
inline std::map<std::string, std::pair<Event, double>> next_event_distribution(const Backend& backend,
                                                                             std::span<const Event> history,
                                                                             Format format, Micros min_time,
                                                                             DecodeLimits limits) {
  const auto ctx = build_context(backend.tokenizer(), history, format);
  const Micros horizon = format == Format::spoken ? ctx->state.prev + 10 * kMicrosPerSecond - kMicrosPerCentisecond
                                                  : min_time + 3600 * kMicrosPerSecond;
  EntryOracle oracle(ctx->state, min_time, horizon, limits.max_message_tokens);
  double lost = 0.0;
  const auto strings = enumerate_masked(backend, ctx->tokens, oracle, 64, 0.0, &lost);
  if (lost > 0.0) throw Error("enumeration lost mass");
  std::map<std::string, std::pair<Event, double>> out;
  for (const auto& [s, p] : strings) {
    const Event e = decode(s, ctx->state).events.at(0);
    auto& slot = out[transcript_key(std::span<const Event>(&e, 1))];
    slot.first = e;
    slot.second += p;
  }
  return out;
}

/// One scripted user message against an event-level mock, spoken format.
struct SchedulingScenario {
  std::shared_ptr<TemplateBackend> backend;
  std::vector<Event> seed;
  Micros input_time = 0;
  std::string input_text;
  Micros t_react = 200'000;
  Micros end_time = 0;
  char user = 'A';
  DecodeLimits limits;
};

inline SchedulingScenario scheduling_scenario() {
  MockScript m;
  m.format = Format::spoken;
  m.after['B'] = {{300'000, 'A', "hi", 1.0}, {300'000, 'B', "ok", 1.0}, {600'000, 'B', "hi", 2.0}};
  m.after['A'] = {{200'000, 'B', "ok", 1.0}, {500'000, 'A', "hi", 1.0}, {800'000, 'B', "so", 1.0}};
  SchedulingScenario s;
  s.backend = std::make_shared<TemplateBackend>(m);
  s.seed = {{0, 'B', "hey"}};
  s.input_time = 400'000;
  s.input_text = "yo";
  s.end_time = 1'000'000;
  return s;
}

/// Exact transcript distribution of the scheduling rule, by recursion over
/// (history, floor, input delivered) with the self-loop of a user-speaker
/// candidate due at the floor summed as a geometric series.
inline std::map<std::string, double> scheduling_exact(const SchedulingScenario& s) {
  using Dist = std::map<std::string, double>;
  std::map<std::string, Dist> memo;
  std::function<Dist(const std::vector<Event>&, Micros, bool)> solve = [&](const std::vector<Event>& h, Micros floor,
                                                                          bool delivered) -> Dist {
    const std::string key = transcript_key(h) + "|" + std::to_string(floor) + "|" + (delivered ? "1" : "0");
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    Dist acc;
    double self = 0.0;
    auto add = [&](double p, const Dist& d) {
      for (const auto& [k, v] : d) acc[k] += p * v;
    };
    for (const auto& [k, ep] : next_event_distribution(*s.backend, h, Format::spoken, floor, s.limits)) {
      const auto& [e, p] = ep;
      if (!delivered && s.input_time < e.time && s.input_time <= s.end_time) {
        std::vector<Event> h1 = h;
        h1.push_back({s.input_time, s.user, s.input_text});
        if (e.speaker != s.user && e.time - s.input_time <= s.t_react) {
          if (e.time > s.end_time) {
            acc[transcript_key(h1)] += p;
          } else {
            h1.push_back(e);
            add(p, solve(h1, e.time, true));
          }
        } else {
          add(p, solve(h1, s.input_time, true));
        }
      } else if (e.time > s.end_time) {
        acc[transcript_key(h)] += p;
      } else if (e.speaker == s.user) {
        if (e.time == floor) {
          self += p;
        } else {
          add(p, solve(h, e.time, delivered));
        }
      } else {
        std::vector<Event> h1 = h;
        h1.push_back(e);
        add(p, solve(h1, e.time, delivered));
      }
    }
    if (self >= 1.0 - 1e-12) {
      // Nothing but the user at the floor: the session idles until input.
      acc.clear();
      if (!delivered && s.input_time <= s.end_time) {
        std::vector<Event> h1 = h;
        h1.push_back({s.input_time, s.user, s.input_text});
        acc = solve(h1, s.input_time, true);
      } else {
        acc[transcript_key(h)] = 1.0;
      }
      self = 0.0;
    }
    for (auto& [k, v] : acc) v /= 1.0 - self;
    memo[key] = acc;
    return acc;
  };
  return solve(s.seed, s.seed.back().time, false);
}

inline SessionConfig scheduling_config(const SchedulingScenario& s, std::uint64_t seed) {
  SessionConfig c;
  c.format = Format::spoken;
  c.user_speaker = s.user;
  c.t_react = s.t_react;
  c.seed = seed;
  c.limits = s.limits;
  c.end_time = s.end_time;
  c.keep_trace = false;
  return c;
}

inline std::string scheduling_run(const SchedulingScenario& s, std::uint64_t seed) {
  Session session(scheduling_config(s, seed), s.backend);
  for (const Event& e : s.seed) session.seed(e, Provenance::user);
  VirtualClock clock({Input::message(s.input_time, s.input_text)}, s.seed.back().time);
  const auto r = session.run(clock);
  if (r.status == SessionStatus::failed) throw Error(r.error);
  return transcript_key(session.history().events());
}

/// A user word revised while a reply to its first hypothesis is pending.
/// Replies depend on the word; every reply lands more than t_react after the
/// revision, so the pending candidate is always redrawn.
struct RetconScenario {
  std::shared_ptr<TemplateBackend> backend;
  Event seed{0, 'B', "hey"};
  Micros word_time = 200'000;
  std::string first = "cat";
  std::string corrected = "dog";
  Micros retcon_time = 250'000;
  Micros end_time = 1'600'000;
};

inline RetconScenario retcon_scenario() {
  MockScript m;
  m.format = Format::spoken;
  m.after_text["cat"] = {{500'000, 'B', "meow", 1.0}, {800'000, 'B', "purr", 2.0}};
  m.after_text["dog"] = {{500'000, 'B', "woof", 1.0}, {700'000, 'B', "bark", 2.0}, {600'000, 'A', "sit", 1.0}};
  m.after['B'] = {{400'000, 'B', "ok", 1.0}, {900'000, 'B', "so", 1.0}};
  RetconScenario s;
  s.backend = std::make_shared<TemplateBackend>(m);
  return s;
}

/// Exact transcript distribution of a from-scratch run in which the user
/// said the corrected word in the first place.
inline std::map<std::string, double> retcon_exact(const RetconScenario& r) {
  SchedulingScenario s;
  s.backend = r.backend;
  s.seed = {r.seed};
  s.input_time = r.word_time;
  s.input_text = r.corrected;
  s.end_time = r.end_time;
  return scheduling_exact(s);
}

inline std::string retcon_run(const RetconScenario& r, std::uint64_t seed, bool speculation = false) {
  SessionConfig c;
  c.format = Format::spoken;
  c.seed = seed;
  c.end_time = r.end_time;
  c.speculation = speculation;
  c.keep_trace = false;
  Session session(c, r.backend);
  session.seed(r.seed, Provenance::user);
  VirtualClock clock({Input::message(r.word_time, r.first, "w0"), Input::retcon_tag(r.retcon_time, "w0", r.corrected)},
                     r.seed.time);
  const auto res = session.run(clock);
  if (res.status == SessionStatus::failed) throw Error(res.error);
  return transcript_key(session.history().events());
}

}  // namespace livetalk::testing
