#pragma once

// Brute-force reference for the masked next-entry process. Legality is
// decided on whole strings against the encoder's canonical timestamp
// renderings, independently of the streaming automaton and token masker.

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "livetalk/backend.hpp"
#include "livetalk/codec.hpp"
#include "livetalk/constrained.hpp"

namespace livetalk::testing {

class EntryOracle {
 public:
  /// Canonical timestamps of every representable time in [min_time, horizon].
  EntryOracle(const CodecState& state, Micros min_time, Micros horizon, std::size_t cap = 64)
      : format_(state.format), cap_(cap) {
    const Micros g = granularity(format_);
    Micros t = min_time % g == 0 ? min_time : min_time - min_time % g + g;
    for (; t <= horizon; t += g) {
      CodecState s = state;
      std::string r;
      try {
        r = encode_entry({t, 'A', format_ == Format::messenger ? "" : "x"}, s);
      } catch (const EncodeError&) {
        continue;
      }
      const std::size_t tail = format_ == Format::messenger ? 1 + kMessengerEom.size() : 3;
      stamps_.push_back(r.substr(0, r.size() - tail));
    }
  }

  /// Verdict for the entry text `z`; `body_tokens` counts the tokens that
  /// started after the speaker letter before the last one.
  enum class Verdict { illegal, open, complete };

  Verdict judge(const std::string& z) const {
    for (const std::string& s : stamps_) {
      if (z.size() <= s.size()) {
        if (s.compare(0, z.size(), z) == 0) return Verdict::open;
        continue;
      }
      if (z.compare(0, s.size(), s) != 0) continue;
      const char speaker = z[s.size()];
      if (!valid_speaker(speaker, format_)) return Verdict::illegal;
      return judge_body(z.substr(s.size() + 1));
    }
    return Verdict::illegal;
  }

  /// Offset of the first body byte, or npos while the speaker is pending.
  std::size_t body_start(const std::string& z) const {
    for (const std::string& s : stamps_) {
      if (z.size() > s.size() && z.compare(0, s.size(), s) == 0) return s.size() + 1;
    }
    return std::string::npos;
  }

  /// Token legality given the entry text before it and the body token count.
  bool legal(const std::string& before, const std::string& piece, std::size_t body_tokens) const {
    const std::string z = before + piece;
    if (judge(z) == Verdict::illegal) return false;
    const std::size_t b = body_start(before);
    if (b != std::string::npos && before.size() >= b && body_tokens >= cap_) {
      const std::string rest = remaining_sentinel(before.substr(b));
      return rest.compare(0, piece.size(), piece) == 0 && piece.size() <= rest.size();
    }
    return true;
  }

 private:
  Verdict judge_body(const std::string& body) const {
    if (format_ == Format::spoken) {
      for (std::size_t i = 0; i < body.size(); ++i) {
        const unsigned char c = static_cast<unsigned char>(body[i]);
        if (c == '\n') return i > 0 && i + 1 == body.size() ? Verdict::complete : Verdict::illegal;
        if (std::isspace(c)) return Verdict::illegal;
      }
      return Verdict::open;
    }
    const std::size_t hit = body.find(kMessengerEom);
    if (hit == std::string::npos) return Verdict::open;
    return hit + kMessengerEom.size() == body.size() ? Verdict::complete : Verdict::illegal;
  }

  std::string remaining_sentinel(const std::string& body) const {
    if (format_ == Format::spoken) return body.empty() ? std::string() : std::string("\n");
    // Longest suffix of the body that is a proper prefix of the sentinel.
    for (std::size_t k = std::min(body.size(), kMessengerEom.size() - 1); k > 0; --k) {
      if (body.compare(body.size() - k, k, kMessengerEom.substr(0, k)) == 0) {
        return std::string(kMessengerEom.substr(k));
      }
    }
    return std::string(kMessengerEom);
  }

  Format format_;
  std::size_t cap_;
  std::vector<std::string> stamps_;
};

/// Exact distribution over entry strings of the masked process, by depth-first
/// enumeration. Paths below `floor` probability, longer than `max_tokens` or
/// reaching a position with no legal mass are dropped and their mass
/// reported in `lost`.
inline std::map<std::string, double> enumerate_masked(const Backend& backend, const std::vector<TokenId>& context,
                                                      const EntryOracle& oracle, std::size_t max_tokens,
                                                      double floor, double* lost = nullptr) {
  const Tokenizer& tok = backend.tokenizer();
  std::map<std::string, double> out;
  double dropped = 0.0;
  std::vector<TokenId> prefix = context;
  std::function<void(const std::string&, double, std::size_t, std::size_t)> walk =
      [&](const std::string& z, double mass, std::size_t depth, std::size_t body_tokens) {
        if (depth >= max_tokens || mass < floor) {
          dropped += mass;
          return;
        }
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
        if (kept.empty()) {
          // Starved: the engine would fall back to uniform, which is not enumerated.
          dropped += mass;
          return;
        }
        double sum = 0.0;
        for (auto& [i, lp] : kept) sum += std::exp(lp - hi);
        for (auto& [i, lp] : kept) {
          const double p = std::exp(lp - hi) / sum;
          const std::string next = z + tok.piece(i);
          if (oracle.judge(next) == EntryOracle::Verdict::complete) {
            out[next] += mass * p;
            continue;
          }
          prefix.push_back(i);
          walk(next, mass * p, depth + 1, body_tokens + (in_body ? 1 : 0));
          prefix.pop_back();
        }
      };
  walk("", 1.0, 0, 0);
  if (lost) *lost = dropped;
  return out;
}

/// Text of a sampled entry.
inline std::string entry_text(const Tokenizer& tok, const CandidateEvent& c) { return tok.decode(c.tokens); }

}  // namespace livetalk::testing
