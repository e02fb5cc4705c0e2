#include "livetalk/constrained.hpp"

#include <algorithm>
#include <cmath>

namespace livetalk {

namespace {

CodecState synthetic_body(Format format, int eom_progress, bool empty) {
  CodecState s = CodecState::after(format, 0);
  s.phase = ParsePhase::body;
  s.speaker = 'A';
  s.eom_progress = static_cast<std::uint8_t>(eom_progress);
  s.body_chars = empty ? 0 : 1;
  return s;
}

bool walk_body(CodecState s, std::string_view piece) {
  for (std::size_t i = 0; i < piece.size(); ++i) {
    const StepResult r = step(s, static_cast<unsigned char>(piece[i]));
    if (!r.ok()) return false;
    if (r.entry_complete) return i + 1 == piece.size();
  }
  return true;
}

}  // namespace

TokenMasker::TokenMasker(const Tokenizer& tokenizer) : tokenizer_(tokenizer) {
  const std::size_t v = tokenizer_.size();
  for (int p = 0; p < 5; ++p) {
    auto& open = body_masks_[0][p][0];
    auto& capped = body_masks_[0][p][1];
    open.assign(v, 0);
    capped.assign(v, 0);
    const CodecState s = synthetic_body(Format::messenger, p, false);
    const std::string_view rest = kMessengerEom.substr(static_cast<std::size_t>(p));
    for (std::size_t i = 0; i < v; ++i) {
      const std::string& piece = tokenizer_.piece(static_cast<TokenId>(i));
      open[i] = walk_body(s, piece);
      capped[i] = rest.starts_with(piece);
    }
  }
  for (int empty = 0; empty < 2; ++empty) {
    auto& open = body_masks_[1][empty][0];
    auto& capped = body_masks_[1][empty][1];
    open.assign(v, 0);
    capped.assign(v, 0);
    const CodecState s = synthetic_body(Format::spoken, 0, empty == 1);
    for (std::size_t i = 0; i < v; ++i) {
      const std::string& piece = tokenizer_.piece(static_cast<TokenId>(i));
      open[i] = walk_body(s, piece);
      capped[i] = empty ? open[i] : piece == kSpokenEom;
    }
  }
}

const std::vector<char>& TokenMasker::body_mask(const CodecState& state, bool capped) const {
  if (state.format == Format::messenger) return body_masks_[0][state.eom_progress][capped ? 1 : 0];
  return body_masks_[1][state.body_chars == 0 ? 1 : 0][capped ? 1 : 0];
}

void TokenMasker::dfs(std::int32_t node, const CodecState& state, Micros min_time, std::vector<char>& legal) const {
  const auto& trie = tokenizer_.trie();
  for (const auto& [c, child] : trie[static_cast<std::size_t>(node)].children) {
    CodecState next = state;
    const StepResult r = step(next, c);
    if (!r.ok()) continue;
    const TokenId tok = trie[static_cast<std::size_t>(child)].token;
    if (r.entry_complete) {
      if (tok >= 0) legal[static_cast<std::size_t>(tok)] = 1;
      continue;
    }
    if (next.timestamp_complete()) {
      if (!state.timestamp_complete() && (next.time < min_time || !next.canonical)) continue;
    } else if (!can_complete(next, min_time)) {
      continue;
    }
    if (tok >= 0) legal[static_cast<std::size_t>(tok)] = 1;
    if (!trie[static_cast<std::size_t>(child)].children.empty()) dfs(child, next, min_time, legal);
  }
}

void TokenMasker::mask(const CodecState& state, Micros min_time, std::size_t body_tokens, const DecodeLimits& limits,
                       std::vector<char>& legal) const {
  if (state.in_body()) {
    legal = body_mask(state, body_tokens >= limits.max_message_tokens);
    return;
  }
  legal.assign(tokenizer_.size(), 0);
  dfs(0, state, min_time, legal);
}

std::optional<CodecState> TokenMasker::advance(const CodecState& state, TokenId token, Micros min_time,
                                               bool* entry_complete) const {
  CodecState s = state;
  const std::string& piece = tokenizer_.piece(token);
  if (entry_complete) *entry_complete = false;
  for (std::size_t i = 0; i < piece.size(); ++i) {
    const bool was_complete = s.timestamp_complete();
    const StepResult r = step(s, static_cast<unsigned char>(piece[i]));
    if (!r.ok()) return std::nullopt;
    if (r.entry_complete) {
      if (i + 1 != piece.size()) return std::nullopt;
      if (entry_complete) *entry_complete = true;
      return s;
    }
    if (!was_complete && s.timestamp_complete() && (s.time < min_time || !s.canonical)) return std::nullopt;
  }
  if (!s.timestamp_complete() && !can_complete(s, min_time)) return std::nullopt;
  return s;
}

bool masked_probabilities(const TokenDistribution& dist, const std::vector<char>& legal, std::vector<double>& prob) {
  const std::size_t v = legal.size();
  prob.assign(v, 0.0);
  double hi = kNegInf;
  for (std::size_t i = 0; i < v; ++i) {
    if (legal[i]) hi = std::max(hi, dist.logp[i]);
  }
  if (hi == kNegInf) {
    if (!dist.truncated) return false;
    std::size_t n = 0;
    for (std::size_t i = 0; i < v; ++i) n += legal[i] ? 1 : 0;
    if (n == 0) return false;
    for (std::size_t i = 0; i < v; ++i) prob[i] = legal[i] ? 1.0 / static_cast<double>(n) : 0.0;
    return false;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < v; ++i) {
    if (legal[i] && dist.logp[i] != kNegInf) {
      prob[i] = std::exp(dist.logp[i] - hi);
      sum += prob[i];
    }
  }
  for (double& p : prob) p /= sum;
  return true;
}

EventGenerator::EventGenerator(const Backend& backend, const TokenMasker& masker, SharedContext context,
                               Micros min_time, DecodeLimits limits)
    : backend_(backend),
      masker_(masker),
      context_(std::move(context)),
      min_time_(min_time),
      limits_(limits),
      tokens_(context_->tokens),
      start_(tokens_.size()),
      state_(context_->state) {}

bool constrained_step(const Backend& backend, const TokenMasker& masker, std::span<const TokenId> prefix,
                      const CodecState& state, Micros min_time, std::size_t body_tokens, const DecodeLimits& limits,
                      std::size_t step, StepScratch& scratch, std::vector<double>& prob) {
  backend.next_logprobs(prefix, scratch.raw);
  masker.mask(state, min_time, body_tokens, limits, scratch.legal);
  if (masked_probabilities(scratch.raw, scratch.legal, prob)) return false;
  const bool any_legal = std::any_of(scratch.legal.begin(), scratch.legal.end(), [](char c) { return c != 0; });
  if (!scratch.raw.truncated || !any_legal) {
    throw StarvedError("distribution starved: no legal token has probability mass at step " + std::to_string(step),
                       step);
  }
  return true;
}

bool advance_token(const Tokenizer& tokenizer, CodecState& state, TokenId token, std::size_t& body_tokens,
                   Micros* time) {
  if (state.in_body()) ++body_tokens;
  for (char c : tokenizer.piece(token)) {
    const StepResult r = step(state, static_cast<unsigned char>(c));
    if (!r.ok()) throw Error("internal: masked token failed to parse");
    if (r.entry_complete) {
      if (time) *time = state.prev;
      return true;
    }
  }
  if (time && state.timestamp_complete()) *time = state.time;
  return false;
}

const std::vector<double>& EventGenerator::distribution() {
  if (have_dist_) return prob_;
  if (complete_) throw Error("entry already complete");
  dist_starved_ = constrained_step(backend_, masker_, tokens_, state_, min_time_, body_tokens_, limits_, generated(),
                                   scratch_, prob_);
  have_dist_ = true;
  return prob_;
}

TokenId EventGenerator::sample(Rng& rng) {
  const auto& p = distribution();
  const double u = uniform01(rng);
  double acc = 0.0;
  TokenId pick = -1;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    pick = static_cast<TokenId>(i);
    acc += p[i];
    if (u < acc) break;
  }
  push(pick, p[static_cast<std::size_t>(pick)]);
  return pick;
}

void EventGenerator::append(TokenId token) {
  const auto& p = distribution();
  if (token < 0 || static_cast<std::size_t>(token) >= p.size() || p[static_cast<std::size_t>(token)] <= 0.0) {
    throw IllegalTokenError("token " + std::to_string(token) + " ('" + escape_piece(masker_.tokenizer().piece(token)) +
                                "') is illegal or has no mass at position " + std::to_string(generated()),
                            generated());
  }
  push(token, p[static_cast<std::size_t>(token)]);
}

void EventGenerator::push(TokenId token, double prob) {
  if (dist_starved_) ++starved_;
  stepwise_.push_back(prob);
  tokens_.push_back(token);
  for (char c : masker_.tokenizer().piece(token)) {
    const bool had_speaker = state_.in_body();
    if (had_speaker) ++body_tokens_;
    const StepResult r = step(state_, static_cast<unsigned char>(c));
    if (!r.ok()) throw Error("internal: masked token failed to parse");
    if (state_.timestamp_complete() && !had_speaker) event_.time = state_.time;
    if (r.entry_complete) {
      complete_ = true;
      break;
    }
    if (state_.in_body() && !had_speaker) event_.speaker = state_.speaker;
    if (had_speaker) event_.text += c;
  }
  if (complete_ && context_->state.format == Format::messenger) {
    event_.text.resize(event_.text.size() - (kMessengerEom.size() - 1));
  }
  have_dist_ = false;
}

CandidateEvent EventGenerator::candidate() const {
  CandidateEvent c;
  c.event = event_;
  if (!complete_ && state_.in_body() && context_->state.format == Format::messenger) {
    c.event.text.resize(c.event.text.size() - state_.eom_progress);
  }
  c.tokens.assign(tokens_.begin() + static_cast<std::ptrdiff_t>(start_), tokens_.end());
  c.stepwise = stepwise_;
  c.min_time_used = min_time_;
  c.timestamp_complete = timestamp_complete();
  c.complete = complete_;
  c.starved_steps = starved_;
  c.context = context_;
  return c;
}

CandidateEvent constrained_sample_event(const Backend& backend, const TokenMasker& masker, SharedContext context,
                                        Micros min_time, Rng& rng, DecodeLimits limits) {
  EventGenerator gen(backend, masker, std::move(context), min_time, limits);
  while (!gen.done()) gen.sample(rng);
  return gen.candidate();
}

std::vector<double> event_stepwise_probs(const Backend& backend, const TokenMasker& masker, SharedContext context,
                                         std::span<const TokenId> tokens, Micros min_time, DecodeLimits limits) {
  EventGenerator gen(backend, masker, std::move(context), min_time, limits);
  for (TokenId t : tokens) {
    if (gen.done()) throw IllegalTokenError("tokens continue past the end of the entry", gen.generated());
    gen.append(t);
  }
  return gen.candidate().stepwise;
}

std::vector<std::vector<TokenId>> tokenize_entries(const Tokenizer& tokenizer, const EncodedTranscript& encoded) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(encoded.entries.size());
  for (const std::string& e : encoded.entries) out.push_back(tokenizer.encode(e));
  return out;
}

SharedContext build_context(const Tokenizer& tokenizer, std::span<const Event> history, Format format,
                            std::size_t budget, std::size_t reserve) {
  // Spoken codes cannot span 10 s of silence: restart the stream after the last such gap.
  std::size_t floor = 0;
  if (format == Format::spoken) {
    for (std::size_t i = history.size(); i-- > 1;) {
      if (history[i].time - truncate_to_granularity(history[i - 1].time, format) >= 10 * kMicrosPerSecond) {
        floor = i;
        break;
      }
    }
  }
  auto start_state = [&](std::size_t k) {
    if (format == Format::messenger) return CodecState::initial(format);
    if (k == floor) {
      if (k == 0) return CodecState::initial(format);
      const Micros t = history[k].time;
      return CodecState::after(format, t - t % (10 * kMicrosPerSecond));
    }
    return CodecState::after(format, history[k - 1].time);
  };

  auto ctx = std::make_shared<Context>();
  const auto kept_all = history.subspan(floor);
  const EncodedTranscript full = encode(kept_all, start_state(floor));
  const auto entries = tokenize_entries(tokenizer, full);
  const std::size_t limit = budget > reserve ? budget - reserve : 0;
  std::size_t total = 0;
  for (const auto& e : entries) total += e.size();
  std::size_t first = floor;
  if (total > limit) {
    first = history.size();
    std::size_t after = total;  // tokens of entries k+1.. relative to floor
    for (std::size_t k = floor; k < history.size(); ++k) {
      after -= entries[k - floor].size();
      if (k == floor) continue;
      CodecState s = start_state(k);
      if (tokenizer.encode(encode_entry(history[k], s)).size() + after <= limit) {
        first = k;
        break;
      }
    }
  }
  ctx->first_event = first;
  if (first == floor) {
    for (const auto& e : entries) ctx->tokens.insert(ctx->tokens.end(), e.begin(), e.end());
    ctx->state = full.state;
    return ctx;
  }
  CodecState s = start_state(first);
  for (std::size_t i = first; i < history.size(); ++i) {
    tokenizer.encode_append(encode_entry(history[i], s), ctx->tokens);
  }
  if (first == history.size()) s = full.state;
  ctx->state = s;
  return ctx;
}

}  // namespace livetalk
