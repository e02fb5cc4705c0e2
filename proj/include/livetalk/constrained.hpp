#pragma once

// Grammar-constrained event sampling and scoring.

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "livetalk/backend.hpp"
#include "livetalk/codec.hpp"

namespace livetalk {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Tokens of a finalized history plus the codec state after it.
struct Context {
  std::vector<TokenId> tokens;
  CodecState state;
  std::size_t first_event = 0;  // history index of the first entry kept in `tokens`
};

using SharedContext = std::shared_ptr<const Context>;

struct DecodeLimits {
  /// Message body tokens after which only sentinel-completing tokens are legal.
  std::size_t max_message_tokens = 64;
};

/// Token-level legality: a token is legal when every byte is a legal codec
/// transition, it does not run past the end-of-message sentinel, and the
/// entry can still complete canonically at or after min_time.
class TokenMasker {
 public:
  explicit TokenMasker(const Tokenizer& tokenizer);

  /// legal[i] != 0 iff token i is legal. `body_tokens` counts message tokens
  /// already generated in the current entry.
  void mask(const CodecState& state, Micros min_time, std::size_t body_tokens, const DecodeLimits& limits,
            std::vector<char>& legal) const;

  /// Applies one token; nullopt when it is illegal.
  std::optional<CodecState> advance(const CodecState& state, TokenId token, Micros min_time,
                                    bool* entry_complete = nullptr) const;

  const Tokenizer& tokenizer() const { return tokenizer_; }

 private:
  void dfs(std::int32_t node, const CodecState& state, Micros min_time, std::vector<char>& legal) const;
  const std::vector<char>& body_mask(const CodecState& state, bool capped) const;

  const Tokenizer& tokenizer_;
  // [format][eom progress or spoken emptiness][capped]
  std::vector<char> body_masks_[2][5][2];
};

/// Thrown when no legal token has probability mass under a complete
/// (non-truncated) distribution.
class StarvedError : public Error {
 public:
  StarvedError(const std::string& what, std::size_t step) : Error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Thrown by scoring when a token is illegal or has zero masked probability.
class IllegalTokenError : public Error {
 public:
  IllegalTokenError(const std::string& what, std::size_t position) : Error(what), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// Renormalizes `dist` over the legal tokens (max-shifted exponentiation).
/// Returns false when the legal set carries no mass; a truncated
/// distribution then falls back to uniform over the legal tokens.
bool masked_probabilities(const TokenDistribution& dist, const std::vector<char>& legal, std::vector<double>& prob);

/// Scratch buffers for constrained_step.
struct StepScratch {
  TokenDistribution raw;
  std::vector<char> legal;
};

/// One step of the masked process: the backend distribution after `prefix`
/// restricted to tokens legal in `state` and renormalized. Returns true when
/// the step starved and fell back to uniform over the legal tokens; throws
/// StarvedError (naming `step`) when that fallback is not allowed.
bool constrained_step(const Backend& backend, const TokenMasker& masker, std::span<const TokenId> prefix,
                      const CodecState& state, Micros min_time, std::size_t body_tokens, const DecodeLimits& limits,
                      std::size_t step, StepScratch& scratch, std::vector<double>& prob);

/// Applies one (already legal) token to a codec state. `body_tokens` counts
/// tokens that start inside the message body. Returns true when the token
/// completes the entry; `time` then holds the entry's time.
bool advance_token(const Tokenizer& tokenizer, CodecState& state, TokenId token, std::size_t& body_tokens,
                   Micros* time = nullptr);

/// A sampled-but-unfinalized event.
struct CandidateEvent {
  Event event;  // time/speaker valid once the timestamp is complete; text may be partial
  std::vector<TokenId> tokens;
  std::vector<double> stepwise;  // masked probability of each token
  Micros min_time_used = 0;
  bool timestamp_complete = false;
  bool complete = false;
  std::size_t starved_steps = 0;  // truncated-distribution fallbacks
  SharedContext context;          // generation context
};

/// Incremental constrained generation of one entry.
class EventGenerator {
 public:
  EventGenerator(const Backend& backend, const TokenMasker& masker, SharedContext context, Micros min_time,
                 DecodeLimits limits = {});

  bool done() const { return complete_; }
  bool timestamp_complete() const { return state_.timestamp_complete() || complete_; }
  const CodecState& state() const { return state_; }
  std::size_t generated() const { return tokens_.size() - start_; }
  std::span<const TokenId> prefix() const { return tokens_; }

  /// Masked distribution at the current position (computed once per position).
  const std::vector<double>& distribution();

  /// Samples and appends one token.
  TokenId sample(Rng& rng);
  /// Appends a specific token; throws IllegalTokenError when it has no mass.
  void append(TokenId token);

  CandidateEvent candidate() const;

 private:
  void push(TokenId token, double prob);

  const Backend& backend_;
  const TokenMasker& masker_;
  SharedContext context_;
  Micros min_time_;
  DecodeLimits limits_;

  std::vector<TokenId> tokens_;
  std::size_t start_;
  CodecState state_;
  std::size_t body_tokens_ = 0;
  bool complete_ = false;
  Event event_;
  std::vector<double> stepwise_;
  std::size_t starved_ = 0;

  bool have_dist_ = false;
  bool dist_starved_ = false;
  StepScratch scratch_;
  std::vector<double> prob_;
};

/// Samples a complete entry from the masked process.
CandidateEvent constrained_sample_event(const Backend& backend, const TokenMasker& masker, SharedContext context,
                                        Micros min_time, Rng& rng, DecodeLimits limits = {});

/// Per-token probabilities of `tokens` under the same masked process.
std::vector<double> event_stepwise_probs(const Backend& backend, const TokenMasker& masker, SharedContext context,
                                         std::span<const TokenId> tokens, Micros min_time, DecodeLimits limits = {});

/// Tokens of each entry of a history, tokenized entry by entry.
std::vector<std::vector<TokenId>> tokenize_entries(const Tokenizer& tokenizer, const EncodedTranscript& encoded);

/// Builds a context from a history. When the tokens exceed `budget - reserve`,
/// whole oldest events are dropped and the survivors re-encoded so the first
/// kept entry carries a full timestamp. Spoken contexts start after the last
/// silence of 10 s or more, which the spoken format cannot represent.
SharedContext build_context(const Tokenizer& tokenizer, std::span<const Event> history, Format format,
                            std::size_t budget = SIZE_MAX, std::size_t reserve = 0);

}  // namespace livetalk
