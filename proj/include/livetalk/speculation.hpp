#pragma once

// Reuse of an interrupted candidate as a draft for the post-interruption
// distribution (speculative decoding across a context change).
//
// The draft was sampled from the masked process on the old context O and is
// usable once its time t satisfies t >= lo. Its timestamp is re-rendered
// relative to the new context's previous entry: a messenger draft keeps the
// suffix after the groups the new rendering omits, a spoken draft is reused
// verbatim. Token y of the transported draft x' is accepted with probability
// min(1, p(y | x') / q(y | x')), where p is the masked process on the new
// context and q is the exact distribution of transported drafts:
//
//   N(x') = sum over levels L, tokenizations tau of the omitted prefix G_L:
//           P_O(tau x') * P_O(t in I_L | tau x')
//   q(y | x') = N(x' y) / N(x')
//
// with I_L the times >= lo whose new rendering starts at level L. On
// rejection a replacement is drawn from max(0, p - q), renormalized, and
// generation continues on the new context.

#include <optional>
#include <vector>

#include "livetalk/constrained.hpp"

namespace livetalk {

struct SpeculationStep {
  TokenId token = 0;
  double p = 0.0;
  double q = 0.0;
  bool accepted = false;
};

struct SpeculationResult {
  enum class Outcome : std::uint8_t {
    speculated,
    skipped_prepend,    // the new context ends before the old one
    skipped_unaligned,  // a draft token straddles the omitted prefix
  };
  Outcome outcome = Outcome::speculated;
  int level = -1;            // new rendering level of the draft timestamp (messenger)
  std::size_t dropped = 0;   // draft tokens covering the omitted prefix
  std::size_t offered = 0;   // draft tokens tested
  std::size_t accepted = 0;
  std::vector<SpeculationStep> steps;
  std::optional<TokenId> residual;  // replacement after the first rejection
  double residual_p = 0.0;
  double residual_q = 0.0;
};

std::string_view to_string(SpeculationResult::Outcome outcome);

/// Positions a generator on `new_context` after testing the draft. The
/// draft's timestamp must be complete and at or after `lo`; `min_time` is the
/// floor of the new process.
EventGenerator speculate(const Backend& backend, const TokenMasker& masker, const CandidateEvent& draft,
                         SharedContext new_context, Micros lo, Micros min_time, Rng& rng, SpeculationResult& result,
                         DecodeLimits limits = {});

/// speculate() followed by sampling the rest of the entry.
CandidateEvent speculative_resample(const Backend& backend, const TokenMasker& masker, const CandidateEvent& draft,
                                    SharedContext new_context, Micros lo, Micros min_time, Rng& rng,
                                    SpeculationResult& result, DecodeLimits limits = {});

/// Replays historical interruptions: before each qualifying event i, a draft
/// is sampled from the history up to i-1 and conditioned on t >= t_i +
/// t_react, then tested against the history up to i.
struct SavingsOptions {
  Micros t_react = 200'000;
  bool cross_speaker_only = true;
  std::size_t draft_attempts = 64;  // rejection-sampling attempts for the conditioning
  std::uint64_t seed = 0;
  DecodeLimits limits;
  std::size_t max_interruptions = SIZE_MAX;
};

struct SavingsRecord {
  std::size_t index = 0;  // event index of the interruption
  bool drafted = false;   // a draft with t >= lo was found
  SpeculationResult::Outcome outcome = SpeculationResult::Outcome::speculated;
  std::size_t draft_tokens = 0;
  std::size_t offered = 0;
  std::size_t accepted = 0;
};

struct SavingsReport {
  std::vector<SavingsRecord> records;
  std::size_t interruptions = 0;
  std::size_t drafted = 0;
  std::size_t offered = 0;
  std::size_t accepted = 0;
  double mean_accepted = 0.0;      // accepted tokens per drafted interruption
  double accepted_fraction = 0.0;  // accepted / offered
};

SavingsReport speculation_savings(const Backend& backend, std::span<const Event> events, Format format,
                                  const SavingsOptions& options);
/// Aggregates records the way speculation_savings does.
SavingsReport summarize_savings(std::vector<SavingsRecord> records);

}  // namespace livetalk
