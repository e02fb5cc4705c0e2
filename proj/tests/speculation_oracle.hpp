#pragma once

// Repeated speculative resampling on a scenario, with the tallies needed to
// compare it against enumeration and against the min(1, p/q) acceptance law.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "livetalk/speculation.hpp"
#include "scenarios.hpp"

namespace livetalk::testing {

struct SpecRun {
  std::map<std::string, double> empirical;
  std::map<std::string, long> outcomes;
  std::map<std::pair<double, double>, std::pair<long, long>> cells;  // (p, q) -> (n, accepted)
  long residuals = 0;
  long bad_residuals = 0;
  long q_checked = 0;
  double q_error = 0.0;
  std::set<int> levels;
};

/// A draft from the old context, conditioned on a timestamp inside the window.
inline CandidateEvent conditioned_draft(const SpeculationScenario& s, const TokenMasker& m,
                                        const SharedContext& old_ctx, Rng& rng) {
  for (;;) {
    EventGenerator gen(*s.backend, m, old_ctx, s.old_min, s.limits);
    while (!gen.timestamp_complete()) gen.sample(rng);
    if (gen.candidate().event.time < s.lo()) continue;
    while (!gen.done()) gen.sample(rng);
    return gen.candidate();
  }
}

inline SpecRun run_speculation(const SpeculationScenario& s, int n, std::uint64_t seed, int q_checks) {
  SpecRun r;
  TokenMasker m(*s.tok);
  const auto old_ctx = build_context(*s.tok, s.before, s.format);
  const auto new_ctx = build_context(*s.tok, s.after, s.format);
  const auto drafts = transported_drafts(s);
  Rng rng(seed);
  std::map<std::string, long> counts;
  for (int i = 0; i < n; ++i) {
    const CandidateEvent draft = conditioned_draft(s, m, old_ctx, rng);
    SpeculationResult res;
    const CandidateEvent out =
        speculative_resample(*s.backend, m, draft, new_ctx, s.lo(), s.interruption, rng, res, s.limits);
    ++counts[s.tok->decode(out.tokens)];
    ++r.outcomes[std::string(to_string(res.outcome))];
    if (res.outcome == SpeculationResult::Outcome::speculated) r.levels.insert(res.level);
    for (const auto& st : res.steps) {
      auto& c = r.cells[{st.p, st.q}];
      ++c.first;
      c.second += st.accepted ? 1 : 0;
    }
    if (res.residual) {
      ++r.residuals;
      if (!(res.residual_p > res.residual_q)) ++r.bad_residuals;
    }
    if (i < q_checks) {
      std::vector<TokenId> prefix;
      for (const auto& st : res.steps) {
        r.q_error = std::max(r.q_error, std::fabs(st.q - transported_conditional(drafts, prefix, st.token)));
        ++r.q_checked;
        prefix.push_back(st.token);
      }
    }
  }
  r.empirical = normalize_counts(counts);
  return r;
}

/// Exact next-entry distribution after the interruption; `lost` is the mass
/// the enumeration could not resolve and must be zero.
inline std::map<std::string, double> exact_after(const SpeculationScenario& s, double& lost) {
  const auto new_ctx = build_context(*s.tok, s.after, s.format);
  EntryOracle oracle(new_ctx->state, s.interruption, s.horizon, s.limits.max_message_tokens);
  lost = 0.0;
  return enumerate_masked(*s.backend, new_ctx->tokens, oracle, 16, 0.0, &lost);
}

struct CellCheck {
  long tested = 0;        // cells with a < 1 and at least 50 samples
  long out_of_band = 0;   // of those, rate farther than 3 SE from min(1, p/q)
  long certain_misses = 0;  // cells with a = 1 that ever rejected
  double worst_z = 0.0;
};

inline CellCheck acceptance_cells(const SpecRun& r) {
  CellCheck out;
  for (const auto& [pq, c] : r.cells) {
    const auto [p, q] = pq;
    const double a = std::min(1.0, p / q);
    if (a >= 1.0) {
      if (c.second != c.first) ++out.certain_misses;
      continue;
    }
    if (c.first < 50) continue;
    const double rate = static_cast<double>(c.second) / static_cast<double>(c.first);
    const double se = std::sqrt(a * (1.0 - a) / static_cast<double>(c.first));
    const double z = std::fabs(rate - a) / se;
    out.worst_z = std::max(out.worst_z, z);
    if (std::fabs(rate - a) > 3.0 * se + 1e-12) ++out.out_of_band;
    ++out.tested;
  }
  return out;
}

}  // namespace livetalk::testing
