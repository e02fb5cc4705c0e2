#include "livetalk/speculation.hpp"

#include <algorithm>
#include <limits>

namespace livetalk {

std::string_view to_string(SpeculationResult::Outcome outcome) {
  switch (outcome) {
    case SpeculationResult::Outcome::speculated:
      return "speculated";
    case SpeculationResult::Outcome::skipped_prepend:
      return "skipped_prepend";
    case SpeculationResult::Outcome::skipped_unaligned:
      return "skipped_unaligned";
  }
  return "?";
}

namespace {

constexpr Micros kForever = std::numeric_limits<Micros>::max();

struct Interval {
  Micros lo = 0;
  Micros hi = kForever;  // exclusive
  bool contains(Micros t) const { return t >= lo && t < hi; }
};

// One way the old process can have produced the transported prefix.
struct Path {
  Interval interval;
  std::vector<TokenId> prefix;  // old context, omitted prefix, transported tokens
  CodecState state;
  std::size_t body_tokens = 0;
  std::size_t steps = 0;
  bool complete = false;
  Micros time = 0;
  double weight = 0.0;  // P_O of the path's tokens
  double reach = 0.0;   // P_O(t in interval | path)
};

class OldProcess {
 public:
  OldProcess(const Backend& backend, const TokenMasker& masker, Micros min_time, DecodeLimits limits)
      : backend_(backend), masker_(masker), min_time_(min_time), limits_(limits) {}

  // Masked distribution; empty when the process starves here.
  std::vector<double> dist(std::span<const TokenId> prefix, const CodecState& state, std::size_t body_tokens,
                           std::size_t steps) {
    std::vector<double> prob;
    try {
      constrained_step(backend_, masker_, prefix, state, min_time_, body_tokens, limits_, steps, scratch_, prob);
    } catch (const StarvedError&) {
      prob.clear();
    }
    return prob;
  }

  // P_O(t in I) from a position whose timestamp may still be open.
  double reach(std::vector<TokenId>& prefix, const CodecState& state, std::size_t body_tokens, std::size_t steps,
               const Interval& interval) {
    if (state.timestamp_complete()) return interval.contains(state.time) ? 1.0 : 0.0;
    const auto bounds = completion_bounds(state);
    if (!bounds) return 0.0;
    if (bounds->earliest >= interval.lo && bounds->latest < interval.hi) return 1.0;
    if (bounds->latest < interval.lo || bounds->earliest >= interval.hi) return 0.0;
    const std::vector<double> d = dist(prefix, state, body_tokens, steps);
    double total = 0.0;
    for (std::size_t y = 0; y < d.size(); ++y) {
      if (d[y] <= 0.0) continue;
      CodecState next = state;
      std::size_t body = body_tokens;
      Micros t = 0;
      if (advance_token(masker_.tokenizer(), next, static_cast<TokenId>(y), body, &t)) {
        total += interval.contains(t) ? d[y] : 0.0;
        continue;
      }
      prefix.push_back(static_cast<TokenId>(y));
      total += d[y] * reach(prefix, next, body, steps + 1, interval);
      prefix.pop_back();
    }
    return total;
  }

  // Probability that `path` extended by `y` stays within its interval,
  // written into `out`; false when y has no mass on this path.
  bool extend(const Path& path, const std::vector<double>& d, TokenId y, Path& out) {
    if (d.empty() || d[static_cast<std::size_t>(y)] <= 0.0) return false;
    out.interval = path.interval;
    out.state = path.state;
    out.body_tokens = path.body_tokens;
    out.steps = path.steps + 1;
    out.weight = path.weight * d[static_cast<std::size_t>(y)];
    Micros t = 0;
    out.complete = advance_token(masker_.tokenizer(), out.state, y, out.body_tokens, &t);
    out.prefix = path.prefix;
    out.prefix.push_back(y);
    if (out.complete) {
      out.time = t;
      out.reach = path.interval.contains(t) ? 1.0 : 0.0;
    } else {
      out.reach = reach(out.prefix, out.state, out.body_tokens, out.steps, out.interval);
    }
    return true;
  }

  // Reach of path + y without materializing the extension.
  double extended_reach(Path& path, TokenId y) {
    CodecState next = path.state;
    std::size_t body = path.body_tokens;
    Micros t = 0;
    if (advance_token(masker_.tokenizer(), next, y, body, &t)) return path.interval.contains(t) ? 1.0 : 0.0;
    path.prefix.push_back(y);
    const double r = reach(path.prefix, next, body, path.steps + 1, path.interval);
    path.prefix.pop_back();
    return r;
  }

  // All tokenizations of `text` from `base`, appended to `paths`.
  void tokenizations(const Path& base, std::string_view text, std::vector<Path>& paths) {
    if (text.empty()) {
      paths.push_back(base);
      return;
    }
    const std::vector<double> d = dist(base.prefix, base.state, base.body_tokens, base.steps);
    for (std::size_t y = 0; y < d.size(); ++y) {
      if (d[y] <= 0.0) continue;
      const std::string& piece = masker_.tokenizer().piece(static_cast<TokenId>(y));
      if (piece.empty() || piece.size() > text.size() || text.compare(0, piece.size(), piece) != 0) continue;
      Path next = base;
      next.prefix.push_back(static_cast<TokenId>(y));
      next.weight *= d[y];
      next.steps += 1;
      Micros t = 0;
      if (advance_token(masker_.tokenizer(), next.state, static_cast<TokenId>(y), next.body_tokens, &t)) continue;
      tokenizations(next, text.substr(piece.size()), paths);
    }
  }

 private:
  const Backend& backend_;
  const TokenMasker& masker_;
  Micros min_time_;
  DecodeLimits limits_;
  StepScratch scratch_;
};

struct Transport {
  SpeculationResult::Outcome outcome = SpeculationResult::Outcome::speculated;
  int level = -1;
  std::size_t dropped = 0;
  std::vector<Path> paths;
};

// Old-process paths for every level, and the alignment of the draft.
Transport transport(OldProcess& old, const Tokenizer& tok, const CandidateEvent& draft, const Context& new_ctx,
                    Micros lo) {
  Transport out;
  const Context& old_ctx = *draft.context;
  const Format format = old_ctx.state.format;
  Path root;
  root.prefix = old_ctx.tokens;
  root.state = old_ctx.state;
  root.weight = 1.0;

  if (old_ctx.state.has_prev && (!new_ctx.state.has_prev || new_ctx.state.prev < old_ctx.state.prev)) {
    out.outcome = SpeculationResult::Outcome::skipped_prepend;
    return out;
  }

  auto add_level = [&](std::string_view omitted, Interval interval) {
    if (interval.lo >= interval.hi) return;
    Path base = root;
    base.interval = interval;
    std::vector<Path> found;
    old.tokenizations(base, omitted, found);
    for (Path& p : found) {
      p.reach = old.reach(p.prefix, p.state, p.body_tokens, p.steps, p.interval);
      if (p.weight * p.reach > 0.0) out.paths.push_back(std::move(p));
    }
  };

  std::string draft_omitted;
  if (format == Format::spoken || !new_ctx.state.has_prev) {
    const Micros hi = format == Format::spoken && new_ctx.state.has_prev
                          ? new_ctx.state.prev + 10 * kMicrosPerSecond
                          : kForever;
    add_level("", {lo, hi});
    out.level = 0;
  } else {
    const MessengerTimestamp prev_new = new_ctx.state.prev_ts;
    const int transported =
        old_ctx.state.has_prev ? first_differing_group(old_ctx.state.prev_ts, prev_new) : 0;
    auto window_end = [&](int g) { return g < 0 ? kForever : group_window_end(prev_new, g); };
    for (int level = 0; level < kGroupCount; ++level) {
      const std::string omitted = render_messenger_groups(prev_new, std::min(level, transported), level);
      const Micros hi = window_end(level - 1);
      const Micros from = level + 1 < kGroupCount ? std::max(lo, window_end(level)) : lo;
      add_level(omitted, {from, hi});
    }
    out.level = first_differing_group(prev_new, MessengerTimestamp::from_micros(draft.event.time));
    draft_omitted = render_messenger_groups(prev_new, std::min(out.level, transported), out.level);
  }

  // The draft must split exactly after the omitted prefix.
  std::string covered;
  std::size_t k = 0;
  while (covered.size() < draft_omitted.size() && k < draft.tokens.size()) covered += tok.piece(draft.tokens[k++]);
  if (covered != draft_omitted) {
    out.outcome = SpeculationResult::Outcome::skipped_unaligned;
    out.paths.clear();
    return out;
  }
  out.dropped = k;
  return out;
}

double total_mass(const std::vector<Path>& paths) {
  double n = 0.0;
  for (const Path& p : paths) n += p.weight * p.reach;
  return n;
}

}  // namespace

EventGenerator speculate(const Backend& backend, const TokenMasker& masker, const CandidateEvent& draft,
                         SharedContext new_context, Micros lo, Micros min_time, Rng& rng, SpeculationResult& result,
                         DecodeLimits limits) {
  if (!draft.timestamp_complete) throw Error("speculation needs a draft with a complete timestamp");
  if (draft.event.time < lo) throw Error("draft time precedes the speculation window");
  result = SpeculationResult{};
  const Tokenizer& tok = masker.tokenizer();
  EventGenerator gen(backend, masker, new_context, min_time, limits);
  OldProcess old(backend, masker, draft.min_time_used, limits);

  Transport tr = transport(old, tok, draft, *new_context, lo);
  result.outcome = tr.outcome;
  result.level = tr.level;
  result.dropped = tr.dropped;
  if (tr.outcome != SpeculationResult::Outcome::speculated) return gen;

  std::vector<Path> paths = std::move(tr.paths);
  double norm = total_mass(paths);
  if (norm <= 0.0) throw Error("internal: draft has no mass under its own process");

  for (std::size_t j = tr.dropped; j < draft.tokens.size() && !gen.done(); ++j) {
    const TokenId y = draft.tokens[j];
    const std::vector<double>& pdist = gen.distribution();
    std::vector<std::vector<double>> od(paths.size());
    for (std::size_t i = 0; i < paths.size(); ++i) {
      od[i] = old.dist(paths[i].prefix, paths[i].state, paths[i].body_tokens, paths[i].steps);
    }

    std::vector<Path> next;
    double mass = 0.0;
    for (std::size_t i = 0; i < paths.size(); ++i) {
      Path ext;
      if (!old.extend(paths[i], od[i], y, ext)) continue;
      if (ext.weight * ext.reach <= 0.0) continue;
      mass += ext.weight * ext.reach;
      next.push_back(std::move(ext));
    }
    const double q = mass / norm;
    const double p = pdist[static_cast<std::size_t>(y)];
    if (q <= 0.0) throw Error("internal: draft token has no mass under its own process");
    const bool accept = p >= q || uniform01(rng) < p / q;
    result.steps.push_back({y, p, q, accept});
    ++result.offered;
    if (accept) {
      ++result.accepted;
      gen.append(y);
      paths = std::move(next);
      norm = mass;
      continue;
    }

    // Residual max(0, p - q) over the whole vocabulary.
    std::vector<double> qv(pdist.size(), 0.0);
    for (std::size_t i = 0; i < paths.size(); ++i) {
      if (od[i].empty()) continue;
      for (std::size_t v = 0; v < od[i].size(); ++v) {
        if (od[i][v] <= 0.0) continue;
        qv[v] += paths[i].weight * od[i][v] * old.extended_reach(paths[i], static_cast<TokenId>(v)) / norm;
      }
    }
    std::vector<double> residual(pdist.size());
    double rsum = 0.0;
    for (std::size_t v = 0; v < pdist.size(); ++v) {
      residual[v] = std::max(0.0, pdist[v] - qv[v]);
      rsum += residual[v];
    }
    if (rsum <= 0.0) residual = pdist, rsum = 1.0;  // p == q up to rounding
    const double u = uniform01(rng) * rsum;
    double acc = 0.0;
    TokenId pick = -1;
    for (std::size_t v = 0; v < residual.size(); ++v) {
      if (residual[v] <= 0.0) continue;
      pick = static_cast<TokenId>(v);
      acc += residual[v];
      if (u < acc) break;
    }
    result.residual = pick;
    result.residual_p = pdist[static_cast<std::size_t>(pick)];
    result.residual_q = qv[static_cast<std::size_t>(pick)];
    gen.append(pick);
    break;
  }
  return gen;
}

CandidateEvent speculative_resample(const Backend& backend, const TokenMasker& masker, const CandidateEvent& draft,
                                    SharedContext new_context, Micros lo, Micros min_time, Rng& rng,
                                    SpeculationResult& result, DecodeLimits limits) {
  EventGenerator gen = speculate(backend, masker, draft, std::move(new_context), lo, min_time, rng, result, limits);
  while (!gen.done()) gen.sample(rng);
  return gen.candidate();
}

SavingsReport summarize_savings(std::vector<SavingsRecord> records) {
  SavingsReport r;
  r.records = std::move(records);
  r.interruptions = r.records.size();
  for (const auto& rec : r.records) {
    if (!rec.drafted) continue;
    ++r.drafted;
    r.offered += rec.offered;
    r.accepted += rec.accepted;
  }
  r.mean_accepted = r.drafted ? static_cast<double>(r.accepted) / static_cast<double>(r.drafted) : 0.0;
  r.accepted_fraction = r.offered ? static_cast<double>(r.accepted) / static_cast<double>(r.offered) : 0.0;
  return r;
}

SavingsReport speculation_savings(const Backend& backend, std::span<const Event> events, Format format,
                                  const SavingsOptions& options) {
  const Tokenizer& tok = backend.tokenizer();
  TokenMasker masker(tok);
  Rng rng(options.seed);
  const std::size_t budget = backend.context_budget();
  const std::size_t reserve = std::min<std::size_t>(budget / 4, options.limits.max_message_tokens + 32);
  std::vector<SavingsRecord> records;
  for (std::size_t i = 1; i < events.size() && records.size() < options.max_interruptions; ++i) {
    if (options.cross_speaker_only && events[i].speaker == events[i - 1].speaker) continue;
    SavingsRecord rec;
    rec.index = i;
    const Micros lo = events[i].time + options.t_react + 1;
    const SharedContext old_ctx = build_context(tok, events.first(i), format, budget, reserve);
    const SharedContext new_ctx = build_context(tok, events.first(i + 1), format, budget, reserve);
    std::optional<CandidateEvent> draft;
    for (std::size_t a = 0; a < options.draft_attempts && !draft; ++a) {
      EventGenerator gen(backend, masker, old_ctx, events[i - 1].time, options.limits);
      while (!gen.timestamp_complete()) gen.sample(rng);
      if (gen.candidate().event.time < lo) continue;
      while (!gen.done()) gen.sample(rng);
      draft = gen.candidate();
    }
    if (draft) {
      rec.drafted = true;
      rec.draft_tokens = draft->tokens.size();
      SpeculationResult res;
      speculate(backend, masker, *draft, new_ctx, lo, events[i].time, rng, res, options.limits);
      rec.outcome = res.outcome;
      rec.offered = res.offered;
      rec.accepted = res.accepted;
    }
    records.push_back(rec);
  }
  return summarize_savings(std::move(records));
}

}  // namespace livetalk
