#include "livetalk/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "livetalk/codec.hpp"
#include "livetalk/constrained.hpp"

namespace livetalk {

namespace {

constexpr Micros kMinDelayEdge = 100;

const std::vector<std::string>& default_vocabulary() {
  static const std::vector<std::string> words = {
      "ok",    "yeah",  "no",    "lol",   "sure",  "maybe", "what",  "why",   "when",  "now",
      "later", "today", "nice",  "cool",  "thanks", "hey",  "hi",    "see",   "you",   "there",
      "the",   "a",     "that",  "this",  "is",    "it",    "was",   "will",  "do",    "did",
      "code",  "build", "test",  "run",   "fix",   "bug",   "train", "model", "data",  "done",
  };
  return words;
}

void check_sorted(const Corpus& corpus) {
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto& ev = corpus[d].events;
    for (std::size_t i = 1; i < ev.size(); ++i) {
      if (ev[i].time < ev[i - 1].time) {
        throw Error("document " + std::to_string(d) + " is not sorted by time at message " + std::to_string(i));
      }
    }
  }
}

double exponential(Rng& rng, double mean) { return -std::log1p(-uniform01(rng)) * mean; }

// Number of trials until the first success with the given mean, at least one.
std::size_t geometric(Rng& rng, double mean) {
  if (mean <= 1.0) return 1;
  const double u = uniform01(rng);
  const double k = std::floor(std::log1p(-u) / std::log1p(-1.0 / mean));
  return k >= 1e15 ? static_cast<std::size_t>(1e15) : 1 + static_cast<std::size_t>(k);
}

}  // namespace

double percentile_of(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  // The tolerance keeps ranks like 99.9% of 10^4 from rounding up past 9990.
  const double exact = p / 100.0 * static_cast<double>(values.size());
  const double rank = std::ceil(exact - 1e-9 * std::max(1.0, exact));
  const std::size_t k = rank < 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
  return values[std::min(k, values.size() - 1)];
}

OverheadStats overhead_stats(const Corpus& corpus, const Tokenizer& tokenizer, Format format) {
  OverheadStats out;
  std::vector<double> ratios;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto& events = corpus[d].events;
    const auto entries = tokenize_entries(tokenizer, encode(events, format));
    for (std::size_t i = 0; i < events.size(); ++i) {
      OverheadRecord r;
      r.at = {d, i};
      r.plaintext_tokens = tokenizer.encode(events[i].text).size();
      r.control_tokens = entries[i].size();
      r.ratio = r.plaintext_tokens == 0 ? std::numeric_limits<double>::quiet_NaN()
                                        : static_cast<double>(r.control_tokens) / static_cast<double>(r.plaintext_tokens);
      out.plaintext_tokens += r.plaintext_tokens;
      out.control_tokens += r.control_tokens;
      if (r.plaintext_tokens > 0) ratios.push_back(r.ratio);
      out.messages.push_back(r);
    }
  }
  if (out.messages.empty()) throw Error("overhead statistics need a non-empty corpus");
  if (!ratios.empty()) {
    out.mean_ratio = std::accumulate(ratios.begin(), ratios.end(), 0.0) / static_cast<double>(ratios.size());
    out.median_ratio = percentile_of(ratios, 50);
  }
  return out;
}

RateStats required_rates(const Corpus& corpus, const Tokenizer& tokenizer, Format format, Micros t_react,
                         std::span<const double> percentiles, std::optional<char> speaker) {
  check_sorted(corpus);
  RateStats out;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto& events = corpus[d].events;
    if (events.empty()) continue;
    const auto entries = tokenize_entries(tokenizer, encode(events, format));
    std::vector<Micros> times(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) times[i] = events[i].time;
    for (std::size_t i = 0; i < events.size(); ++i) {
      if (speaker && events[i].speaker != *speaker) continue;
      const Micros cutoff = events[i].time - t_react;
      const auto it = std::upper_bound(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(i), cutoff);
      const Micros window = it == times.begin() ? 0 : events[i].time - *(it - 1);
      if (window <= 0) {
        ++out.excluded;
        continue;
      }
      RateRecord r;
      r.at = {d, i};
      r.tokens = entries[i].size();
      r.window = window;
      r.rate = static_cast<double>(r.tokens) * static_cast<double>(kMicrosPerSecond) / static_cast<double>(window);
      out.rates.push_back(r);
    }
  }
  std::vector<double> values;
  values.reserve(out.rates.size());
  for (const auto& r : out.rates) values.push_back(r.rate);
  for (const double p : percentiles) out.percentiles.emplace_back(p, percentile_of(values, p));
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    // Equal rates share the fraction of their last occurrence.
    if (k + 1 < values.size() && values[k + 1] == values[k]) continue;
    out.curve.emplace_back(values[k], static_cast<double>(k + 1) / n);
  }
  return out;
}

std::size_t DelayHistogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

std::vector<Micros> message_delays(const Corpus& corpus) {
  std::vector<Micros> out;
  for (const Document& d : corpus) {
    for (std::size_t i = 1; i < d.events.size(); ++i) out.push_back(d.events[i].time - d.events[i - 1].time);
  }
  return out;
}

std::vector<double> log_bin_edges(std::span<const Micros> delays, std::size_t bins) {
  if (bins == 0) throw Error("histogram needs at least one bin");
  Micros lo = 0, hi = 0;
  for (const Micros d : delays) {
    if (d <= 0) continue;
    lo = lo == 0 ? d : std::min(lo, d);
    hi = std::max(hi, d);
  }
  if (hi == 0) throw Error("delay histogram needs a positive delay");
  const double a = static_cast<double>(std::max(lo, kMinDelayEdge));
  double b = static_cast<double>(hi);
  if (b <= a) b = a * 10.0;
  std::vector<double> edges(bins + 1);
  const double ratio = b / a;
  for (std::size_t i = 0; i <= bins; ++i) {
    edges[i] = a * std::pow(ratio, static_cast<double>(i) / static_cast<double>(bins));
  }
  edges.front() = a;
  edges.back() = b;
  return edges;
}

DelayHistogram delay_histogram(std::span<const Micros> delays, std::vector<double> edges) {
  if (edges.size() < 2) throw Error("histogram needs at least two edges");
  DelayHistogram h;
  h.counts.assign(edges.size() - 1, 0);
  for (const Micros d : delays) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), static_cast<double>(d));
    std::size_t bin = it == edges.begin() ? 0 : static_cast<std::size_t>(it - edges.begin()) - 1;
    bin = std::min(bin, h.counts.size() - 1);
    ++h.counts[bin];
  }
  h.edges = std::move(edges);
  return h;
}

DelayHistogram delay_histogram(const Corpus& corpus, std::size_t bins) {
  const auto delays = message_delays(corpus);
  return delay_histogram(delays, log_bin_edges(delays, bins));
}

std::pair<DelayHistogram, DelayHistogram> shared_delay_histograms(const Corpus& a, const Corpus& b, std::size_t bins) {
  const auto da = message_delays(a);
  const auto db = message_delays(b);
  if (da.empty() || db.empty()) throw Error("both corpora need at least two messages");
  std::vector<Micros> both = da;
  both.insert(both.end(), db.begin(), db.end());
  const auto edges = log_bin_edges(both, bins);
  return {delay_histogram(da, edges), delay_histogram(db, edges)};
}

double kl_divergence(const DelayHistogram& p, const DelayHistogram& q, double epsilon) {
  if (p.edges != q.edges) throw Error("KL divergence needs histograms with shared edges");
  const double k = static_cast<double>(p.counts.size());
  const double np = static_cast<double>(p.total()) + epsilon * k;
  const double nq = static_cast<double>(q.total()) + epsilon * k;
  double kl = 0.0;
  for (std::size_t i = 0; i < p.counts.size(); ++i) {
    const double pi = (static_cast<double>(p.counts[i]) + epsilon) / np;
    const double qi = (static_cast<double>(q.counts[i]) + epsilon) / nq;
    if (pi > 0.0) kl += pi * std::log(pi / qi);
  }
  return std::max(kl, 0.0);
}

double document_nll(const Backend& backend, std::span<const TokenId> tokens) {
  TokenDistribution d;
  double nll = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    backend.next_logprobs(tokens.first(i), d);
    nll -= d.logp.at(static_cast<std::size_t>(tokens[i]));
  }
  return nll;
}

double document_nll(const Backend& backend, std::span<const Event> events, Format format) {
  const auto text = encode(events, format).text;
  const auto tokens = backend.tokenizer().encode(text);
  return document_nll(backend, tokens);
}

SyntheticCorpus generate_synthetic_corpus(std::uint64_t seed, const SyntheticParams& params) {
  if (params.speakers.empty()) throw Error("synthetic corpus needs at least one speaker");
  for (const char s : params.speakers) {
    if (!valid_speaker(s, params.format)) throw Error(std::string("speaker '") + s + "' is not valid for the format");
  }
  if (!(params.sessions_per_day > 0.0) || !(params.mean_session_messages >= 1.0) || params.mean_gap <= 0 ||
      !(params.self_follow >= 0.0 && params.self_follow <= 1.0) || !(params.mean_words >= 1.0)) {
    throw Error("synthetic corpus parameters are out of range");
  }
  const auto& vocab = params.vocabulary.empty() ? default_vocabulary() : params.vocabulary;
  for (const auto& w : vocab) {
    if (w.empty() || w.find_first_of(" \t\r\n") != std::string::npos || w.find("<eom>") != std::string::npos) {
      throw Error("vocabulary word '" + w + "' cannot be encoded");
    }
  }
  if (params.format == Format::spoken && params.mean_gap >= 10 * kMicrosPerSecond) {
    throw Error("spoken sessions need a mean gap below 10 s");
  }

  Rng rng(seed);
  SyntheticCorpus out;
  const Micros g = granularity(params.format);
  const double session_mean = 86'400.0 * static_cast<double>(kMicrosPerSecond) / params.sessions_per_day;
  Micros now = params.format == Format::messenger ? params.start : 0;
  auto pick_word = [&] { return vocab[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(vocab.size()))]; };
  auto pick_other = [&](char current) {
    if (params.speakers.size() == 1) return current;
    char s;
    do {
      s = params.speakers[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(params.speakers.size()))];
    } while (s == current);
    return s;
  };

  while (out.events.size() < params.messages) {
    if (!out.events.empty()) {
      if (params.format == Format::messenger) {
        now += static_cast<Micros>(std::llround(exponential(rng, session_mean)));
      } else {
        now = 0;
      }
    }
    out.session_starts.push_back(out.events.size());
    const std::size_t length = geometric(rng, params.mean_session_messages);
    char speaker = params.speakers[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(params.speakers.size()))];
    for (std::size_t k = 0; k < length && out.events.size() < params.messages; ++k) {
      if (k > 0) {
        Micros gap;
        do {
          gap = static_cast<Micros>(std::llround(exponential(rng, static_cast<double>(params.mean_gap))));
        } while (params.format == Format::spoken && (now + gap) / g - now / g >= 10 * kMicrosPerSecond / g);
        out.within_gaps.push_back(gap);
        now += gap;
        if (uniform01(rng) >= params.self_follow) speaker = pick_other(speaker);
      }
      std::string text;
      const std::size_t words = params.format == Format::spoken ? 1 : geometric(rng, params.mean_words);
      for (std::size_t w = 0; w < words; ++w) {
        if (w) text += ' ';
        text += pick_word();
      }
      out.events.push_back({now - now % g, speaker, std::move(text)});
    }
  }
  return out;
}

Corpus to_corpus(const SyntheticCorpus& corpus, Format format) {
  if (format == Format::messenger) return {{"history", corpus.events}};
  Corpus out;
  for (std::size_t s = 0; s < corpus.session_starts.size(); ++s) {
    const std::size_t begin = corpus.session_starts[s];
    const std::size_t end = s + 1 < corpus.session_starts.size() ? corpus.session_starts[s + 1] : corpus.events.size();
    out.push_back({"s" + std::to_string(s),
                   std::vector<Event>(corpus.events.begin() + static_cast<std::ptrdiff_t>(begin),
                                      corpus.events.begin() + static_cast<std::ptrdiff_t>(end))});
  }
  return out;
}

}  // namespace livetalk
