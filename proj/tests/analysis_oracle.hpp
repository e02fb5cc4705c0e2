#pragma once

// Brute-force recomputations of the corpus statistics: quadratic scans,
// linear bin search and integer percentile ranks.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "livetalk/analysis.hpp"
#include "livetalk/codec.hpp"

namespace livetalk::testing {

/// Token count under greedy longest match, trying every piece at every position.
inline std::size_t brute_token_count(const Tokenizer& tok, const std::string& text) {
  std::size_t pos = 0, n = 0;
  while (pos < text.size()) {
    std::size_t best = 0;
    for (std::size_t i = 0; i < tok.size(); ++i) {
      const std::string& p = tok.piece(static_cast<TokenId>(i));
      if (p.size() > best && text.compare(pos, p.size(), p) == 0) best = p.size();
    }
    if (best == 0) best = 1;
    pos += best;
    ++n;
  }
  return n;
}

/// Entry strings rendered one event at a time from the initial state.
inline std::vector<std::string> brute_entries(const std::vector<Event>& events, Format format) {
  std::vector<std::string> out;
  CodecState s = CodecState::initial(format);
  for (const Event& e : events) out.push_back(encode_entry(e, s));
  return out;
}

/// Nearest rank with the percentile given in thousandths of a percent.
inline double brute_percentile(std::vector<double> values, long p_milli) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const long n = static_cast<long>(values.size());
  long rank = (p_milli * n + 99'999) / 100'000;
  rank = std::clamp(rank, 1L, n);
  return values[static_cast<std::size_t>(rank - 1)];
}

struct BruteRate {
  std::size_t doc, index, tokens;
  Micros window;
  double rate;
};

inline std::vector<BruteRate> brute_rates(const Corpus& corpus, const Tokenizer& tok, Format format, Micros t_react) {
  std::vector<BruteRate> out;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto& ev = corpus[d].events;
    const auto entries = brute_entries(ev, format);
    for (std::size_t i = 0; i < ev.size(); ++i) {
      long pred = -1;
      for (std::size_t j = 0; j < i; ++j) {
        if (ev[j].time <= ev[i].time - t_react) pred = static_cast<long>(j);
      }
      if (pred < 0) continue;
      const Micros w = ev[i].time - ev[static_cast<std::size_t>(pred)].time;
      if (w <= 0) continue;
      const std::size_t k = brute_token_count(tok, entries[i]);
      out.push_back({d, i, k, w, static_cast<double>(k) * 1e6 / static_cast<double>(w)});
    }
  }
  return out;
}

inline std::vector<std::size_t> brute_histogram(const std::vector<Micros>& delays, const std::vector<double>& edges) {
  const std::size_t bins = edges.size() - 1;
  std::vector<std::size_t> counts(bins, 0);
  for (const Micros d : delays) {
    const double x = static_cast<double>(d);
    std::size_t bin = 0;
    if (x >= edges[bins]) {
      bin = bins - 1;
    } else {
      for (std::size_t i = 0; i < bins; ++i) {
        if (edges[i] <= x && x < edges[i + 1]) bin = i;
      }
    }
    ++counts[bin];
  }
  return counts;
}

inline double brute_kl(const std::vector<std::size_t>& p, const std::vector<std::size_t>& q) {
  double np = 0, nq = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    np += static_cast<double>(p[i]) + 1.0;
    nq += static_cast<double>(q[i]) + 1.0;
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = (static_cast<double>(p[i]) + 1.0) / np;
    const double b = (static_cast<double>(q[i]) + 1.0) / nq;
    kl += a * std::log(a / b);
  }
  return kl;
}

}  // namespace livetalk::testing
