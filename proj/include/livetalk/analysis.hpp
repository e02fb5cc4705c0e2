#pragma once

// Corpus statistics: control-format overhead, generation bandwidth needed to
// keep up in real time, inter-message delay histograms, document likelihood,
// and a synthetic corpus generator.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "livetalk/backend.hpp"
#include "livetalk/event_io.hpp"
#include "livetalk/tokenizer.hpp"

namespace livetalk {

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value (the
/// smallest for p = 0). Zero for an empty set.
double percentile_of(std::vector<double> values, double p);

struct MessageRef {
  std::size_t doc = 0;
  std::size_t index = 0;  // within the document
};

struct OverheadRecord {
  MessageRef at;
  std::size_t plaintext_tokens = 0;
  std::size_t control_tokens = 0;
  double ratio = 0.0;  // control / plaintext; NaN for empty text
};

struct OverheadStats {
  std::vector<OverheadRecord> messages;
  std::size_t plaintext_tokens = 0;
  std::size_t control_tokens = 0;
  double mean_ratio = 0.0;    // over messages with non-empty text
  double median_ratio = 0.0;  // nearest rank
};

/// Tokens of each message's text against tokens of its entry in the
/// canonical encoding of its document (omitted fields included).
OverheadStats overhead_stats(const Corpus& corpus, const Tokenizer& tokenizer, Format format);

struct RateRecord {
  MessageRef at;
  std::size_t tokens = 0;     // control-formatted tokens of the message
  Micros window = 0;          // time since the qualifying predecessor
  double rate = 0.0;          // tokens per second
};

struct RateStats {
  std::vector<RateRecord> rates;
  std::size_t excluded = 0;  // messages without a qualifying predecessor
  std::vector<std::pair<double, double>> percentiles;  // (p, tok/s)
  /// (rate, fraction of included messages generable at that rate), one
  /// point per included message, rates ascending.
  std::vector<std::pair<double, double>> curve;
};

/// Bandwidth each message needs: its formatted tokens over the time since the
/// latest message (any speaker, same document) at or before t - t_react.
/// `speaker` restricts which messages are rated, not their predecessors.
RateStats required_rates(const Corpus& corpus, const Tokenizer& tokenizer, Format format, Micros t_react,
                         std::span<const double> percentiles, std::optional<char> speaker = std::nullopt);

struct DelayHistogram {
  std::vector<double> edges;  // bins + 1, microseconds, strictly increasing
  std::vector<std::size_t> counts;

  std::size_t total() const;
};

/// Gaps between successive messages within each document.
std::vector<Micros> message_delays(const Corpus& corpus);

/// Geometric edges from max(min positive delay, 100 us) to the maximum delay.
std::vector<double> log_bin_edges(std::span<const Micros> delays, std::size_t bins = 25);

/// Delays below the first edge count in the first bin, above the last in the last.
DelayHistogram delay_histogram(std::span<const Micros> delays, std::vector<double> edges);
DelayHistogram delay_histogram(const Corpus& corpus, std::size_t bins = 25);

/// Histograms of two corpora over edges spanning both.
std::pair<DelayHistogram, DelayHistogram> shared_delay_histograms(const Corpus& a, const Corpus& b,
                                                                  std::size_t bins = 25);

/// KL(p || q) in nats after adding `epsilon` to every count of both.
double kl_divergence(const DelayHistogram& p, const DelayHistogram& q, double epsilon = 1.0);

/// Negative log likelihood in nats of a whole token sequence, the first token
/// conditioned on the empty prefix.
double document_nll(const Backend& backend, std::span<const TokenId> tokens);
/// NLL of a document's canonical encoding.
double document_nll(const Backend& backend, std::span<const Event> events, Format format);

struct SyntheticParams {
  Format format = Format::messenger;
  std::size_t messages = 10'000;
  std::string speakers = "AB";
  double sessions_per_day = 4.0;       // Poisson session arrivals
  double mean_session_messages = 25.0;  // geometric, at least one
  Micros mean_gap = 5 * kMicrosPerSecond;  // exponential within a session
  double self_follow = 0.3;             // chance the same speaker sends again
  double mean_words = 4.0;              // geometric, at least one; spoken entries are one word
  std::vector<std::string> vocabulary;  // empty: built-in word list
  Micros start = 1'672'531'200'000'000; // 2023-01-01 00:00 UTC (messenger)
};

struct SyntheticCorpus {
  std::vector<Event> events;
  std::vector<std::size_t> session_starts;  // index of each session's first event
  std::vector<Micros> within_gaps;           // sampled gaps before quantization
};

/// Deterministic in `seed`. Spoken gaps of 10 s or more are redrawn so every
/// session encodes; spoken sessions start at time 0.
SyntheticCorpus generate_synthetic_corpus(std::uint64_t seed, const SyntheticParams& params);

/// Messenger: one continuous document "history". Spoken: one document per
/// session, ids "s<index>".
Corpus to_corpus(const SyntheticCorpus& corpus, Format format);

}  // namespace livetalk
