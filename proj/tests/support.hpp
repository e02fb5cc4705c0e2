#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "livetalk/codec.hpp"

namespace livetalk::testing {

inline Micros utc(int y, int mo, int d, int h, int mi, int s, int ds = 0) {
  MessengerTimestamp ts;
  ts.year = y;
  ts.month = mo;
  ts.day = d;
  ts.hour = h;
  ts.minute = mi;
  ts.second = s;
  ts.decisecond = ds;
  return ts.to_micros();
}

inline std::string random_message(std::mt19937_64& rng) {
  static constexpr std::string_view kPieces[] = {"hi", " ", "ok", "<", "<e", "<eo", "<eom", "\n",
                                                 "9", ".", ";", "+", ":", "é", "A", "x"};
  std::uniform_int_distribution<int> len(0, 6);
  std::uniform_int_distribution<std::size_t> pick(0, std::size(kPieces) - 1);
  std::string out;
  for (int n = len(rng); n > 0; --n) out += kPieces[pick(rng)];
  while (out.find(kMessengerEom) != std::string::npos) out.erase(out.find(kMessengerEom), 1);
  return out;
}

inline std::string random_word(std::mt19937_64& rng) {
  static constexpr std::string_view kWords[] = {"knock", "who's", "there", "a", "0", "is",
                                                "reading", "x1", "<eom>", "you're"};
  std::uniform_int_distribution<std::size_t> pick(0, std::size(kWords) - 1);
  return std::string(kWords[pick(rng)]);
}

/// Heavy-tailed gap: zero, sub-second, seconds, minutes, hours, days, months, years.
inline Micros random_messenger_gap(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> scale(0, 8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  static constexpr double kScales[] = {0.0, 0.3, 3.0, 50.0, 4000.0, 90000.0, 3e6, 4e7, 3e8};
  const double seconds = kScales[scale(rng)] * u(rng);
  return static_cast<Micros>(seconds * 1e6);
}

inline std::vector<Event> random_events(std::mt19937_64& rng, Format format, int max_len = 8) {
  std::uniform_int_distribution<int> len(1, max_len);
  std::uniform_int_distribution<int> two(0, 1);
  std::uniform_int_distribution<int> letter(0, 25);
  std::vector<Event> out;
  const int n = len(rng);
  Micros t;
  if (format == Format::messenger) {
    t = std::uniform_int_distribution<Micros>(0, utc(2200, 1, 1, 0, 0, 0))(rng);
  } else {
    t = std::uniform_int_distribution<Micros>(0, 10 * kMicrosPerSecond - 1)(rng);
  }
  for (int i = 0; i < n; ++i) {
    Event e;
    if (format == Format::messenger) {
      if (i > 0) t += random_messenger_gap(rng);
      e.speaker = two(rng) ? 'A' : 'B';
      e.text = random_message(rng);
    } else {
      if (i > 0) {
        const Micros prev = truncate_to_granularity(t, Format::spoken);
        t = prev + std::uniform_int_distribution<Micros>(0, 10 * kMicrosPerSecond - kMicrosPerCentisecond)(rng);
        if (t - prev >= 10 * kMicrosPerSecond) t = prev;
      }
      e.speaker = static_cast<char>('A' + letter(rng));
      e.text = random_word(rng);
    }
    e.time = t;
    out.push_back(e);
  }
  return out;
}

inline std::vector<Event> truncated(std::vector<Event> events, Format format) {
  for (Event& e : events) e.time = truncate_to_granularity(e.time, format);
  return events;
}

/// Total variation distance between two empirical/analytic distributions.
template <typename K>
double total_variation(const std::map<K, double>& a, const std::map<K, double>& b) {
  double tv = 0.0;
  for (const auto& [k, p] : a) {
    auto it = b.find(k);
    tv += std::fabs(p - (it == b.end() ? 0.0 : it->second));
  }
  for (const auto& [k, q] : b) {
    if (!a.count(k)) tv += q;
  }
  return tv / 2.0;
}

template <typename K>
std::map<K, double> normalize_counts(const std::map<K, long>& counts) {
  long total = 0;
  for (const auto& [k, c] : counts) total += c;
  std::map<K, double> out;
  for (const auto& [k, c] : counts) out[k] = static_cast<double>(c) / static_cast<double>(total);
  return out;
}

}  // namespace livetalk::testing
