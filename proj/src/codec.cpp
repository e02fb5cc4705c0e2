#include "livetalk/codec.hpp"

#include <algorithm>
#include <cstdio>

namespace livetalk {

std::string_view to_string(Format format) {
  return format == Format::messenger ? "messenger" : "spoken";
}

Format parse_format(std::string_view name) {
  if (name == "messenger") return Format::messenger;
  if (name == "spoken") return Format::spoken;
  throw Error("unknown format '" + std::string(name) + "' (expected messenger or spoken)");
}

std::string_view to_string(Provenance provenance) {
  return provenance == Provenance::user ? "user" : "model";
}

Provenance parse_provenance(std::string_view name) {
  if (name == "user") return Provenance::user;
  if (name == "model") return Provenance::model;
  throw Error("unknown provenance '" + std::string(name) + "'");
}

std::string_view to_string(StepError error) {
  switch (error) {
    case StepError::none: return "ok";
    case StepError::unexpected_char: return "unexpected character";
    case StepError::bad_field_value: return "malformed field value";
    case StepError::unknown_month: return "unknown month name";
    case StepError::bad_weekday: return "invalid weekday";
    case StepError::time_regression: return "timestamp regression";
    case StepError::empty_word: return "empty word";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Civil calendar (algorithms after H. Hinnant, "chrono-compatible low-level date algorithms")

namespace {

constexpr Micros kMicrosPerDay = 86'400 * kMicrosPerSecond;
constexpr int kMinYear = 1970;
constexpr int kMaxYear = 9999;

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

struct Civil {
  int year;
  int month;
  int day;
};

Civil civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
}

bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

bool is_spoken_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f' || c == '\n';
}

int pow10(int n) {
  int r = 1;
  while (n-- > 0) r *= 10;
  return r;
}

/// True when some `width`-digit value starting with the `consumed` digits of
/// `value` lies in [lo, hi].
bool digit_prefix_fits(int value, int consumed, int width, int lo, int hi) {
  const int scale = pow10(width - consumed);
  const int first = value * scale;
  const int last = first + scale - 1;
  return last >= lo && first <= hi;
}

bool month_prefix(std::string_view prefix, std::uint16_t* mask_out = nullptr) {
  std::uint16_t mask = 0;
  for (int m = 0; m < 12; ++m) {
    if (kMonthNames[m].starts_with(prefix)) mask |= static_cast<std::uint16_t>(1u << m);
  }
  if (mask_out) *mask_out = mask;
  return mask != 0;
}

int exact_month(std::string_view name) {
  for (int m = 0; m < 12; ++m) {
    if (kMonthNames[m] == name) return m + 1;
  }
  return 0;
}

bool weekday_prefix(std::string_view prefix) {
  return std::any_of(kWeekdayNames.begin(), kWeekdayNames.end(),
                     [&](std::string_view n) { return n.starts_with(prefix); });
}

int exact_weekday(std::string_view name) {
  for (int w = 0; w < 7; ++w) {
    if (kWeekdayNames[w] == name) return w;
  }
  return -1;
}

std::string_view name_of(const CodecState& s) {
  return {s.name.data(), static_cast<std::size_t>(s.consumed)};
}

void fill_from_prev(CodecState& s, int level) {
  const MessengerTimestamp& p = s.prev_ts;
  if (level > 0) {
    s.fields.year = p.year;
    s.fields.month = p.month;
  }
  if (level > 1) {
    s.fields.day = p.day;
    s.fields.wday = p.wday;
  }
  if (level > 2) s.fields.hour = p.hour;
  if (level > 3) s.fields.minute = p.minute;
  if (level > 4) s.fields.second = p.second;
}

int prev_days_in_month(const CodecState& s) { return days_in_month(s.prev_ts.year, s.prev_ts.month); }

bool lead_fits(const CodecState& s, int value, int consumed, const GrammarOptions& o) {
  if (digit_prefix_fits(value, consumed, 4, kMinYear, kMaxYear)) return true;
  if (digit_prefix_fits(value, consumed, 2, 1, prev_days_in_month(s))) return true;
  return o.lenient && digit_prefix_fits(value, consumed, 2, 0, 59);
}

bool is_weekday_initial(unsigned char c) {
  return c == 'M' || c == 'T' || c == 'W' || c == 'F' || c == 'S';
}

void finish_timestamp(CodecState& s, StepResult& r) {
  if (s.format == Format::messenger) {
    s.time = s.fields.to_micros();
    if (s.has_prev && s.time < s.prev) {
      r.error = StepError::time_regression;
      return;
    }
    s.canonical = !s.has_prev || s.level == 5 || s.bare_minute ||
                  group_value(s.fields, s.level) != group_value(s.prev_ts, s.level);
    if (s.bare_minute) s.canonical = false;
  } else {
    s.time = spoken_advance(s.prev, s.value);
    s.canonical = true;
  }
  s.phase = ParsePhase::speaker;
  s.consumed = 0;
}

void complete_entry(CodecState& s) {
  const Micros t = s.time;
  const Format f = s.format;
  s = CodecState::after(f, t);
}

/// Weekday field accepted; validates it against the civil date.
StepError accept_weekday(CodecState& s, int wday, const GrammarOptions& o) {
  const int actual = weekday_from_days(days_from_civil(s.fields.year, s.fields.month, s.fields.day));
  if (wday != actual) {
    if (!o.lenient) return StepError::bad_weekday;
    s.weekday_mismatch = true;
  }
  s.fields.wday = actual;
  s.phase = ParsePhase::hour;
  s.consumed = 0;
  s.value = 0;
  return StepError::none;
}

StepError step_weekday_char(CodecState& s, unsigned char c, const GrammarOptions& o) {
  if (s.consumed >= 2) return StepError::bad_weekday;
  s.name[s.consumed++] = static_cast<char>(c);
  const std::string_view prefix = name_of(s);
  if (!weekday_prefix(prefix)) return StepError::bad_weekday;
  const int w = exact_weekday(prefix);
  if (w >= 0) return accept_weekday(s, w, o);
  return StepError::none;
}

/// Digit field preceded by a separator: consumed 0 expects `sep`.
StepError step_separated_field(CodecState& s, unsigned char c, char sep, int width, int lo, int hi,
                               int& out, ParsePhase next) {
  if (s.consumed == 0) {
    if (c != sep) return StepError::unexpected_char;
    s.consumed = 1;
    s.value = 0;
    return StepError::none;
  }
  if (!is_digit(c)) return StepError::unexpected_char;
  const int v = s.value * 10 + (c - '0');
  const int digits = s.consumed;  // digits consumed after this one
  if (!digit_prefix_fits(v, digits, width, lo, hi)) return StepError::bad_field_value;
  s.value = v;
  s.consumed++;
  if (digits == width) {
    out = v;
    s.phase = next;
    s.consumed = 0;
    s.value = 0;
  }
  return StepError::none;
}

}  // namespace

std::int64_t days_from_civil(int year, int month, int day) {
  const std::int64_t y = static_cast<std::int64_t>(year) - (month <= 2);
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * static_cast<unsigned>(month + (month > 2 ? -3 : 9)) + 2) / 5 +
                       static_cast<unsigned>(day) - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

int days_in_month(int year, int month) {
  static constexpr int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (month == 2) {
    const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    return leap ? 29 : 28;
  }
  return kDays[month - 1];
}

int weekday_from_days(std::int64_t days) {
  // 1970-01-01 was a Thursday.
  return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

MessengerTimestamp MessengerTimestamp::from_micros(Micros time) {
  const std::int64_t days = floor_div(time, kMicrosPerDay);
  const Micros rem = time - days * kMicrosPerDay;
  const Civil c = civil_from_days(days);
  MessengerTimestamp ts;
  ts.year = c.year;
  ts.month = c.month;
  ts.day = c.day;
  ts.wday = weekday_from_days(days);
  ts.hour = static_cast<int>(rem / (3600 * kMicrosPerSecond));
  ts.minute = static_cast<int>(rem / (60 * kMicrosPerSecond) % 60);
  ts.second = static_cast<int>(rem / kMicrosPerSecond % 60);
  ts.decisecond = static_cast<int>(rem % kMicrosPerSecond / kMicrosPerDecisecond);
  return ts;
}

Micros MessengerTimestamp::to_micros() const {
  const std::int64_t days = days_from_civil(year, month, day);
  return days * kMicrosPerDay + hour * 3600 * kMicrosPerSecond + minute * 60 * kMicrosPerSecond +
         second * kMicrosPerSecond + decisecond * kMicrosPerDecisecond;
}

int group_value(const MessengerTimestamp& ts, int group) {
  switch (group) {
    case 0: return ts.year * 16 + ts.month;
    case 1: return ts.day;
    case 2: return ts.hour;
    case 3: return ts.minute;
    case 4: return ts.second;
    default: return ts.decisecond;
  }
}

int first_differing_group(const MessengerTimestamp& prev, const MessengerTimestamp& next) {
  for (int g = 0; g < 5; ++g) {
    if (group_value(prev, g) != group_value(next, g)) return g;
  }
  return 5;
}

std::string render_messenger_groups(const MessengerTimestamp& ts, int first, int last) {
  std::string out;
  char buf[16];
  for (int g = first; g < last; ++g) {
    switch (g) {
      case 0:
        std::snprintf(buf, sizeof buf, "%04d", ts.year);
        out += buf;
        out += kMonthNames[ts.month - 1];
        break;
      case 1:
        std::snprintf(buf, sizeof buf, "%02d", ts.day);
        out += buf;
        out += kWeekdayNames[ts.wday];
        break;
      case 2: std::snprintf(buf, sizeof buf, "+%02d", ts.hour); out += buf; break;
      case 3: std::snprintf(buf, sizeof buf, ":%02d", ts.minute); out += buf; break;
      case 4: std::snprintf(buf, sizeof buf, ";%02d", ts.second); out += buf; break;
      case 5: std::snprintf(buf, sizeof buf, ".%d", ts.decisecond); out += buf; break;
      default: break;
    }
  }
  return out;
}

Micros group_window_start(const MessengerTimestamp& ts, int group) {
  MessengerTimestamp w = ts;
  if (group < 1) w.day = 1;
  if (group < 2) w.hour = 0;
  if (group < 3) w.minute = 0;
  if (group < 4) w.second = 0;
  if (group < 5) w.decisecond = 0;
  return w.to_micros();
}

Micros group_window_end(const MessengerTimestamp& ts, int group) {
  const Micros start = group_window_start(ts, group);
  switch (group) {
    case 0: return start + days_in_month(ts.year, ts.month) * kMicrosPerDay;
    case 1: return start + kMicrosPerDay;
    case 2: return start + 3600 * kMicrosPerSecond;
    case 3: return start + 60 * kMicrosPerSecond;
    case 4: return start + kMicrosPerSecond;
    default: return start + kMicrosPerDecisecond;
  }
}

SpokenTimestamp SpokenTimestamp::from_micros(Micros time) {
  return {static_cast<int>(time / kMicrosPerCentisecond % 1000)};
}

std::string SpokenTimestamp::render() const {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%03d", code);
  return buf;
}

Micros spoken_advance(Micros prev, int code) {
  const int prev_code = SpokenTimestamp::from_micros(prev).code;
  const int delta = ((code - prev_code) % 1000 + 1000) % 1000;
  return truncate_to_granularity(prev, Format::spoken) + delta * kMicrosPerCentisecond;
}

// ---------------------------------------------------------------------------
// Grammar automaton

CodecState CodecState::initial(Format format) {
  CodecState s;
  s.format = format;
  return s;
}

CodecState CodecState::after(Format format, Micros prev) {
  CodecState s;
  s.format = format;
  s.has_prev = true;
  s.prev = prev;
  if (format == Format::messenger) s.prev_ts = MessengerTimestamp::from_micros(prev);
  return s;
}

StepResult step(CodecState& s, unsigned char c, const GrammarOptions& o) {
  StepResult r;
  auto fail = [&](StepError e) {
    r.error = e;
    return r;
  };

  switch (s.phase) {
    case ParsePhase::entry_start:
      if (s.format == Format::spoken) {
        if (!is_digit(c)) return fail(StepError::unexpected_char);
        s.phase = ParsePhase::spoken_code;
        s.value = c - '0';
        s.consumed = 1;
        return r;
      }
      s.bare_minute = false;
      s.weekday_mismatch = false;
      if (is_digit(c)) {
        const int v = c - '0';
        if (!s.has_prev) {
          if (!digit_prefix_fits(v, 1, 4, kMinYear, kMaxYear)) return fail(StepError::bad_field_value);
          s.phase = ParsePhase::year;
          s.level = 0;
        } else {
          if (!lead_fits(s, v, 1, o)) return fail(StepError::bad_field_value);
          s.phase = ParsePhase::lead;
        }
        s.value = v;
        s.consumed = 1;
        return r;
      }
      if (!s.has_prev) return fail(StepError::unexpected_char);
      switch (c) {
        case '+': s.level = 2; s.phase = ParsePhase::hour; break;
        case ':': s.level = 3; s.phase = ParsePhase::minute; break;
        case ';': s.level = 4; s.phase = ParsePhase::second; break;
        case '.': s.level = 5; s.phase = ParsePhase::decisecond; break;
        default: return fail(StepError::unexpected_char);
      }
      fill_from_prev(s, s.level);
      s.consumed = 1;
      s.value = 0;
      return r;

    case ParsePhase::lead: {
      if (s.consumed == 1) {
        if (!is_digit(c)) return fail(StepError::unexpected_char);
        const int v = s.value * 10 + (c - '0');
        if (!lead_fits(s, v, 2, o)) return fail(StepError::bad_field_value);
        s.value = v;
        s.consumed = 2;
        return r;
      }
      if (is_digit(c)) {
        const int v = s.value * 10 + (c - '0');
        if (!digit_prefix_fits(v, 3, 4, kMinYear, kMaxYear)) return fail(StepError::bad_field_value);
        s.level = 0;
        s.phase = ParsePhase::year;
        s.value = v;
        s.consumed = 3;
        return r;
      }
      if (is_weekday_initial(c)) {
        if (s.value < 1 || s.value > prev_days_in_month(s)) return fail(StepError::bad_field_value);
        s.level = 1;
        fill_from_prev(s, 1);
        s.fields.day = s.value;
        s.phase = ParsePhase::wday;
        s.consumed = 0;
        s.value = 0;
        r.error = step_weekday_char(s, c, o);
        return r;
      }
      if (c == ';' && o.lenient) {
        if (s.value > 59) return fail(StepError::bad_field_value);
        s.level = 3;
        s.bare_minute = true;
        fill_from_prev(s, 3);
        s.fields.minute = s.value;
        s.phase = ParsePhase::second;
        s.consumed = 1;
        s.value = 0;
        return r;
      }
      return fail(StepError::unexpected_char);
    }

    case ParsePhase::year: {
      if (!is_digit(c)) return fail(StepError::unexpected_char);
      const int v = s.value * 10 + (c - '0');
      if (!digit_prefix_fits(v, s.consumed + 1, 4, kMinYear, kMaxYear)) {
        return fail(StepError::bad_field_value);
      }
      s.value = v;
      if (++s.consumed == 4) {
        s.fields.year = v;
        s.phase = ParsePhase::month;
        s.consumed = 0;
        s.value = 0;
      }
      return r;
    }

    case ParsePhase::month: {
      if (s.consumed >= 9) return fail(StepError::unknown_month);
      s.name[s.consumed++] = static_cast<char>(c);
      const std::string_view prefix = name_of(s);
      if (!month_prefix(prefix)) return fail(StepError::unknown_month);
      if (const int m = exact_month(prefix)) {
        s.fields.month = m;
        s.phase = ParsePhase::day;
        s.consumed = 0;
        s.value = 0;
      }
      return r;
    }

    case ParsePhase::day: {
      if (!is_digit(c)) return fail(StepError::unexpected_char);
      const int v = s.value * 10 + (c - '0');
      if (!digit_prefix_fits(v, s.consumed + 1, 2, 1, days_in_month(s.fields.year, s.fields.month))) {
        return fail(StepError::bad_field_value);
      }
      s.value = v;
      if (++s.consumed == 2) {
        s.fields.day = v;
        s.phase = ParsePhase::wday;
        s.consumed = 0;
        s.value = 0;
      }
      return r;
    }

    case ParsePhase::wday:
      r.error = step_weekday_char(s, c, o);
      return r;

    case ParsePhase::hour:
      r.error = step_separated_field(s, c, '+', 2, 0, 23, s.fields.hour, ParsePhase::minute);
      return r;
    case ParsePhase::minute:
      r.error = step_separated_field(s, c, ':', 2, 0, 59, s.fields.minute, ParsePhase::second);
      return r;
    case ParsePhase::second:
      r.error = step_separated_field(s, c, ';', 2, 0, 59, s.fields.second, ParsePhase::decisecond);
      return r;
    case ParsePhase::decisecond:
      r.error = step_separated_field(s, c, '.', 1, 0, 9, s.fields.decisecond, ParsePhase::speaker);
      if (r.ok() && s.phase == ParsePhase::speaker) finish_timestamp(s, r);
      return r;

    case ParsePhase::spoken_code: {
      if (!is_digit(c)) return fail(StepError::unexpected_char);
      s.value = s.value * 10 + (c - '0');
      if (++s.consumed == 3) finish_timestamp(s, r);
      return r;
    }

    case ParsePhase::speaker:
      if (!valid_speaker(static_cast<char>(c), s.format)) return fail(StepError::unexpected_char);
      s.speaker = static_cast<char>(c);
      s.phase = ParsePhase::body;
      s.eom_progress = 0;
      s.body_chars = 0;
      return r;

    case ParsePhase::body:
      if (s.format == Format::spoken) {
        if (c == '\n') {
          if (s.body_chars == 0) return fail(StepError::empty_word);
          complete_entry(s);
          r.entry_complete = true;
          return r;
        }
        if (is_spoken_space(c)) return fail(StepError::unexpected_char);
        ++s.body_chars;
        return r;
      }
      if (static_cast<char>(c) == kMessengerEom[s.eom_progress]) {
        if (++s.eom_progress == kMessengerEom.size()) {
          complete_entry(s);
          r.entry_complete = true;
          return r;
        }
      } else {
        s.eom_progress = (c == '<') ? 1 : 0;
      }
      ++s.body_chars;
      return r;
  }
  return fail(StepError::unexpected_char);
}

// ---------------------------------------------------------------------------
// Completion bounds

namespace {

/// Candidate values for each timestamp field of one parse interpretation.
struct FieldRanges {
  int level = 0;
  int lo[7] = {kMinYear, 1, 1, 0, 0, 0, 0};
  int hi[7] = {kMaxYear, 12, 31, 23, 59, 59, 9};
  std::uint16_t months = 0x0FFF;
  std::string_view wday_prefix;  // partial weekday name (date fixed when set)
  bool check_wday = true;
};

enum Field { kYear = 0, kMonth, kDay, kHour, kMinute, kSecond, kDs };

void fix(FieldRanges& f, int field, int v) {
  f.lo[field] = f.hi[field] = v;
  if (field == kMonth) f.months = static_cast<std::uint16_t>(1u << (v - 1));
}

void fix_prefix(FieldRanges& f, int field, const MessengerTimestamp& ts, int level) {
  // Groups below `level` come from ts.
  if (level > 0) {
    fix(f, kYear, ts.year);
    fix(f, kMonth, ts.month);
  }
  if (level > 1) fix(f, kDay, ts.day);
  if (level > 2) fix(f, kHour, ts.hour);
  if (level > 3) fix(f, kMinute, ts.minute);
  if (level > 4) fix(f, kSecond, ts.second);
  (void)field;
}

void partial_digits(FieldRanges& f, int field, int value, int consumed, int width) {
  const int scale = pow10(width - consumed);
  f.lo[field] = std::max(f.lo[field], value * scale);
  f.hi[field] = std::min(f.hi[field], value * scale + scale - 1);
}

std::optional<MessengerTimestamp> extreme_completion(const FieldRanges& f, bool latest) {
  MessengerTimestamp ts;
  if (f.lo[kYear] > f.hi[kYear] || f.months == 0) return std::nullopt;
  ts.year = latest ? f.hi[kYear] : f.lo[kYear];
  ts.month = 0;
  for (int m = 0; m < 12; ++m) {
    if (f.months & (1u << m)) {
      if (!latest) {
        ts.month = m + 1;
        break;
      }
      ts.month = m + 1;
    }
  }
  const int dim = days_in_month(ts.year, ts.month);
  const int day_hi = std::min(f.hi[kDay], dim);
  if (f.lo[kDay] > day_hi) return std::nullopt;
  ts.day = latest ? day_hi : f.lo[kDay];
  for (int k = kHour; k <= kDs; ++k) {
    if (f.lo[k] > f.hi[k]) return std::nullopt;
  }
  ts.hour = latest ? f.hi[kHour] : f.lo[kHour];
  ts.minute = latest ? f.hi[kMinute] : f.lo[kMinute];
  ts.second = latest ? f.hi[kSecond] : f.lo[kSecond];
  ts.decisecond = latest ? f.hi[kDs] : f.lo[kDs];
  ts.wday = weekday_from_days(days_from_civil(ts.year, ts.month, ts.day));
  if (f.check_wday && !f.wday_prefix.empty()) {
    if (!kWeekdayNames[ts.wday].starts_with(f.wday_prefix)) return std::nullopt;
  }
  return ts;
}

/// Enumerates the parse interpretations of a messenger state whose timestamp
/// is incomplete.
template <typename Fn>
void for_each_interpretation(const CodecState& s, bool lenient, Fn&& fn) {
  auto base = [&](int level) {
    FieldRanges f;
    f.level = level;
    if (s.has_prev) fix_prefix(f, 0, s.prev_ts, level);
    return f;
  };
  auto fix_parsed = [&](FieldRanges& f, int upto) {
    // Fields parsed in this entry up to (excluding) `upto`.
    const MessengerTimestamp& p = s.fields;
    const int lvl = f.level;
    if (lvl <= 0 && upto > kYear) fix(f, kYear, p.year);
    if (lvl <= 0 && upto > kMonth) fix(f, kMonth, p.month);
    if (lvl <= 1 && upto > kDay) fix(f, kDay, p.day);
    if (lvl <= 2 && upto > kHour) fix(f, kHour, p.hour);
    if (lvl <= 3 && upto > kMinute) fix(f, kMinute, p.minute);
    if (lvl <= 4 && upto > kSecond) fix(f, kSecond, p.second);
  };

  switch (s.phase) {
    case ParsePhase::entry_start: {
      if (!s.has_prev) {
        fn(base(0));
        return;
      }
      for (int level = 0; level < kGroupCount; ++level) fn(base(level));
      return;
    }
    case ParsePhase::lead: {
      FieldRanges y = base(0);
      partial_digits(y, kYear, s.value, s.consumed, 4);
      fn(y);
      FieldRanges d = base(1);
      partial_digits(d, kDay, s.value, s.consumed, 2);
      fn(d);
      if (lenient) {
        FieldRanges m = base(3);
        partial_digits(m, kMinute, s.value, s.consumed, 2);
        fn(m);
      }
      return;
    }
    case ParsePhase::year: {
      FieldRanges f = base(s.level);
      partial_digits(f, kYear, s.value, s.consumed, 4);
      fn(f);
      return;
    }
    case ParsePhase::month: {
      FieldRanges f = base(s.level);
      fix_parsed(f, kMonth);
      month_prefix(name_of(s), &f.months);
      fn(f);
      return;
    }
    case ParsePhase::day: {
      FieldRanges f = base(s.level);
      fix_parsed(f, kDay);
      if (s.consumed > 0) partial_digits(f, kDay, s.value, s.consumed, 2);
      fn(f);
      return;
    }
    case ParsePhase::wday: {
      FieldRanges f = base(s.level);
      fix_parsed(f, kHour);
      if (s.consumed > 0) f.wday_prefix = name_of(s);
      f.check_wday = !lenient;
      fn(f);
      return;
    }
    case ParsePhase::hour:
    case ParsePhase::minute:
    case ParsePhase::second:
    case ParsePhase::decisecond: {
      static constexpr int kFieldOf[] = {kHour, kMinute, kSecond, kDs};
      static constexpr int kWidth[] = {2, 2, 2, 1};
      const int idx = static_cast<int>(s.phase) - static_cast<int>(ParsePhase::hour);
      const int field = kFieldOf[idx];
      FieldRanges f = base(s.level);
      fix_parsed(f, field);
      if (s.consumed > 1) partial_digits(f, field, s.value, s.consumed - 1, kWidth[idx]);
      fn(f);
      return;
    }
    default:
      return;
  }
}

struct SpokenCodeRange {
  int first;
  int last;
};

SpokenCodeRange spoken_codes(const CodecState& s) {
  if (s.phase == ParsePhase::entry_start) return {0, 999};
  const int scale = pow10(3 - s.consumed);
  return {s.value * scale, s.value * scale + scale - 1};
}

/// Delta range (in centiseconds) of codes [first, last] after prev_code.
std::pair<int, int> spoken_delta_range(SpokenCodeRange r, int prev_code) {
  if (prev_code < r.first) return {r.first - prev_code, r.last - prev_code};
  if (prev_code > r.last) return {r.first - prev_code + 1000, r.last - prev_code + 1000};
  const int hi = (r.first < prev_code) ? 999 : r.last - prev_code;
  return {0, hi};
}

}  // namespace

std::optional<CompletionBounds> completion_bounds(const CodecState& s) {
  if (s.timestamp_complete()) return CompletionBounds{s.time, s.time};
  if (s.format == Format::spoken) {
    const int prev_code = SpokenTimestamp::from_micros(s.prev).code;
    const auto [lo, hi] = spoken_delta_range(spoken_codes(s), prev_code);
    const Micros base = truncate_to_granularity(s.prev, Format::spoken);
    return CompletionBounds{base + lo * kMicrosPerCentisecond, base + hi * kMicrosPerCentisecond};
  }
  std::optional<CompletionBounds> out;
  for_each_interpretation(s, /*lenient=*/true, [&](const FieldRanges& f) {
    const auto hi = extreme_completion(f, true);
    if (!hi) return;
    Micros latest = hi->to_micros();
    if (s.has_prev && latest < s.prev) return;
    const auto lo = extreme_completion(f, false);
    Micros earliest = lo ? lo->to_micros() : latest;
    if (s.has_prev) earliest = std::max(earliest, s.prev);
    if (!out) {
      out = CompletionBounds{earliest, latest};
    } else {
      out->earliest = std::min(out->earliest, earliest);
      out->latest = std::max(out->latest, latest);
    }
  });
  return out;
}

bool can_complete(const CodecState& s, Micros min_time, const GrammarOptions& o) {
  if (s.timestamp_complete()) return s.time >= min_time && (!o.canonical || s.canonical);
  if (s.format == Format::spoken) {
    const auto b = completion_bounds(s);
    return b && b->latest >= min_time;
  }
  if (o.canonical && s.bare_minute) return false;
  bool ok = false;
  for_each_interpretation(s, o.lenient && !o.canonical, [&](const FieldRanges& f) {
    if (ok) return;
    const auto hi = extreme_completion(f, true);
    if (!hi) return;
    const Micros latest = hi->to_micros();
    if (latest < min_time) return;
    if (s.has_prev && latest < s.prev) return;
    if (o.canonical && s.has_prev && f.level < 5 &&
        group_value(*hi, f.level) <= group_value(s.prev_ts, f.level)) {
      return;
    }
    ok = true;
  });
  return ok;
}

LegalSet legal_continuations(const CodecState& s, Micros min_time, const GrammarOptions& o) {
  LegalSet out;
  if (s.in_body()) out.free_text = true;
  for (int c = 0; c < 256; ++c) {
    CodecState next = s;
    const StepResult r = step(next, static_cast<unsigned char>(c), o);
    if (!r.ok()) continue;
    if (r.entry_complete || next.in_body() || can_complete(next, min_time, o)) out.chars.set(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoding / decoding

std::string encode_entry(const Event& event, CodecState& state) {
  if (!state.at_entry_start()) throw EncodeError("encoder state is not at an entry boundary");
  const Format f = state.format;
  if (!valid_speaker(event.speaker, f)) {
    throw EncodeError(std::string("invalid speaker '") + event.speaker + "' for " +
                      std::string(to_string(f)) + " format");
  }
  if (event.time < 0) throw EncodeError("negative event time");
  const Micros t = truncate_to_granularity(event.time, f);
  std::string out;
  if (f == Format::messenger) {
    if (event.text.find(kMessengerEom) != std::string::npos) {
      throw EncodeError("message text contains the reserved <eom> sentinel");
    }
    if (state.has_prev && t < state.prev) throw EncodeError("event times are not non-decreasing");
    const MessengerTimestamp ts = MessengerTimestamp::from_micros(t);
    if (ts.year > kMaxYear) throw EncodeError("event time beyond year 9999");
    const int level = state.has_prev ? first_differing_group(state.prev_ts, ts) : 0;
    out = render_messenger_groups(ts, level);
    out += event.speaker;
    out += event.text;
    out += kMessengerEom;
  } else {
    if (event.text.empty()) throw EncodeError("spoken word is empty");
    if (std::any_of(event.text.begin(), event.text.end(),
                    [](char c) { return is_spoken_space(static_cast<unsigned char>(c)); })) {
      throw EncodeError("spoken word contains whitespace: '" + event.text + "'");
    }
    const Micros prev = truncate_to_granularity(state.prev, f);
    if (t < prev) throw EncodeError("event times are not non-decreasing");
    if (t - prev >= 10 * kMicrosPerSecond) {
      throw EncodeError("gap of 10 s or more between spoken words cannot be represented");
    }
    out = SpokenTimestamp::from_micros(t).render();
    out += event.speaker;
    out += event.text;
    out += kSpokenEom;
  }
  state = CodecState::after(f, t);
  return out;
}

EncodedTranscript encode(std::span<const Event> events, Format format) {
  return encode(events, CodecState::initial(format));
}

EncodedTranscript encode(std::span<const Event> events, const CodecState& initial) {
  EncodedTranscript out;
  out.state = initial;
  out.entries.reserve(events.size());
  for (const Event& e : events) {
    out.entries.push_back(encode_entry(e, out.state));
    out.text += out.entries.back();
  }
  return out;
}

TranscriptDecoder::TranscriptDecoder(const CodecState& initial, GrammarOptions options)
    : state_(initial), options_(options) {}

std::optional<Event> TranscriptDecoder::feed(char c) {
  const bool was_body = state_.in_body();
  const char speaker = state_.speaker;
  const Micros time = state_.time;
  const StepResult r = step(state_, static_cast<unsigned char>(c), options_);
  const std::size_t at = offset_++;
  if (!r.ok()) {
    std::string msg = "decode error at offset " + std::to_string(at) + ": " +
                      std::string(to_string(r.error)) + " (";
    if (c >= 0x20 && c < 0x7f) {
      msg += "'";
      msg += c;
      msg += "'";
    } else {
      msg += "byte " + std::to_string(static_cast<unsigned char>(c));
    }
    msg += ")";
    throw DecodeError(msg, at);
  }
  if (state_.weekday_mismatch) {
    ++weekday_warnings_;
    state_.weekday_mismatch = false;
  }
  if (r.entry_complete) {
    Event e;
    e.time = time;
    e.speaker = speaker;
    if (state_.format == Format::messenger) {
      text_.resize(text_.size() - (kMessengerEom.size() - 1));
    }
    e.text = std::move(text_);
    text_.clear();
    return e;
  }
  if (was_body) text_ += c;
  return std::nullopt;
}

void TranscriptDecoder::feed(std::string_view text, std::vector<Event>& out) {
  for (char c : text) {
    if (auto e = feed(c)) out.push_back(std::move(*e));
  }
}

std::string TranscriptDecoder::partial_text() const {
  if (!state_.in_body()) return {};
  return text_.substr(0, text_.size() - state_.eom_progress);
}

DecodeResult decode(std::string_view text, const CodecState& initial, GrammarOptions options) {
  TranscriptDecoder dec(initial, options);
  DecodeResult out;
  dec.feed(text, out.events);
  out.state = dec.state();
  out.partial_text = dec.partial_text();
  out.weekday_warnings = dec.weekday_warnings();
  return out;
}

DecodeResult decode(std::string_view text, Format format, GrammarOptions options) {
  return decode(text, CodecState::initial(format), options);
}

}  // namespace livetalk
