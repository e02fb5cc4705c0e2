#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "livetalk/constrained.hpp"
#include "livetalk/mock_backend.hpp"
#include "livetalk/ngram.hpp"
#include "livetalk/remote_backend.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace livetalk;
using namespace livetalk::testing;

namespace {

SharedTokenizer bytes_tok() {
  static auto t = std::make_shared<Tokenizer>(Tokenizer::bytes());
  return t;
}

SharedTokenizer optimized_tok() {
  static auto t = std::make_shared<Tokenizer>(Tokenizer::optimized());
  return t;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("livetalk_test_" + name);
}

std::vector<TokenId> ids(const Tokenizer& tok, std::string_view text) { return tok.encode(text); }

const std::vector<Event> kKnock = {
    {550'000, 'A', "knock"},         {790'000, 'A', "knock"}, {1'540'000, 'B', "who's"},
    {1'860'000, 'B', "there"},       {2'520'000, 'A', "interrupting"}, {3'160'000, 'A', "cow"},
    {3'770'000, 'B', "interrupting"}, {4'430'000, 'B', "cow"},   {4'480'000, 'A', "moo"},
    {4'730'000, 'B', "who"},
};

// Deterministic pseudo-random logits keyed on the prefix. The support depends
// on how many tokens were generated after `base`; the last stage repeats.
FunctionBackend::Fn staged_logits(std::size_t base, std::vector<std::vector<TokenId>> stages, std::uint64_t salt) {
  return [=](std::span<const TokenId> prefix, TokenDistribution& out) {
    std::uint64_t h = 1469598103934665603ull ^ salt;
    for (TokenId t : prefix) h = (h ^ static_cast<std::uint64_t>(t)) * 1099511628211ull;
    const auto& support = stages[std::min(prefix.size() - base, stages.size() - 1)];
    for (TokenId t : support) {
      std::uint64_t x = (h ^ static_cast<std::uint64_t>(t) * 0x9e3779b97f4a7c15ull) * 0xbf58476d1ce4e5b9ull;
      x ^= x >> 31;
      out.logp[static_cast<std::size_t>(t)] = 3.0 * static_cast<double>(x >> 11) * 0x1.0p-53;
    }
  };
}

std::map<std::string, double> sample_entries(const Backend& b, const TokenMasker& m, const SharedContext& ctx,
                                             Micros min_time, int n, std::uint64_t seed, DecodeLimits limits = {}) {
  Rng rng(seed);
  std::map<std::string, long> counts;
  for (int i = 0; i < n; ++i) {
    const CandidateEvent c = constrained_sample_event(b, m, ctx, min_time, rng, limits);
    ++counts[entry_text(b.tokenizer(), c)];
  }
  return normalize_counts(counts);
}

}  // namespace

TEST_SUITE("lm") {
  TEST_CASE("tokenizer token counts for spoken entries") {
    CHECK(Tokenizer::bytes().encode("055A").size() == 4);
    const Tokenizer opt = Tokenizer::optimized();
    const auto t = opt.encode("055A");
    REQUIRE(t.size() == 2);
    CHECK(opt.piece(t[0]) == "055");
    CHECK(opt.piece(t[1]) == "A");
    CHECK(opt.encode("055Aknock\n").size() == 8);
    CHECK(opt.size() == 256 + 1000);
  }

  TEST_CASE("tokenizer round trip in every mode") {
    std::vector<std::string> pieces = {"<eom>", "ab", "abc", "\n", "knock", "\xff\x00", "00", ";4"};
    pieces[5] = std::string("\xff\0", 2);
    const auto vocab = temp_path("vocab.txt");
    Tokenizer::from_pieces(pieces).save_vocab(vocab);
    const Tokenizer modes[] = {Tokenizer::bytes(), Tokenizer::optimized(), Tokenizer::from_vocab_file(vocab)};
    CHECK(modes[2].size() == 256 + 7);
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> byte(0, 255), len(0, 40), coin(0, 3);
    for (int trial = 0; trial < 2000; ++trial) {
      std::string s;
      for (int n = len(rng); n > 0; --n) {
        if (coin(rng) == 0) {
          s += pieces[static_cast<std::size_t>(byte(rng)) % pieces.size()];
        } else {
          s += static_cast<char>(byte(rng));
        }
      }
      for (const Tokenizer& tok : modes) {
        const auto t = tok.encode(s);
        REQUIRE(tok.decode(t) == s);
      }
    }
    std::filesystem::remove(vocab);
  }

  TEST_CASE("greedy longest match uses the longest vocabulary piece") {
    const Tokenizer tok = Tokenizer::from_pieces({"a", "ab", "abc", "bc"});
    const auto t = tok.encode("abcab");
    REQUIRE(t.size() == 2);
    CHECK(tok.piece(t[0]) == "abc");
    CHECK(tok.piece(t[1]) == "ab");
    CHECK(tok.encode("abd").size() == 2);
  }

  TEST_CASE("piece escaping round trips every byte") {
    for (int b = 0; b < 256; ++b) {
      const std::string p(1, static_cast<char>(b));
      const std::string e = escape_piece(p);
      CHECK(e.find('\n') == std::string::npos);
      CHECK(unescape_piece(e) == p);
    }
    CHECK(escape_piece("a\\b\n") == "a\\\\b\\n");
  }

  TEST_CASE("optimized tokenizer changes token counts, never decoded events") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
      const auto events = random_events(rng, Format::spoken);
      const std::string text = encode(events, Format::spoken).text;
      const Tokenizer& b = *bytes_tok();
      const Tokenizer& o = *optimized_tok();
      const auto tb = b.encode(text);
      const auto to = o.encode(text);
      CHECK(to.size() <= tb.size());
      CHECK(decode(o.decode(to), Format::spoken).events == decode(b.decode(tb), Format::spoken).events);
    }
  }

  TEST_CASE("table backend returns its scripted distribution") {
    auto tok = bytes_tok();
    TableBackend b(tok);
    b.set({}, {{'x', 0.7}, {'y', 0.3}});
    TokenDistribution d;
    b.next_logprobs({}, d);
    CHECK(std::exp(d.logp['x']) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(std::exp(d.logp['y']) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(d.logp['z'] == kNegInf);
    CHECK_FALSE(d.truncated);
  }

  TEST_CASE("n-gram closed-form probabilities") {
    auto tok = bytes_tok();
    const double v = static_cast<double>(tok->size());
    {
      const auto m = NgramModel::train(tok, {ids(*tok, "ababab")}, 1, 0.0);
      CHECK(m.logprob(ids(*tok, "a"), 'b') == 0.0);
      CHECK(m.logprob(ids(*tok, "a"), 'a') == kNegInf);
    }
    {
      const auto m = NgramModel::train(tok, {ids(*tok, "ab ab")}, 1, 1.0);
      CHECK(std::exp(m.logprob(ids(*tok, "a"), 'b')) == doctest::Approx(3.0 / (2.0 + v)).epsilon(1e-12));
      CHECK(std::exp(m.logprob(ids(*tok, "a"), 'q')) == doctest::Approx(1.0 / (2.0 + v)).epsilon(1e-12));
    }
    {
      const auto m = NgramModel::train(tok, {ids(*tok, "aaaa")}, 1, 1e-9);
      CHECK(std::exp(m.logprob(ids(*tok, "a"), 'a')) == doctest::Approx(1.0).epsilon(1e-6));
    }
    {
      // Order 0 with add-1: P(w) = (c(w) + 1) / (N + V).
      const auto m = NgramModel::train(tok, {ids(*tok, "abbb")}, 0, 1.0);
      CHECK(std::exp(m.logprob(ids(*tok, "a"), 'b')) == doctest::Approx(4.0 / (4.0 + v)).epsilon(1e-12));
      CHECK(std::exp(m.logprob({}, 'a')) == doctest::Approx(2.0 / (4.0 + v)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(NgramModel::train(tok, {}, 2, 1.0), Error);
  }

  TEST_CASE("n-gram distributions are normalized and back off on unseen contexts") {
    auto tok = bytes_tok();
    const auto m = NgramModel::train(tok, {ids(*tok, "the cat sat on the mat")}, 3, 0.1);
    std::vector<double> lp;
    for (std::string_view ctx : {"", "the", "zzz", "at", " o"}) {
      m.logprobs(ids(*tok, ctx), lp);
      CHECK(std::exp(log_sum_exp(lp)) == doctest::Approx(1.0).epsilon(1e-9));
    }
    // "zq" never occurred; the distribution equals the one for the empty context's unigram.
    std::vector<double> a, b;
    m.logprobs(ids(*tok, "zq"), a);
    m.logprobs({}, b);
    CHECK(a == b);
  }

  TEST_CASE("training data is likelier under the n-gram than under uniform") {
    auto tok = optimized_tok();
    std::mt19937_64 rng(3);
    std::vector<std::vector<TokenId>> docs;
    for (int i = 0; i < 20; ++i) docs.push_back(tok->encode(encode(random_events(rng, Format::spoken), Format::spoken).text));
    for (double alpha : {0.01, 0.1, 1.0}) {
      const auto m = NgramModel::train(tok, docs, 2, alpha);
      double nll = 0.0, uniform = 0.0;
      for (const auto& d : docs) {
        for (std::size_t i = 0; i < d.size(); ++i) {
          nll -= m.logprob(std::span(d).first(i), d[i]);
          uniform += std::log(static_cast<double>(tok->size()));
        }
      }
      CHECK(nll < uniform);
    }
  }

  TEST_CASE("n-gram save and load preserve every distribution") {
    auto tok = optimized_tok();
    const auto docs = std::vector<std::vector<TokenId>>{tok->encode(encode(kKnock, Format::spoken).text)};
    const auto m = NgramModel::train(tok, docs, 2, 0.05);
    const auto path = temp_path("model.ngram");
    m.save(path);
    const auto loaded = NgramModel::load(path);
    CHECK(loaded.order() == 2);
    CHECK(loaded.alpha() == 0.05);
    std::vector<double> a, b;
    for (std::size_t i = 0; i <= docs[0].size(); ++i) {
      m.logprobs(std::span(docs[0]).first(i), a);
      loaded.logprobs(std::span(docs[0]).first(i), b);
      REQUIRE(a == b);
    }
    std::filesystem::remove(path);
    std::ofstream(path) << "not a model\n";
    CHECK_THROWS_AS(NgramModel::load(path), Error);
    std::filesystem::remove(path);
  }

  TEST_CASE("sampling wrapper: temperature and nucleus") {
    auto tok = bytes_tok();
    auto table = std::make_shared<TableBackend>(tok);
    table->set_default({{'a', 0.5}, {'b', 0.3}, {'c', 0.2}});
    TokenDistribution d;
    SamplingBackend(table, 1.0, 1.0).next_logprobs({}, d);
    CHECK(std::exp(d.logp['b']) == doctest::Approx(0.3));
    SamplingBackend(table, 1.0, 0.75).next_logprobs({}, d);
    CHECK(std::exp(d.logp['a']) == doctest::Approx(0.625));
    CHECK(std::exp(d.logp['b']) == doctest::Approx(0.375));
    CHECK(d.logp['c'] == kNegInf);
    SamplingBackend(table, 0.5, 1.0).next_logprobs({}, d);
    CHECK(std::exp(d.logp['a']) == doctest::Approx(0.25 / 0.38));
    CHECK_THROWS_AS(SamplingBackend(table, 0.0, 1.0), Error);
  }

  TEST_CASE("mock backend: degenerate script reproduces one event with unit probabilities") {
    MockScript s;
    s.format = Format::messenger;
    s.origin = utc(2024, 2, 28, 22, 32, 13, 8);
    s.continuations = {{0, 'B', "getting some cuda device error though", 1.0}};
    TemplateBackend b(s);
    TokenMasker m(b.tokenizer());
    auto ctx = build_context(b.tokenizer(), {}, Format::messenger);
    Rng rng(1);
    const CandidateEvent c = constrained_sample_event(b, m, ctx, 0, rng);
    CHECK(c.complete);
    CHECK(c.event == Event{s.origin, 'B', "getting some cuda device error though"});
    CHECK(b.tokenizer().decode(c.tokens) == "2024February28W+22:32;13.8Bgetting some cuda device error though<eom>");
    for (double p : c.stepwise) CHECK(p == 1.0);
  }

  TEST_CASE("mask renormalizes away a digit that would decode below the floor") {
    auto tok = bytes_tok();
    // Spoken history ending at 4.48 s; floor 4.73 s. After "4", digit '8' (4.8x) is legal, '6' (4.6x) is not.
    const std::vector<Event> hist(kKnock.begin(), kKnock.begin() + 9);
    auto ctx = build_context(*tok, hist, Format::spoken);
    const std::size_t n = ctx->tokens.size();
    FunctionBackend b(tok, [n](std::span<const TokenId> p, TokenDistribution& out) {
      if (p.size() == n) {
        out.logp['4'] = std::log(1.0);
      } else if (p.size() == n + 1) {
        out.logp['8'] = std::log(0.5);
        out.logp['6'] = std::log(0.5);
      } else if (p.size() == n + 2) {
        out.logp['0'] = 0.0;
      } else if (p.size() == n + 3) {
        out.logp['B'] = 0.0;
      } else if (p.size() == n + 4) {
        out.logp['x'] = 0.0;
      } else {
        out.logp['\n'] = 0.0;
      }
    });
    TokenMasker m(*tok);
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
      const CandidateEvent c = constrained_sample_event(b, m, ctx, 4'730'000, rng);
      REQUIRE(tok->decode(c.tokens) == "480Bx\n");
      CHECK(c.event.time == 4'800'000);
      CHECK(c.stepwise == std::vector<double>(6, 1.0));
    }
  }

  TEST_CASE("uniform mock over two legal encodings scores 0.5 at the branch") {
    auto tok = bytes_tok();
    TableBackend b(tok);
    b.set(ids(*tok, ""), {{'1', 1.0}});
    b.set(ids(*tok, "1"), {{'2', 1.0}});
    b.set(ids(*tok, "12"), {{'3', 0.5}, {'4', 0.5}});
    b.set_default({{'A', 1.0}});
    b.set(ids(*tok, "123A"), {{'x', 1.0}});
    b.set(ids(*tok, "124A"), {{'x', 1.0}});
    b.set(ids(*tok, "123Ax"), {{'\n', 1.0}});
    b.set(ids(*tok, "124Ax"), {{'\n', 1.0}});
    TokenMasker m(*tok);
    auto ctx = build_context(*tok, {}, Format::spoken);
    for (std::string_view e : {"123Ax\n", "124Ax\n"}) {
      const auto p = event_stepwise_probs(b, m, ctx, ids(*tok, e), 0);
      CHECK(p == std::vector<double>{1.0, 1.0, 0.5, 1.0, 1.0, 1.0});
    }
    auto bad = ids(*tok, "12x");
    try {
      event_stepwise_probs(b, m, ctx, bad, 0);
      FAIL("expected IllegalTokenError");
    } catch (const IllegalTokenError& e) {
      CHECK(e.position() == 2);
    }
  }

  TEST_CASE("scoring sampled tokens reproduces the stepwise record bit for bit") {
    for (Format f : {Format::messenger, Format::spoken}) {
      auto tok = optimized_tok();
      std::mt19937_64 erng(21);
      std::vector<std::vector<TokenId>> docs;
      for (int i = 0; i < 30; ++i) docs.push_back(tok->encode(encode(random_events(erng, f, 12), f).text));
      NgramBackend b(NgramModel::train(tok, docs, 3, 0.02));
      TokenMasker m(*tok);
      Rng rng(99);
      for (int trial = 0; trial < 60; ++trial) {
        const auto hist = random_events(erng, f, 4);
        auto ctx = build_context(*tok, hist, f);
        const Micros floor = hist.back().time + (trial % 3) * 170'000;
        const CandidateEvent c = constrained_sample_event(b, m, ctx, floor, rng);
        REQUIRE(c.complete);
        CHECK(c.event.time >= floor);
        const auto p = event_stepwise_probs(b, m, ctx, c.tokens, floor);
        REQUIRE(p.size() == c.stepwise.size());
        for (std::size_t i = 0; i < p.size(); ++i) REQUIRE(p[i] == c.stepwise[i]);
        // The sampled tokens detokenize to the canonical rendering of the event.
        CodecState s = ctx->state;
        CHECK(tok->decode(c.tokens) == encode_entry(c.event, s));
      }
    }
  }

  TEST_CASE("masked sampling matches brute-force enumeration (spoken, 10-token vocabulary)") {
    auto tok = std::make_shared<Tokenizer>(Tokenizer::from_pieces({"9", "0", "99", "A", "B", " ", "a", "\n", "a\n", "x"}));
    const std::vector<Event> hist = {{9'610'000, 'A', "reading"}};
    auto ctx = build_context(*tok, hist, Format::spoken);
    const std::vector<TokenId> early = {0, 1, 2, 3, 4, 5}, late = {3, 5, 6, 7, 8, 9};
    FunctionBackend b(tok, staged_logits(ctx->tokens.size(), {early, early, early, early, late}, 1));
    TokenMasker m(*tok);
    const Micros floor = 9'950'000;
    const DecodeLimits lim{1};
    EntryOracle oracle(ctx->state, floor, hist.back().time + 10 * kMicrosPerSecond - kMicrosPerCentisecond,
                       lim.max_message_tokens);
    double lost = 0.0;
    const auto exact = enumerate_masked(b, ctx->tokens, oracle, 8, 0.0, &lost);
    CHECK(lost == 0.0);
    CHECK(exact.size() > 20);
    const auto emp = sample_entries(b, m, ctx, floor, 100'000, 17, lim);
    CHECK(total_variation(emp, exact) <= 0.02);
    for (const auto& [k, p] : emp) CHECK(exact.count(k) == 1);
  }

  TEST_CASE("masked sampling matches brute-force enumeration (messenger, 16-token vocabulary)") {
    auto tok = std::make_shared<Tokenizer>(Tokenizer::from_pieces(
        {".", "2", "5", ";", "9", "A", "B", "h", "<eom>", "<e", "om>", "5.", "59", ".2", " ", "x"}));
    const Micros prev = utc(2024, 3, 5, 10, 20, 45, 2);
    const std::vector<Event> hist = {{prev, 'A', "hi"}};
    auto ctx = build_context(*tok, hist, Format::messenger);
    // No leading digits, so every reachable timestamp lies within the next minute.
    const std::vector<TokenId> first = {0, 3, 13}, mid = {0, 1, 2, 4, 5, 6, 8, 9, 10, 11, 12, 13},
                               late = {5, 6, 7, 8, 9, 10, 14};
    FunctionBackend b(tok, staged_logits(ctx->tokens.size(), {first, mid, mid, mid, mid, late}, 2));
    TokenMasker m(*tok);
    const DecodeLimits lim{1};
    EntryOracle oracle(ctx->state, prev, prev + 60 * kMicrosPerSecond, lim.max_message_tokens);
    double lost = 0.0;
    const auto exact = enumerate_masked(b, ctx->tokens, oracle, 12, 0.0, &lost);
    CHECK(lost == 0.0);
    const auto emp = sample_entries(b, m, ctx, prev, 100'000, 23, lim);
    CHECK(total_variation(emp, exact) <= 0.02);
    for (const auto& [k, p] : emp) {
      REQUIRE(exact.count(k) == 1);
      const auto d = decode(k, ctx->state);
      REQUIRE(d.events.size() == 1);
      CHECK(d.events[0].time >= prev);
    }
  }

  TEST_CASE("n-gram on the knock-knock transcript: sampled next event matches enumeration") {
    auto tok = optimized_tok();
    const std::vector<std::vector<TokenId>> docs = {tok->encode(encode(kKnock, Format::spoken).text)};
    NgramBackend b(NgramModel::train(tok, docs, 2, 0.0));
    TokenMasker m(*tok);
    const std::vector<Event> hist(kKnock.begin(), kKnock.begin() + 9);
    auto ctx = build_context(*tok, hist, Format::spoken);
    const Micros floor = 4'730'000;
    EntryOracle oracle(ctx->state, floor, hist.back().time + 10 * kMicrosPerSecond - kMicrosPerCentisecond);
    double lost = 0.0;
    const auto exact = enumerate_masked(b, ctx->tokens, oracle, 64, 1e-9, &lost);
    CHECK(lost < 1e-6);
    CHECK(exact.size() >= 2);
    const auto emp = sample_entries(b, m, ctx, floor, 10'000, 31);
    CHECK(total_variation(emp, exact) <= 0.02);
    for (const auto& [k, p] : emp) CHECK(decode(k, ctx->state).events.at(0).time >= floor);
  }

  TEST_CASE("starved distributions") {
    auto tok = bytes_tok();
    TokenMasker m(*tok);
    auto ctx = build_context(*tok, {}, Format::spoken);
    FunctionBackend complete(tok, [](std::span<const TokenId>, TokenDistribution& out) { out.logp['x'] = 0.0; });
    Rng rng(1);
    try {
      constrained_sample_event(complete, m, ctx, 0, rng);
      FAIL("expected StarvedError");
    } catch (const StarvedError& e) {
      CHECK(e.step() == 0);
      CHECK(std::string(e.what()).find("starved") != std::string::npos);
    }
    FunctionBackend truncated_b(tok, [](std::span<const TokenId>, TokenDistribution& out) {
      out.logp['x'] = 0.0;
      out.truncated = true;
    });
    const CandidateEvent c = constrained_sample_event(truncated_b, m, ctx, 0, rng);
    CHECK(c.complete);
    // Digits, speaker and the final newline fall back to uniform; the 64 capped body tokens are 'x'.
    CHECK(c.tokens.size() == 3 + 1 + 64 + 1);
    CHECK(c.starved_steps == 5);
  }

  TEST_CASE("message length cap forces the sentinel") {
    auto tok = bytes_tok();
    TokenMasker m(*tok);
    const Micros t0 = utc(2024, 1, 1, 0, 0, 0);
    auto ctx = build_context(*tok, std::vector<Event>{{t0, 'A', "x"}}, Format::messenger);
    const std::size_t n = ctx->tokens.size();
    FunctionBackend b(tok, [n](std::span<const TokenId> p, TokenDistribution& out) {
      const std::size_t k = p.size() - n;
      if (k == 0) {
        out.logp['.'] = 0.0;
      } else if (k == 1) {
        out.logp['0'] = 0.0;
      } else if (k == 2) {
        out.logp['B'] = 0.0;
      } else {
        out.logp['z'] = std::log(0.999);
        for (char c : std::string("<eom>")) out.logp[static_cast<unsigned char>(c)] = std::log(0.0002);
      }
    });
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
      const CandidateEvent c = constrained_sample_event(b, m, ctx, t0, rng, DecodeLimits{5});
      CHECK(c.complete);
      CHECK(c.event.text.size() <= 5);
      CHECK(c.tokens.size() <= 3 + 5 + 5);
    }
  }

  TEST_CASE("context truncation drops whole oldest events and restores a full timestamp") {
    auto tok = bytes_tok();
    const Micros t0 = utc(2024, 2, 28, 22, 32, 13, 8);
    std::vector<Event> hist;
    for (int i = 0; i < 6; ++i) hist.push_back({t0 + i * 4 * kMicrosPerSecond, i % 2 ? 'A' : 'B', "msg" + std::to_string(i)});
    auto full = build_context(*tok, hist, Format::messenger);
    CHECK(full->first_event == 0);
    CHECK(tok->decode(full->tokens) == encode(hist, Format::messenger).text);
    auto cut = build_context(*tok, hist, Format::messenger, 80, 10);
    CHECK(cut->tokens.size() <= 70);
    CHECK(cut->first_event > 0);
    const std::vector<Event> kept(hist.begin() + static_cast<std::ptrdiff_t>(cut->first_event), hist.end());
    CHECK(tok->decode(cut->tokens) == encode(kept, Format::messenger).text);
    CHECK(tok->decode(cut->tokens).starts_with("2024February28W+"));
    // The smallest drop that fits: keeping one more event would exceed the budget.
    const std::vector<Event> more(hist.begin() + static_cast<std::ptrdiff_t>(cut->first_event) - 1, hist.end());
    CHECK(tok->encode(encode(more, Format::messenger).text).size() > 70);
    CHECK(cut->state.prev == full->state.prev);

    // Spoken: the surviving entries keep their codes relative to the dropped predecessor.
    auto sp = build_context(*tok, kKnock, Format::spoken, 30);
    const std::string text = tok->decode(sp->tokens);
    CHECK(text == "443Bcow\n448Amoo\n473Bwho\n");
    CHECK(sp->first_event == 7);
    CHECK(sp->state.prev == 4'730'000);
  }

  TEST_CASE("remote backend maps top-k responses and surfaces transport errors") {
    httplib::Server server;
    server.Post("/v1/next_token", [](const httplib::Request& req, httplib::Response& res) {
      const auto j = nlohmann::json::parse(req.body);
      if (j["prompt"] == "bad") {
        res.set_content("{\"oops\":1}", "application/json");
        return;
      }
      nlohmann::json out;
      out["top_logprobs"] = {{{"token", "0"}, {"logprob", std::log(0.6)}},
                             {{"token", "55"}, {"logprob", std::log(0.3)}},
                             {{"token", "5"}, {"logprob", std::log(0.05)}}};
      res.set_content(out.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    RemoteConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
    RemoteBackend b(cfg, bytes_tok());
    TokenDistribution d;
    b.next_logprobs(ids(*bytes_tok(), "prompt"), d);
    CHECK(d.truncated);
    CHECK(std::exp(d.logp['0']) == doctest::Approx(0.6));
    // "55" is not a local piece: its mass joins its first local token, '5'.
    CHECK(std::exp(d.logp['5']) == doctest::Approx(0.35));
    CHECK(d.logp['x'] == kNegInf);
    CHECK_THROWS_AS(b.next_logprobs(ids(*bytes_tok(), "bad"), d), BackendError);
    CHECK_THROWS_AS(b.parse_response("not json", d), BackendError);

    server.stop();
    th.join();
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
    cfg.timeout_ms = 500;
    RemoteBackend dead(cfg, bytes_tok());
    CHECK_THROWS_AS(dead.next_logprobs({}, d), BackendError);
  }

  TEST_CASE("backend specs") {
    const auto script = temp_path("mock.json");
    std::ofstream(script) << R"({"format":"spoken","continuations":[{"gap_ms":250,"speaker":"B","text":"hi"}]})";
    auto b = make_backend("mock:" + script.string());
    CHECK(b->describe() == "mock");
    std::filesystem::remove(script);
    CHECK_THROWS_AS(make_backend("nonsense"), Error);
    CHECK_THROWS_AS(make_backend("magic:x"), Error);
    CHECK_THROWS_AS(parse_mock_script("{}"), Error);
    CHECK_THROWS_AS(parse_mock_script(R"({"continuations":[{"gap_ms":1,"speaker":"C","text":""}]})"), Error);
  }
}
