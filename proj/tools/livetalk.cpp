// livetalk: transcript codec, n-gram training, simulation, corpus analysis
// and the session server.

#include <atomic>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "livetalk/analysis.hpp"
#include "livetalk/codec.hpp"
#include "livetalk/duration.hpp"
#include "livetalk/event_io.hpp"
#include "livetalk/ngram.hpp"
#include "livetalk/scheduler.hpp"
#include "livetalk/service_config.hpp"
#include "livetalk/speculation.hpp"
#include "livetalk/ws_server.hpp"

using namespace livetalk;
using nlohmann::json;

namespace {

std::atomic<bool> g_stop{false};

std::string read_file(const std::string& path) {
  if (path == "-") return {std::istreambuf_iterator<char>(std::cin), {}};
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), {}};
}

Corpus read_events(const std::string& path) {
  if (path == "-") return read_corpus(std::cin);
  return read_corpus(std::filesystem::path(path));
}

void write_output(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

void write_report(const std::string& path, const json& report) {
  write_output(path, report.dump(2, ' ', false, json::error_handler_t::replace) + "\n");
}

std::vector<std::vector<TokenId>> corpus_tokens(const Corpus& corpus, const Tokenizer& tok, Format format) {
  std::vector<std::vector<TokenId>> docs;
  for (const Document& d : corpus) docs.push_back(tok.encode(encode(d.events, format).text));
  return docs;
}

/// A bare path is an n-gram model file; otherwise a backend spec.
std::shared_ptr<const Backend> model_backend(const std::string& model) {
  for (const char* kind : {"mock:", "ngram:", "remote:"}) {
    if (model.rfind(kind, 0) == 0) return make_backend(model);
  }
  return std::make_shared<NgramBackend>(NgramModel::load(model));
}

std::string percentile_key(double p) {
  std::ostringstream os;
  os << "p" << p;
  return os.str();
}

json nll_report(const Backend& backend, const Corpus& corpus, Format format) {
  double total = 0.0;
  std::size_t tokens = 0;
  json docs = json::array();
  for (const Document& d : corpus) {
    const std::vector<TokenId> t = backend.tokenizer().encode(encode(d.events, format).text);
    const double nll = document_nll(backend, t);
    total += nll;
    tokens += t.size();
    docs.push_back({{"doc", d.id}, {"nll_nats", nll}, {"tokens", t.size()}});
  }
  return {{"documents", corpus.size()},
          {"tokens", tokens},
          {"nll_nats", total},
          {"nats_per_token", tokens ? total / static_cast<double>(tokens) : 0.0},
          {"per_document", docs}};
}

struct AnalyzeArgs {
  std::string format = "messenger";
  std::string tokenizer = "bytes";
  std::string in;
  std::string out = "-";
  std::string t_react = "200ms";
  std::vector<double> percentiles{50, 90, 99, 99.9};
  std::size_t bins = 25;
  std::string compare;
  std::string model;
  std::string speaker;
  std::string policy = "cross-speaker";
  std::uint64_t seed = 0;
  std::size_t draft_attempts = 64;
  std::size_t max_interruptions = SIZE_MAX;
};

void analyze_overhead(const AnalyzeArgs& a) {
  const Format format = parse_format(a.format);
  const OverheadStats s = overhead_stats(read_events(a.in), Tokenizer::from_spec(a.tokenizer), format);
  json ratios = json::array();
  for (const OverheadRecord& r : s.messages) {
    ratios.push_back({r.plaintext_tokens, r.control_tokens});
  }
  write_report(a.out, {{"statistic", "overhead"},
                       {"format", a.format},
                       {"tokenizer", a.tokenizer},
                       {"messages", s.messages.size()},
                       {"plaintext_tokens", s.plaintext_tokens},
                       {"control_tokens", s.control_tokens},
                       {"total_ratio", s.plaintext_tokens ? static_cast<double>(s.control_tokens) /
                                                                static_cast<double>(s.plaintext_tokens)
                                                          : 0.0},
                       {"mean_ratio", s.mean_ratio},
                       {"median_ratio", s.median_ratio},
                       {"points", ratios}});
}

void analyze_bandwidth(const AnalyzeArgs& a) {
  const Format format = parse_format(a.format);
  std::optional<char> speaker;
  if (!a.speaker.empty()) {
    if (a.speaker.size() != 1) throw Error("--speaker takes one letter");
    speaker = a.speaker[0];
  }
  const RateStats s = required_rates(read_events(a.in), Tokenizer::from_spec(a.tokenizer), format,
                                     parse_duration(a.t_react), a.percentiles, speaker);
  json report = {{"statistic", "bandwidth"},
                 {"format", a.format},
                 {"tokenizer", a.tokenizer},
                 {"t_react_us", parse_duration(a.t_react)},
                 {"rated", s.rates.size()},
                 {"excluded", s.excluded}};
  for (const auto& [p, rate] : s.percentiles) report[percentile_key(p) + "_tok_per_s"] = rate;
  report["curve"] = s.curve;
  write_report(a.out, report);
}

void analyze_delays(const AnalyzeArgs& a) {
  const Corpus corpus = read_events(a.in);
  json report = {{"statistic", "delays"}, {"bins", a.bins}};
  if (a.compare.empty()) {
    const DelayHistogram h = delay_histogram(corpus, a.bins);
    report["messages"] = h.total();
    report["edges_us"] = h.edges;
    report["counts"] = h.counts;
  } else {
    const auto [p, q] = shared_delay_histograms(corpus, read_events(a.compare), a.bins);
    report["messages"] = p.total();
    report["compare_messages"] = q.total();
    report["edges_us"] = p.edges;
    report["counts"] = p.counts;
    report["compare_counts"] = q.counts;
    report["kl_nats"] = kl_divergence(p, q);
  }
  write_report(a.out, report);
}

void analyze_speculation(const AnalyzeArgs& a) {
  if (a.model.empty()) throw Error("--model is required");
  const Format format = parse_format(a.format);
  const auto backend = model_backend(a.model);
  SavingsOptions o;
  o.t_react = parse_duration(a.t_react);
  o.cross_speaker_only = a.policy == "cross-speaker";
  o.seed = a.seed;
  o.draft_attempts = a.draft_attempts;
  o.max_interruptions = a.max_interruptions;
  const SavingsReport r = speculation_savings(*backend, flatten(read_events(a.in)), format, o);
  std::cerr << std::left << std::setw(34) << "interruptions" << r.interruptions << "\n"
            << std::setw(34) << "drafted" << r.drafted << "\n"
            << std::setw(34) << "mean accepted tokens per draft" << r.mean_accepted << "\n"
            << std::setw(34) << "accepted fraction of offered" << r.accepted_fraction << "\n";
  write_report(a.out, {{"statistic", "speculation"},
                       {"policy", a.policy},
                       {"t_react_us", o.t_react},
                       {"interruptions", r.interruptions},
                       {"drafted", r.drafted},
                       {"offered", r.offered},
                       {"accepted", r.accepted},
                       {"mean_accepted", r.mean_accepted},
                       {"accepted_fraction", r.accepted_fraction}});
}

struct SimulateArgs {
  std::string backend;
  std::string format = "messenger";
  std::string t_react = "200ms";
  std::string user_speaker = "A";
  bool speculation = false;
  std::uint64_t seed = 0;
  std::string token_cost = "0";
  std::string duration;
  std::size_t max_events = SIZE_MAX;
  std::size_t max_message_tokens = 64;
  std::string history;
  std::string script;
  std::string feeder;
  std::string out = "-";
  bool audit = false;
};

int simulate(const SimulateArgs& a) {
  SessionConfig c;
  c.format = parse_format(a.format);
  if (a.user_speaker.size() != 1 || !valid_speaker(a.user_speaker[0], c.format)) {
    throw Error("invalid user speaker '" + a.user_speaker + "'");
  }
  c.user_speaker = a.user_speaker[0];
  c.t_react = parse_duration(a.t_react);
  c.speculation = a.speculation;
  c.seed = a.seed;
  c.token_cost = parse_duration(a.token_cost);
  c.max_events = a.max_events;
  c.limits.max_message_tokens = a.max_message_tokens;

  std::vector<Event> seeds;
  if (!a.history.empty()) seeds = flatten(read_events(a.history));
  std::vector<Input> script;
  if (!a.script.empty()) script = read_input_script(std::filesystem::path(a.script));
  if (!a.feeder.empty()) {
    const auto words = feeder_words(read_feeder(std::filesystem::path(a.feeder)));
    const auto fed = asr_inputs(words);
    script.insert(script.end(), fed.begin(), fed.end());
    std::stable_sort(script.begin(), script.end(), [](const Input& x, const Input& y) { return x.time < y.time; });
  }
  Micros start = seeds.empty() ? 0 : seeds.back().time;
  if (seeds.empty() && !script.empty() && c.format == Format::messenger) start = script.front().time;
  if (!a.duration.empty()) c.end_time = start + parse_duration(a.duration);
  if (!c.end_time && c.max_events == SIZE_MAX && std::none_of(script.begin(), script.end(), [](const Input& i) {
        return i.kind == Input::Kind::close;
      })) {
    throw Error("give --duration, --max-events or a close input so the run ends");
  }

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (a.out != "-") {
    file.open(a.out, std::ios::binary);
    if (!file) throw Error("cannot write " + a.out);
    out = &file;
  }
  c.keep_trace = a.audit;
  Session session(c, make_backend(a.backend), [out](const TraceRecord& r) { *out << dump_trace(r) << '\n'; });
  for (const Event& e : seeds) session.seed(e, Provenance::user);
  VirtualClock clock(std::move(script), start);
  const SessionResult result = session.run(clock);
  out->flush();

  json summary = {{"status", result.status == SessionStatus::failed ? "failed" : "ok"},
                  {"events", session.history().size()},
                  {"emitted", session.metrics().emitted},
                  {"discarded", session.metrics().discarded},
                  {"kept", session.metrics().kept},
                  {"hist_hash", hex_digest(history_hash(session.history()))}};
  if (!result.error.empty()) summary["error"] = result.error;
  if (a.audit) {
    const AuditReport rep = audit_trace(session.trace(), c.user_speaker, c.t_react);
    summary["audit_ok"] = rep.ok;
    summary["audit_violations"] = rep.violations;
  }
  std::cerr << summary.dump() << "\n";
  return result.status == SessionStatus::failed || (a.audit && !summary["audit_ok"].get<bool>()) ? 1 : 0;
}

void bind_simulate_options(CLI::App& app, SimulateArgs& a) {
  app.set_config("--config", "", "Flat key = value file");
  app.add_option("--backend", a.backend, "mock:FILE, ngram:FILE or remote:URL")->required();
  app.add_option("--format", a.format)->check(CLI::IsMember({"messenger", "spoken"}))->capture_default_str();
  app.add_option("--t-react", a.t_react)->capture_default_str();
  app.add_option("--user-speaker", a.user_speaker)->capture_default_str();
  app.add_flag("--speculation,!--no-speculation", a.speculation);
  app.add_option("--seed", a.seed)->capture_default_str();
  app.add_option("--token-cost", a.token_cost, "Modeled time per generated token")->capture_default_str();
  app.add_option("--duration", a.duration, "Stop this long after the start");
  app.add_option("--max-events", a.max_events);
  app.add_option("--max-message-tokens", a.max_message_tokens)->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--history", a.history, "Events (JSON lines) present before the start");
  app.add_option("--script", a.script, "Timed user inputs (JSON lines)");
  app.add_option("--feeder", a.feeder, "Recognizer feed (JSON lines), words tagged w<index>");
  app.add_option("--out", a.out, "Trace output, - for stdout")->capture_default_str();
  app.add_flag("--audit", a.audit, "Check the trace and fail on violations");
}

int serve(const ServiceConfig& config) {
  Service service(to_service_options(config), make_service_backend(config));
  WebSocketServer server(service, config.host, config.port, config.client_buffer);
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  server.start();
  std::cout << "listening on ws://" << config.host << ":" << server.port() << std::endl;
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  service.shutdown();
  server.stop();
  return 0;
}

}  // namespace

// CLI11 reads --config files only on the root app, so commands that take one
// are parsed by an app of their own.
int run_with_config(int argc, char** argv) {
  const std::string name = argv[1];
  CLI::App app{"livetalk " + name, "livetalk " + name};
  SimulateArgs sim;
  ServiceConfig sc;
  if (name == "serve") {
    bind_service_options(app, sc);
  } else {
    bind_simulate_options(app, sim);
  }
  try {
    app.parse(argc - 1, argv + 1);
    return name == "serve" ? serve(sc) : simulate(sim);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "livetalk: " << e.what() << "\n";
    return 1;
  }
}

int main(int argc, char** argv) {
  if (argc > 1 && (std::string_view(argv[1]) == "serve" || std::string_view(argv[1]) == "simulate")) {
    return run_with_config(argc, argv);
  }
  CLI::App app{"Live conversation engine over timed transcripts"};
  app.require_subcommand(1);
  int status = 0;

  std::string format = "messenger", in, out = "-", tokenizer = "bytes", model;
  bool lenient = false;
  auto* enc = app.add_subcommand("encode", "Events (JSON lines) to a transcript");
  auto* dec = app.add_subcommand("decode", "Transcript to events (JSON lines)");
  for (auto* sub : {enc, dec}) {
    sub->add_option("--format", format)->check(CLI::IsMember({"messenger", "spoken"}))->capture_default_str();
    sub->add_option("--in", in, "Input file, - for stdin")->required();
    sub->add_option("--out", out, "Output file, - for stdout")->capture_default_str();
  }
  std::string doc;
  enc->add_option("--doc", doc, "Document to encode when the file holds several");
  dec->add_flag("--lenient", lenient, "Accept the separator-less minute form and weekday mismatches");
  enc->callback([&] {
    const Corpus corpus = read_events(in);
    const Document* chosen = corpus.size() == 1 && doc.empty() ? &corpus.front() : nullptr;
    for (const Document& d : corpus) {
      if (!doc.empty() && d.id == doc) chosen = &d;
    }
    if (corpus.empty()) throw Error("no events in " + in);
    if (!chosen) {
      throw Error(doc.empty() ? "the file holds " + std::to_string(corpus.size()) + " documents; pick one with --doc"
                              : "no document '" + doc + "'");
    }
    write_output(out, encode(chosen->events, parse_format(format)).text);
  });
  dec->callback([&] {
    GrammarOptions g;
    g.lenient = lenient;
    const DecodeResult r = decode(read_file(in), parse_format(format), g);
    std::ostringstream os;
    write_events(os, r.events);
    write_output(out, os.str());
    if (!r.partial_text.empty() || r.state.phase != ParsePhase::entry_start) {
      std::cerr << "warning: transcript ends inside an entry\n";
    }
    if (r.weekday_warnings) std::cerr << "warning: " << r.weekday_warnings << " weekday mismatches\n";
  });

  int order = 3;
  double alpha = 0.1;
  auto* train = app.add_subcommand("train-ngram", "Train an n-gram model on encoded transcripts");
  train->add_option("--order", order)->check(CLI::Range(0, 16))->capture_default_str();
  train->add_option("--alpha", alpha)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--format", format)->check(CLI::IsMember({"messenger", "spoken"}))->capture_default_str();
  train->add_option("--tokenizer", tokenizer, "bytes, optimized or vocab:FILE")->capture_default_str();
  train->add_option("--in", in)->required();
  train->add_option("--out", out)->required();
  train->callback([&] {
    auto tok = std::make_shared<Tokenizer>(Tokenizer::from_spec(tokenizer));
    const NgramModel m = NgramModel::train(tok, corpus_tokens(read_events(in), *tok, parse_format(format)), order, alpha);
    m.save(out);
    std::cerr << "trained order " << order << " on " << m.token_count() << " tokens\n";
  });

  std::string report_out = "-";
  auto* nll = app.add_subcommand("nll", "Negative log likelihood of a corpus under an n-gram model");
  nll->add_option("--model", model, "n-gram model file or backend spec")->required();
  nll->add_option("--format", format)->check(CLI::IsMember({"messenger", "spoken"}))->capture_default_str();
  nll->add_option("--in", in)->required();
  nll->add_option("--out", report_out)->capture_default_str();
  nll->callback([&] {
    write_report(report_out, nll_report(*model_backend(model), read_events(in), parse_format(format)));
  });

  SimulateArgs sim;
  auto* simc = app.add_subcommand("simulate", "Run a session on a virtual clock and write its trace");
  bind_simulate_options(*simc, sim);
  simc->callback([&] { status = simulate(sim); });

  SyntheticParams synth;
  std::uint64_t synth_seed = 0;
  std::string synth_mean_gap = "5s";
  auto* syn = app.add_subcommand("synth", "Generate a synthetic corpus");
  syn->add_option("--format", format)->check(CLI::IsMember({"messenger", "spoken"}))->capture_default_str();
  syn->add_option("--messages", synth.messages)->capture_default_str();
  syn->add_option("--seed", synth_seed)->capture_default_str();
  syn->add_option("--speakers", synth.speakers)->capture_default_str();
  syn->add_option("--mean-gap", synth_mean_gap)->capture_default_str();
  syn->add_option("--out", out)->capture_default_str();
  syn->callback([&] {
    synth.format = parse_format(format);
    synth.mean_gap = parse_duration(synth_mean_gap);
    std::ostringstream os;
    write_corpus(os, to_corpus(generate_synthetic_corpus(synth_seed, synth), synth.format));
    write_output(out, os.str());
  });

  std::vector<std::string> confusions = {"uh", "um", "the", "a"};
  double instability = 0.3;
  std::string max_delay = "600ms";
  std::uint64_t feed_seed = 0;
  auto* feed = app.add_subcommand("asr-feed", "Unstable recognizer feed from final words");
  feed->add_option("--in", in, "Words (JSON lines), all spoken by the user")->required();
  feed->add_option("--confusions", confusions, "Wrong first hypotheses")->delimiter(',')->capture_default_str();
  feed->add_option("--instability", instability, "Chance a word is first misrecognized")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  feed->add_option("--max-delay", max_delay, "Longest correction delay")->capture_default_str();
  feed->add_option("--seed", feed_seed)->capture_default_str();
  feed->add_option("--out", out)->capture_default_str();
  feed->callback([&] {
    const std::vector<Event> words = flatten(read_events(in));
    std::ostringstream os;
    write_feeder(os, feeder_records(unstable_asr_feeder(words, confusions, instability, parse_duration(max_delay), feed_seed)));
    write_output(out, os.str());
  });

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Corpus statistics as a JSON report");
  analyze->require_subcommand(1);
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--format", an.format)->check(CLI::IsMember({"messenger", "spoken"}))->capture_default_str();
    sub->add_option("--tokenizer", an.tokenizer, "bytes, optimized or vocab:FILE")->capture_default_str();
    sub->add_option("--in", an.in)->required();
    sub->add_option("--out", an.out)->capture_default_str();
  };
  auto* ov = analyze->add_subcommand("overhead", "Control tokens against plaintext tokens");
  common(ov);
  ov->callback([&] { analyze_overhead(an); });
  auto* bw = analyze->add_subcommand("bandwidth", "Generation rate needed to keep up");
  common(bw);
  bw->add_option("--t-react", an.t_react)->capture_default_str();
  bw->add_option("--percentiles", an.percentiles)->delimiter(',')->capture_default_str();
  bw->add_option("--speaker", an.speaker, "Rate only this speaker's messages");
  bw->callback([&] { analyze_bandwidth(an); });
  auto* dl = analyze->add_subcommand("delays", "Inter-message delay histogram");
  common(dl);
  dl->add_option("--bins", an.bins)->check(CLI::PositiveNumber)->capture_default_str();
  dl->add_option("--compare", an.compare, "Second corpus: shared bins and KL divergence");
  dl->callback([&] { analyze_delays(an); });
  auto* an_nll = analyze->add_subcommand("nll", "Corpus likelihood under a model");
  common(an_nll);
  an_nll->add_option("--model", an.model, "n-gram model file or backend spec")->required();
  an_nll->callback([&] {
    write_report(an.out, nll_report(*model_backend(an.model), read_events(an.in), parse_format(an.format)));
  });
  auto* sp = analyze->add_subcommand("speculation", "Draft tokens salvaged across interruptions");
  common(sp);
  sp->add_option("--model", an.model, "n-gram model file or backend spec")->required();
  sp->add_option("--policy", an.policy)->check(CLI::IsMember({"cross-speaker", "all"}))->capture_default_str();
  sp->add_option("--t-react", an.t_react)->capture_default_str();
  sp->add_option("--seed", an.seed)->capture_default_str();
  sp->add_option("--draft-attempts", an.draft_attempts)->capture_default_str();
  sp->add_option("--max-interruptions", an.max_interruptions);
  sp->callback([&] { analyze_speculation(an); });

  ServiceConfig sc;
  auto* srv = app.add_subcommand("serve", "Host sessions over WebSocket");
  bind_service_options(*srv, sc);
  srv->callback([&] { status = serve(sc); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "livetalk: " << e.what() << "\n";
    return 1;
  }
  return status;
}
