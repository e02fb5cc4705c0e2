#include "livetalk/mock_backend.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace livetalk {

namespace {

std::vector<ContinuationTemplate> parse_templates(const nlohmann::json& arr, Format format) {
  std::vector<ContinuationTemplate> out;
  for (const auto& j : arr) {
    ContinuationTemplate t;
    t.gap = static_cast<Micros>(std::llround(j.at("gap_ms").get<double>() * 1000.0));
    const std::string speaker = j.at("speaker").get<std::string>();
    if (speaker.size() != 1 || !valid_speaker(speaker[0], format)) {
      throw Error("mock script: invalid speaker '" + speaker + "'");
    }
    t.speaker = speaker[0];
    t.text = j.at("text").get<std::string>();
    t.weight = j.value("weight", 1.0);
    if (t.gap < 0 || !(t.weight > 0.0)) throw Error("mock script: gap must be >= 0 and weight > 0");
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

MockScript parse_mock_script(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("mock script is not valid JSON: ") + e.what());
  }
  MockScript s;
  s.format = parse_format(j.value("format", std::string("messenger")));
  s.tokenizer = j.value("tokenizer", std::string("bytes"));
  s.origin = j.value("origin_us", Micros{0});
  if (j.contains("continuations")) s.continuations = parse_templates(j["continuations"], s.format);
  if (j.contains("after")) {
    for (const auto& [k, v] : j["after"].items()) {
      if (k.size() != 1) throw Error("mock script: 'after' keys must be speaker letters");
      s.after[k[0]] = parse_templates(v, s.format);
    }
  }
  if (j.contains("after_text")) {
    for (const auto& [k, v] : j["after_text"].items()) s.after_text[k] = parse_templates(v, s.format);
  }
  if (s.continuations.empty() && s.after.empty() && s.after_text.empty()) throw Error("mock script has no continuations");
  return s;
}

MockScript load_mock_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open mock script " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_mock_script(ss.str());
}

TemplateBackend::TemplateBackend(MockScript script)
    : TemplateBackend(script, std::make_shared<Tokenizer>(Tokenizer::from_spec(script.tokenizer))) {}

TemplateBackend::TemplateBackend(MockScript script, SharedTokenizer tokenizer)
    : script_(std::move(script)), tokenizer_(std::move(tokenizer)) {}

TemplateBackend::Boundary TemplateBackend::boundary_for(std::string_view text) const {
  {
    std::lock_guard lock(mu_);
    auto it = boundaries_.find(std::string(text));
    if (it != boundaries_.end()) return it->second;
  }
  Boundary b;
  const DecodeResult r = decode(text, script_.format);
  b.state = r.state;
  if (!r.events.empty()) {
    b.last_speaker = r.events.back().speaker;
    b.last_text = r.events.back().text;
  }
  std::lock_guard lock(mu_);
  if (boundaries_.size() > 4096) boundaries_.clear();
  boundaries_.emplace(std::string(text), b);
  return b;
}

void TemplateBackend::next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const {
  const std::size_t v = tokenizer_->size();
  out.truncated = false;
  const std::string text = tokenizer_->decode(prefix);
  const std::string_view eom = eom_sentinel(script_.format);
  const std::size_t hit = text.rfind(eom);
  const std::size_t cut = hit == std::string::npos ? 0 : hit + eom.size();
  const std::string_view partial = std::string_view(text).substr(cut);

  Boundary b;
  try {
    b = boundary_for(std::string_view(text).substr(0, cut));
  } catch (const DecodeError&) {
    out.logp.assign(v, -std::log(static_cast<double>(v)));
    return;
  }
  const std::vector<ContinuationTemplate>* chosen = &script_.continuations;
  if (auto bt = script_.after_text.find(b.last_text); !b.last_text.empty() && bt != script_.after_text.end()) {
    chosen = &bt->second;
  } else if (auto it = script_.after.find(b.last_speaker); it != script_.after.end()) {
    chosen = &it->second;
  }
  const auto& templates = *chosen;
  const Micros base = b.state.has_prev ? b.state.prev : (script_.format == Format::messenger ? script_.origin : 0);

  std::vector<double> mass(v, 0.0);
  double total = 0.0;
  const auto& trie = tokenizer_->trie();
  for (const ContinuationTemplate& t : templates) {
    CodecState s = b.state;
    std::string rendered;
    try {
      rendered = encode_entry({base + t.gap, t.speaker, t.text}, s);
    } catch (const EncodeError&) {
      continue;
    }
    if (rendered.size() <= partial.size() || !std::string_view(rendered).starts_with(partial)) continue;
    std::int32_t node = 0;
    TokenId best = -1;
    for (std::size_t i = partial.size(); i < rendered.size(); ++i) {
      const auto& kids = trie[static_cast<std::size_t>(node)].children;
      const auto c = static_cast<unsigned char>(rendered[i]);
      auto k = std::find_if(kids.begin(), kids.end(), [c](const auto& kv) { return kv.first == c; });
      if (k == kids.end()) break;
      node = k->second;
      if (trie[static_cast<std::size_t>(node)].token >= 0) best = trie[static_cast<std::size_t>(node)].token;
    }
    mass[static_cast<std::size_t>(best)] += t.weight;
    total += t.weight;
  }
  if (total <= 0.0) {
    out.logp.assign(v, -std::log(static_cast<double>(v)));
    return;
  }
  // Templates are a sparse model: tokens off every template are unknown, not
  // impossible, so a masked-out support falls back to uniform.
  out.truncated = true;
  out.logp.resize(v);
  for (std::size_t i = 0; i < v; ++i) out.logp[i] = mass[i] > 0.0 ? std::log(mass[i] / total) : kNegInf;
}

}  // namespace livetalk
