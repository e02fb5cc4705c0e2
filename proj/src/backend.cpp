#include "livetalk/backend.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "livetalk/mock_backend.hpp"
#include "livetalk/ngram.hpp"
#include "livetalk/remote_backend.hpp"

namespace livetalk {

double log_sum_exp(std::span<const double> values) {
  double hi = kNegInf;
  for (double v : values) hi = std::max(hi, v);
  if (hi == kNegInf) return kNegInf;
  double sum = 0.0;
  for (double v : values) {
    if (v != kNegInf) sum += std::exp(v - hi);
  }
  return hi + std::log(sum);
}

TableBackend::TableBackend(SharedTokenizer tokenizer) : tokenizer_(std::move(tokenizer)) {}

void TableBackend::set(std::vector<TokenId> prefix, Entry probs) { table_[std::move(prefix)] = std::move(probs); }

void TableBackend::set_default(Entry probs) { default_ = std::move(probs); }

void TableBackend::fill(const Entry& e, TokenDistribution& out) const {
  const std::size_t v = tokenizer_->size();
  out.truncated = false;
  if (e.empty()) {
    out.logp.assign(v, -std::log(static_cast<double>(v)));
    return;
  }
  out.logp.assign(v, kNegInf);
  double total = 0.0;
  for (const auto& [tok, p] : e) total += p;
  for (const auto& [tok, p] : e) {
    if (p > 0.0) out.logp[static_cast<std::size_t>(tok)] = std::log(p / total);
  }
}

void TableBackend::next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const {
  auto it = table_.find(std::vector<TokenId>(prefix.begin(), prefix.end()));
  fill(it == table_.end() ? default_ : it->second, out);
}

FunctionBackend::FunctionBackend(SharedTokenizer tokenizer, Fn fn, std::string name)
    : tokenizer_(std::move(tokenizer)), fn_(std::move(fn)), name_(std::move(name)) {}

void FunctionBackend::next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const {
  out.truncated = false;
  out.logp.assign(tokenizer_->size(), kNegInf);
  fn_(prefix, out);
}

SamplingBackend::SamplingBackend(std::shared_ptr<const Backend> inner, double temperature, double top_p)
    : inner_(std::move(inner)), temperature_(temperature), top_p_(top_p) {
  if (!(temperature_ > 0.0)) throw Error("temperature must be positive");
  if (!(top_p_ > 0.0 && top_p_ <= 1.0)) throw Error("top-p must be in (0, 1]");
}

void SamplingBackend::next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const {
  inner_->next_logprobs(prefix, out);
  auto& lp = out.logp;
  if (temperature_ != 1.0) {
    for (double& v : lp) {
      if (v != kNegInf) v /= temperature_;
    }
  }
  double z = log_sum_exp(lp);
  if (z == kNegInf) return;
  for (double& v : lp) {
    if (v != kNegInf) v -= z;
  }
  if (top_p_ >= 1.0) return;
  std::vector<std::size_t> order(lp.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lp[a] > lp[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size() && lp[order[keep]] != kNegInf) {
    mass += std::exp(lp[order[keep]]);
    ++keep;
    if (mass >= top_p_) break;
  }
  for (std::size_t i = keep; i < order.size(); ++i) lp[order[i]] = kNegInf;
  z = log_sum_exp(lp);
  for (double& v : lp) {
    if (v != kNegInf) v -= z;
  }
}

std::string SamplingBackend::describe() const {
  return inner_->describe() + " (temperature " + std::to_string(temperature_) + ", top-p " +
         std::to_string(top_p_) + ")";
}

PacedBackend::PacedBackend(std::shared_ptr<const Backend> inner, double tokens_per_second)
    : inner_(std::move(inner)),
      period_(std::chrono::nanoseconds(static_cast<std::int64_t>(1e9 / tokens_per_second))) {
  if (!(tokens_per_second > 0.0)) throw Error("pacing rate must be positive");
}

void PacedBackend::next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const {
  const auto until = std::chrono::steady_clock::now() + period_;
  inner_->next_logprobs(prefix, out);
  std::this_thread::sleep_until(until);
}

std::string PacedBackend::describe() const {
  return inner_->describe() + " paced at " + std::to_string(1e9 / static_cast<double>(period_.count())) + " tok/s";
}

void InstrumentedBackend::next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const {
  const auto start = std::chrono::steady_clock::now();
  inner_->next_logprobs(prefix, out);
  busy_ns_ += std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start).count();
  ++calls_;
}

std::shared_ptr<const Backend> make_backend(std::string_view spec) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos) {
    throw Error("backend spec must be mock:FILE, ngram:FILE or remote:URL, got '" + std::string(spec) + "'");
  }
  const std::string_view kind = spec.substr(0, colon);
  const std::string arg(spec.substr(colon + 1));
  if (kind == "mock") return std::make_shared<TemplateBackend>(load_mock_script(arg));
  if (kind == "ngram") return std::make_shared<NgramBackend>(NgramModel::load(arg));
  if (kind == "remote") {
    RemoteConfig cfg = RemoteConfig::from_env();
    if (cfg.base_url.empty()) cfg.base_url = arg;
    return std::make_shared<RemoteBackend>(cfg, std::make_shared<Tokenizer>(Tokenizer::from_spec(cfg.tokenizer)));
  }
  throw Error("unknown backend kind '" + std::string(kind) + "'");
}

}  // namespace livetalk
