#include "livetalk/ngram.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace livetalk {

namespace {
constexpr std::string_view kMagic = "livetalk-ngram";
constexpr int kVersion = 1;
}  // namespace

NgramModel::NgramModel(SharedTokenizer tokenizer, int order, double alpha)
    : tokenizer_(std::move(tokenizer)), order_(order), alpha_(alpha) {
  if (order_ < 0) throw Error("n-gram order must be non-negative");
  if (!(alpha_ >= 0.0)) throw Error("n-gram alpha must be non-negative");
}

std::string NgramModel::key(std::span<const TokenId> context) {
  return std::string(reinterpret_cast<const char*>(context.data()), context.size() * sizeof(TokenId));
}

const NgramModel::Counts* NgramModel::find(std::span<const TokenId> context) const {
  auto it = counts_.find(key(context));
  return it == counts_.end() ? nullptr : &it->second;
}

void NgramModel::add_document(std::span<const TokenId> tokens) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (int n = 0; n <= order_ && static_cast<std::size_t>(n) <= i; ++n) {
      Counts& c = counts_[key(tokens.subspan(i - static_cast<std::size_t>(n), static_cast<std::size_t>(n)))];
      ++c.total;
      ++c.next[tokens[i]];
    }
  }
  tokens_seen_ += tokens.size();
}

NgramModel NgramModel::train(SharedTokenizer tokenizer, const std::vector<std::vector<TokenId>>& documents,
                             int order, double alpha) {
  NgramModel m(std::move(tokenizer), order, alpha);
  for (const auto& d : documents) m.add_document(d);
  if (m.tokens_seen_ == 0) throw Error("cannot train an n-gram model on an empty corpus");
  return m;
}

void NgramModel::logprobs(std::span<const TokenId> prefix, std::vector<double>& out) const {
  const std::size_t v = tokenizer_->size();
  const std::size_t longest = std::min(prefix.size(), static_cast<std::size_t>(order_));
  for (std::size_t n = longest + 1; n-- > 0;) {
    const Counts* c = find(prefix.subspan(prefix.size() - n, n));
    if (!c || c->total == 0) continue;
    const double denom = static_cast<double>(c->total) + alpha_ * static_cast<double>(v);
    const double floor = alpha_ > 0.0 ? std::log(alpha_ / denom) : kNegInf;
    out.assign(v, floor);
    for (const auto& [tok, count] : c->next) {
      out[static_cast<std::size_t>(tok)] = std::log((static_cast<double>(count) + alpha_) / denom);
    }
    return;
  }
  out.assign(v, -std::log(static_cast<double>(v)));
}

double NgramModel::logprob(std::span<const TokenId> prefix, TokenId next) const {
  std::vector<double> lp;
  logprobs(prefix, lp);
  return lp[static_cast<std::size_t>(next)];
}

void NgramModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write n-gram model " + path.string());
  out << kMagic << ' ' << kVersion << '\n';
  out << "order " << order_ << '\n';
  out.precision(17);
  out << "alpha " << alpha_ << '\n';
  out << "tokenizer " << tokenizer_->spec() << '\n';
  out << "vocab " << tokenizer_->size() << '\n';
  out << "tokens " << tokens_seen_ << '\n';
  std::size_t lines = 0;
  for (const auto& [k, c] : counts_) lines += c.next.size();
  out << "counts " << lines << '\n';
  for (const auto& [k, c] : counts_) {
    const std::size_t n = k.size() / sizeof(TokenId);
    const auto* ctx = reinterpret_cast<const TokenId*>(k.data());
    for (const auto& [tok, count] : c.next) {
      out << n;
      for (std::size_t i = 0; i < n; ++i) out << ' ' << ctx[i];
      out << ' ' << tok << ' ' << count << '\n';
    }
  }
}

NgramModel NgramModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open n-gram model " + path.string());
  auto fail = [&](const std::string& why) { return Error("bad n-gram model " + path.string() + ": " + why); };
  std::string magic, field;
  int version = 0;
  if (!(in >> magic >> version) || magic != kMagic) throw fail("missing header");
  if (version != kVersion) throw fail("unsupported version " + std::to_string(version));
  int order = 0;
  double alpha = 0.0;
  std::string tokenizer_spec;
  std::size_t vocab = 0, lines = 0;
  std::uint64_t tokens = 0;
  if (!(in >> field >> order) || field != "order") throw fail("missing order");
  if (!(in >> field >> alpha) || field != "alpha") throw fail("missing alpha");
  if (!(in >> field) || field != "tokenizer") throw fail("missing tokenizer");
  in >> std::ws;
  std::getline(in, tokenizer_spec);
  if (!(in >> field >> vocab) || field != "vocab") throw fail("missing vocab");
  if (!(in >> field >> tokens) || field != "tokens") throw fail("missing token count");
  if (!(in >> field >> lines) || field != "counts") throw fail("missing counts");
  auto tok = std::make_shared<Tokenizer>(Tokenizer::from_spec(tokenizer_spec));
  if (tok->size() != vocab) throw fail("vocabulary size mismatch");
  NgramModel m(tok, order, alpha);
  m.tokens_seen_ = tokens;
  std::vector<TokenId> ctx;
  for (std::size_t l = 0; l < lines; ++l) {
    std::size_t n = 0;
    if (!(in >> n) || n > static_cast<std::size_t>(order)) throw fail("bad count line " + std::to_string(l));
    ctx.resize(n);
    for (auto& t : ctx) in >> t;
    TokenId next = 0;
    std::uint64_t count = 0;
    if (!(in >> next >> count)) throw fail("truncated count line " + std::to_string(l));
    if (next < 0 || static_cast<std::size_t>(next) >= vocab) throw fail("token id out of range");
    Counts& c = m.counts_[key(ctx)];
    c.total += count;
    c.next[next] += count;
  }
  return m;
}

void NgramBackend::next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const {
  out.truncated = false;
  model_.logprobs(prefix, out.logp);
}

std::string NgramBackend::describe() const {
  std::ostringstream os;
  os << "ngram(order " << model_.order() << ", alpha " << model_.alpha() << ", " << model_.tokenizer().spec() << ")";
  return os.str();
}

}  // namespace livetalk
