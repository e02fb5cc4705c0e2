#pragma once

// Next-token distribution oracles.

#include <atomic>
#include <chrono>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "livetalk/tokenizer.hpp"

namespace livetalk {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Log-probabilities over the whole vocabulary. kNegInf marks tokens with no
/// mass. `truncated` is set when only a top-k subset is known.
struct TokenDistribution {
  std::vector<double> logp;
  bool truncated = false;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

class Backend {
 public:
  virtual ~Backend() = default;

  virtual const Tokenizer& tokenizer() const = 0;
  /// Fills `out.logp` (resized to the vocabulary) for the token after `prefix`.
  virtual void next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const = 0;
  /// Maximum prefix length in tokens.
  virtual std::size_t context_budget() const { return std::numeric_limits<std::size_t>::max(); }
  virtual std::string describe() const = 0;
};

using SharedTokenizer = std::shared_ptr<const Tokenizer>;

/// Token-level script: exact distributions per prefix, with a default.
class TableBackend final : public Backend {
 public:
  using Entry = std::vector<std::pair<TokenId, double>>;  // token, probability

  explicit TableBackend(SharedTokenizer tokenizer);

  void set(std::vector<TokenId> prefix, Entry probs);
  /// Distribution for unscripted prefixes; empty means uniform.
  void set_default(Entry probs);

  const Tokenizer& tokenizer() const override { return *tokenizer_; }
  void next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const override;
  std::string describe() const override { return "table"; }

 private:
  void fill(const Entry& e, TokenDistribution& out) const;

  SharedTokenizer tokenizer_;
  std::map<std::vector<TokenId>, Entry> table_;
  Entry default_;
};

/// Distribution supplied by a callable; the callable must be deterministic.
class FunctionBackend final : public Backend {
 public:
  using Fn = std::function<void(std::span<const TokenId>, TokenDistribution&)>;

  FunctionBackend(SharedTokenizer tokenizer, Fn fn, std::string name = "function");

  const Tokenizer& tokenizer() const override { return *tokenizer_; }
  void next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const override;
  std::string describe() const override { return name_; }

 private:
  SharedTokenizer tokenizer_;
  Fn fn_;
  std::string name_;
};

/// Temperature and nucleus (top-p) reshaping of an inner backend.
class SamplingBackend final : public Backend {
 public:
  SamplingBackend(std::shared_ptr<const Backend> inner, double temperature, double top_p);

  const Tokenizer& tokenizer() const override { return inner_->tokenizer(); }
  void next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const override;
  std::size_t context_budget() const override { return inner_->context_budget(); }
  std::string describe() const override;

 private:
  std::shared_ptr<const Backend> inner_;
  double temperature_;
  double top_p_;
};

/// Wall-clock pacing: every call takes at least 1/rate seconds.
class PacedBackend final : public Backend {
 public:
  PacedBackend(std::shared_ptr<const Backend> inner, double tokens_per_second);

  const Tokenizer& tokenizer() const override { return inner_->tokenizer(); }
  void next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const override;
  std::size_t context_budget() const override { return inner_->context_budget(); }
  std::string describe() const override;

 private:
  std::shared_ptr<const Backend> inner_;
  std::chrono::nanoseconds period_;
};

/// Counts calls and the wall time spent inside the inner backend.
class InstrumentedBackend final : public Backend {
 public:
  explicit InstrumentedBackend(std::shared_ptr<const Backend> inner) : inner_(std::move(inner)) {}

  const Tokenizer& tokenizer() const override { return inner_->tokenizer(); }
  void next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const override;
  std::size_t context_budget() const override { return inner_->context_budget(); }
  std::string describe() const override { return inner_->describe(); }

  std::uint64_t calls() const { return calls_.load(); }
  std::chrono::nanoseconds busy() const { return std::chrono::nanoseconds(busy_ns_.load()); }
  void reset() {
    calls_ = 0;
    busy_ns_ = 0;
  }

 private:
  std::shared_ptr<const Backend> inner_;
  mutable std::atomic<std::uint64_t> calls_{0};
  mutable std::atomic<std::int64_t> busy_ns_{0};
};

/// Limits the visible prefix to the last `budget` tokens' worth of whole
/// events; the engine performs the truncation, this only advertises it.
class BudgetedBackend final : public Backend {
 public:
  BudgetedBackend(std::shared_ptr<const Backend> inner, std::size_t budget)
      : inner_(std::move(inner)), budget_(budget) {}

  const Tokenizer& tokenizer() const override { return inner_->tokenizer(); }
  void next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const override {
    inner_->next_logprobs(prefix, out);
  }
  std::size_t context_budget() const override { return budget_; }
  std::string describe() const override { return inner_->describe(); }

 private:
  std::shared_ptr<const Backend> inner_;
  std::size_t budget_;
};

/// Builds a backend from "mock:FILE", "ngram:FILE" or "remote:URL".
std::shared_ptr<const Backend> make_backend(std::string_view spec);

/// log(sum(exp(v))) over finite entries; kNegInf when none.
double log_sum_exp(std::span<const double> values);

}  // namespace livetalk
