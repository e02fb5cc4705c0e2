#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "livetalk/backend.hpp"

namespace livetalk {

/// Token n-gram counts with add-alpha smoothing.
///
/// The next-token distribution uses the longest context (at most `order`
/// previous tokens) that occurred in training:
///   P(w | h) = (c(h, w) + alpha) / (c(h) + alpha * V)
/// backing off to shorter contexts when h was never seen. Order 0 is the
/// unigram distribution, so every prefix has a defined distribution.
class NgramModel {
 public:
  NgramModel() = default;
  NgramModel(SharedTokenizer tokenizer, int order, double alpha);

  /// Counts every n-gram of orders 0..order inside each document.
  void add_document(std::span<const TokenId> tokens);
  static NgramModel train(SharedTokenizer tokenizer, const std::vector<std::vector<TokenId>>& documents,
                          int order, double alpha);

  void logprobs(std::span<const TokenId> prefix, std::vector<double>& out) const;
  double logprob(std::span<const TokenId> prefix, TokenId next) const;

  int order() const { return order_; }
  double alpha() const { return alpha_; }
  std::uint64_t token_count() const { return tokens_seen_; }
  const Tokenizer& tokenizer() const { return *tokenizer_; }
  const SharedTokenizer& shared_tokenizer() const { return tokenizer_; }

  void save(const std::filesystem::path& path) const;
  static NgramModel load(const std::filesystem::path& path);

 private:
  struct Counts {
    std::uint64_t total = 0;
    std::unordered_map<TokenId, std::uint64_t> next;
  };

  static std::string key(std::span<const TokenId> context);
  const Counts* find(std::span<const TokenId> context) const;

  SharedTokenizer tokenizer_;
  int order_ = 1;
  double alpha_ = 1.0;
  std::uint64_t tokens_seen_ = 0;
  std::unordered_map<std::string, Counts> counts_;
};

class NgramBackend final : public Backend {
 public:
  explicit NgramBackend(NgramModel model) : model_(std::move(model)) {}

  const Tokenizer& tokenizer() const override { return model_.tokenizer(); }
  void next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const override;
  std::string describe() const override;

  const NgramModel& model() const { return model_; }

 private:
  NgramModel model_;
};

}  // namespace livetalk
