#pragma once

#include <unordered_map>

#include "livetalk/backend.hpp"

namespace livetalk {

/// Completion endpoint returning top-k next tokens with log-probabilities.
///
/// Request:  POST {base_url}{path}  {"prompt": "<prefix text>", "top_k": K}
/// Response: {"top_logprobs": [{"token": "<piece>", "logprob": -0.1}, ...]}
struct RemoteConfig {
  std::string base_url;  // e.g. http://127.0.0.1:8080
  std::string path = "/v1/next_token";
  int top_k = 20;
  int timeout_ms = 10000;
  std::string api_key;  // sent as a bearer token when non-empty
  std::string tokenizer = "bytes";

  /// Reads LIVETALK_REMOTE_URL, LIVETALK_REMOTE_PATH, LIVETALK_REMOTE_API_KEY,
  /// LIVETALK_REMOTE_TOP_K and LIVETALK_REMOTE_TOKENIZER.
  static RemoteConfig from_env();
};

class RemoteBackend final : public Backend {
 public:
  RemoteBackend(RemoteConfig config, SharedTokenizer tokenizer);

  const Tokenizer& tokenizer() const override { return *tokenizer_; }
  /// Tokens outside the returned top-k get kNegInf; `truncated` is set.
  void next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const override;
  std::string describe() const override { return "remote(" + config_.base_url + config_.path + ")"; }

  /// Maps a response body onto the vocabulary (exposed for testing).
  void parse_response(std::string_view body, TokenDistribution& out) const;

 private:
  RemoteConfig config_;
  SharedTokenizer tokenizer_;
  std::unordered_map<std::string, TokenId> piece_ids_;
};

}  // namespace livetalk
