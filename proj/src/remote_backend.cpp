#include "livetalk/remote_backend.hpp"

#include <cmath>
#include <cstdlib>

#include "httplib.h"
#include "json.hpp"

namespace livetalk {

namespace {

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : std::move(fallback);
}

}  // namespace

RemoteConfig RemoteConfig::from_env() {
  RemoteConfig c;
  c.base_url = env_or("LIVETALK_REMOTE_URL", "");
  c.path = env_or("LIVETALK_REMOTE_PATH", c.path);
  c.api_key = env_or("LIVETALK_REMOTE_API_KEY", "");
  c.tokenizer = env_or("LIVETALK_REMOTE_TOKENIZER", c.tokenizer);
  c.top_k = std::atoi(env_or("LIVETALK_REMOTE_TOP_K", std::to_string(c.top_k)).c_str());
  return c;
}

RemoteBackend::RemoteBackend(RemoteConfig config, SharedTokenizer tokenizer)
    : config_(std::move(config)), tokenizer_(std::move(tokenizer)) {
  if (config_.base_url.empty()) throw Error("remote backend needs a base URL");
  for (std::size_t i = 0; i < tokenizer_->size(); ++i) {
    piece_ids_.emplace(tokenizer_->piece(static_cast<TokenId>(i)), static_cast<TokenId>(i));
  }
}

void RemoteBackend::parse_response(std::string_view body, TokenDistribution& out) const {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed remote response: ") + e.what());
  }
  if (!j.contains("top_logprobs") || !j["top_logprobs"].is_array()) {
    throw BackendError("malformed remote response: missing top_logprobs array");
  }
  out.truncated = true;
  out.logp.assign(tokenizer_->size(), kNegInf);
  for (const auto& item : j["top_logprobs"]) {
    if (!item.contains("token") || !item.contains("logprob")) {
      throw BackendError("malformed remote response: entries need token and logprob");
    }
    const std::string piece = item["token"].get<std::string>();
    const double lp = item["logprob"].get<double>();
    if (piece.empty()) continue;
    TokenId id;
    if (auto it = piece_ids_.find(piece); it != piece_ids_.end()) {
      id = it->second;
    } else {
      // Pieces outside the local vocabulary contribute to their first local token.
      id = tokenizer_->encode(piece).front();
    }
    double& slot = out.logp[static_cast<std::size_t>(id)];
    slot = slot == kNegInf ? lp : std::max(slot, lp) + std::log1p(std::exp(-std::fabs(slot - lp)));
  }
}

void RemoteBackend::next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const {
  httplib::Client client(config_.base_url);
  const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
  const nlohmann::json req = {{"prompt", tokenizer_->decode(prefix)}, {"top_k", config_.top_k}};
  auto res = client.Post(config_.path, headers, req.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace), "application/json");
  if (!res) throw BackendError("remote backend transport failure: " + httplib::to_string(res.error()));
  if (res->status != 200) throw BackendError("remote backend returned HTTP " + std::to_string(res->status));
  parse_response(res->body, out);
}

}  // namespace livetalk
