#pragma once

// Settings for `livetalk serve`: command-line flags over a flat key = value
// config file over built-in defaults.

#include <string>

#include "livetalk/service.hpp"

namespace CLI {
class App;
}

namespace livetalk {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  unsigned short port = 8765;
  std::string backend;  // mock:FILE, ngram:FILE or remote:URL
  std::string format = "messenger";
  std::string t_react = "200ms";
  std::uint64_t seed = 0;
  bool speculation = false;
  std::string user_speaker = "A";
  std::string log_dir = "logs";
  std::size_t client_buffer = 1024;  // queued frames per client before it is dropped
  bool debug = true;
  std::size_t max_message_tokens = 64;
  double pace = 0.0;  // tokens per second imposed on the backend; 0 is unpaced
};

/// Registers the flags and a --config file option on `app`.
void bind_service_options(CLI::App& app, ServiceConfig& config);

/// Validated session defaults; throws Error on bad values.
ServiceOptions to_service_options(const ServiceConfig& config);

/// The configured backend, paced when `pace` is set.
std::shared_ptr<const Backend> make_service_backend(const ServiceConfig& config);

}  // namespace livetalk
