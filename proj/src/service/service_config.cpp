#include "livetalk/service_config.hpp"

#include "CLI11.hpp"
#include "livetalk/duration.hpp"

namespace livetalk {

void bind_service_options(CLI::App& app, ServiceConfig& c) {
  app.set_config("--config", "", "Flat key = value file; flags given on the command line win");
  app.add_option("--host", c.host, "Bind address")->capture_default_str();
  app.add_option("--port", c.port, "Bind port, 0 picks a free one")->capture_default_str();
  app.add_option("--backend", c.backend, "mock:FILE, ngram:FILE or remote:URL")->required();
  app.add_option("--format", c.format, "messenger or spoken")
      ->check(CLI::IsMember({"messenger", "spoken"}))
      ->capture_default_str();
  app.add_option("--t-react", c.t_react, "Reaction window, e.g. 200ms")->capture_default_str();
  app.add_option("--seed", c.seed, "Base sampling seed")->capture_default_str();
  app.add_flag("--speculation,!--no-speculation", c.speculation, "Reuse drafts across user input");
  app.add_option("--user-speaker", c.user_speaker, "Speaker letter of the human")->capture_default_str();
  app.add_option("--log-dir", c.log_dir, "Directory for session logs")->capture_default_str();
  app.add_option("--client-buffer", c.client_buffer, "Frames queued per client before it is dropped")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("--debug,!--no-debug", c.debug, "Stream scheduler decisions as debug frames");
  app.add_option("--max-message-tokens", c.max_message_tokens, "Cap on generated message length")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--pace", c.pace, "Tokens per second imposed on the backend, 0 for none")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
}

ServiceOptions to_service_options(const ServiceConfig& c) {
  ServiceOptions o;
  o.defaults.format = parse_format(c.format);
  if (c.user_speaker.size() != 1 || !valid_speaker(c.user_speaker[0], o.defaults.format)) {
    throw Error("user speaker '" + c.user_speaker + "' is not valid for " + c.format);
  }
  o.defaults.user_speaker = c.user_speaker[0];
  o.defaults.t_react = parse_duration(c.t_react);
  o.defaults.seed = c.seed;
  o.defaults.speculation = c.speculation;
  o.defaults.limits.max_message_tokens = c.max_message_tokens;
  o.log_dir = c.log_dir;
  o.debug = c.debug;
  return o;
}

std::shared_ptr<const Backend> make_service_backend(const ServiceConfig& c) {
  auto backend = make_backend(c.backend);
  if (c.pace > 0) backend = std::make_shared<PacedBackend>(std::move(backend), c.pace);
  return backend;
}

}  // namespace livetalk
