#pragma once

// WebSocket transport for Service: one text frame per protocol message.

#include <memory>
#include <string>
#include <thread>

#include "livetalk/service.hpp"

namespace livetalk {

class WebSocketServer {
 public:
  /// Binds immediately; port 0 picks a free port. Throws Error on bind failure.
  /// Shut the service down before destroying the server: session lanes may
  /// still be sending to its connections.
  WebSocketServer(Service& service, const std::string& host, unsigned short port, std::size_t client_buffer);
  ~WebSocketServer();

  unsigned short port() const;
  /// Serves on the calling thread until stop().
  void run();
  /// Serves on a background thread.
  void start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

}  // namespace livetalk
