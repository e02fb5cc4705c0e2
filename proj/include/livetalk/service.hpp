#pragma once

// Session hosting behind a frame-oriented protocol. The transport delivers
// client frames to Service::handle and pushes server frames through each
// client's ClientLink; see docs/protocol.md for the frame fields.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "livetalk/backend.hpp"
#include "livetalk/scheduler.hpp"

namespace livetalk {

/// One connected client as seen by the service.
class ClientLink {
 public:
  virtual ~ClientLink() = default;
  /// Queues one text frame without blocking; false when the client's buffer
  /// is full, after which the service drops the client.
  virtual bool send(std::string frame) = 0;
  /// Ends the connection. Must not call back into the service.
  virtual void close() = 0;
};

using ClientPtr = std::shared_ptr<ClientLink>;

struct ServiceOptions {
  SessionConfig defaults;  // per-session fields a create_session frame may override
  std::filesystem::path log_dir = "logs";
  bool debug = true;              // stream debug frames by default
  std::size_t input_queue = 1024;  // pending inputs per session
};

class Service {
 public:
  Service(ServiceOptions options, std::shared_ptr<const Backend> backend);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Processes one client frame. Never throws; problems become error frames.
  void handle(const ClientPtr& client, std::string_view frame);
  /// Forgets a client whose connection ended.
  void disconnect(const ClientPtr& client);
  /// Closes every session and waits for their lanes to finish.
  void shutdown();

  /// Blocks until the session's lane has finished; false on timeout or an
  /// unknown id.
  bool wait_closed(const std::string& session, std::chrono::milliseconds timeout);
  /// Final or current history of a live session, copied under its lock.
  std::optional<History> history(const std::string& session) const;
  std::vector<std::string> sessions() const;
  std::filesystem::path log_path(const std::string& session) const;

 private:
  struct Hosted;

  void create_session(const ClientPtr& client, const nlohmann::json& frame);
  void attach(const ClientPtr& client, const nlohmann::json& frame);
  void forward(const ClientPtr& client, const nlohmann::json& frame);
  std::shared_ptr<Hosted> session_of(const ClientPtr& client, const nlohmann::json& frame) const;
  std::string new_session_id();
  void drop(Hosted& hosted, const ClientPtr& client);
  void run_lane(std::shared_ptr<Hosted> hosted);
  void on_trace(Hosted& hosted, const TraceRecord& record);
  /// Sends to every client of the session, dropping those that overflow.
  /// Frames with a log sequence number (> 0) are kept for attach replay.
  void publish(Hosted& hosted, std::string frame, std::uint64_t seq);

  ServiceOptions options_;
  std::shared_ptr<const Backend> backend_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Hosted>> sessions_;
  std::map<ClientLink*, std::string> client_session_;
  std::uint64_t counter_ = 0;
  bool stopping_ = false;
};

/// Server frame for one log record: the record's fields plus "type" and "session".
std::string event_frame(const std::string& session, const nlohmann::json& record);
std::string error_frame(const std::string& code, const std::string& message, const nlohmann::json& ref = nullptr);

}  // namespace livetalk
