#pragma once

// Time sources and user input delivery for a session.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "livetalk/types.hpp"

namespace livetalk {

struct Input {
  enum class Kind : std::uint8_t { message, retcon, close };

  Kind kind = Kind::message;
  Micros time = 0;   // arrival time; a wall clock overwrites it on receipt
  std::string text;  // message text, or the corrected text of a retcon
  char speaker = 0;  // 0 means the session's user speaker
  std::string tag;   // client reference carried into the trace
  EventId target = 0;                       // retcon: event id, or 0 to use `target_tag`
  std::string target_tag;                   // retcon: tag of an earlier message input
  std::optional<Micros> replacement_time;   // retcon: new time; default keeps the original

  static Input message(Micros time, std::string text, std::string tag = {});
  static Input retcon(Micros time, EventId target, std::string text);
  static Input retcon_tag(Micros time, std::string target_tag, std::string text);
  static Input close(Micros time);
};

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Micros now() = 0;
  /// Accounts for modeled computation time; a wall clock ignores it.
  virtual void spend(Micros modeled) = 0;
  /// Arrival time of the next input that has arrived by now().
  virtual std::optional<Micros> pending() = 0;
  /// Removes the next arrived input.
  virtual std::optional<Input> poll() = 0;
  /// Waits until `deadline` or an earlier input arrival; true on input. An
  /// input arriving exactly at the deadline does not interrupt the wait.
  virtual bool wait_until(Micros deadline) = 0;
  /// Waits for the next input; false when none can ever arrive.
  virtual bool wait_for_input() = 0;
  virtual bool is_virtual() const = 0;
};

/// Scripted inputs on a simulated timeline. Computation advances the clock
/// by its modeled cost; waiting jumps straight to the wake-up time.
class VirtualClock final : public Clock {
 public:
  explicit VirtualClock(std::vector<Input> script, Micros start = 0);

  Micros now() override { return now_; }
  void spend(Micros modeled) override { now_ += modeled; }
  std::optional<Micros> pending() override;
  std::optional<Input> poll() override;
  bool wait_until(Micros deadline) override;
  bool wait_for_input() override;
  bool is_virtual() const override { return true; }

 private:
  std::deque<Input> script_;
  Micros now_;
};

/// Thread-safe queue of live inputs, stamped with their arrival instant.
class InputChannel {
 public:
  using SteadyTime = std::chrono::steady_clock::time_point;

  explicit InputChannel(std::size_t capacity = 1024) : capacity_(capacity) {}
  /// False when the queue is full.
  bool push(Input input);

 private:
  friend class WallClock;
  struct Item {
    Input input;
    SteadyTime arrived;
  };
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Item> items_;
  std::size_t capacity_;
};

/// Real time. Messenger sessions start at the current UTC time, spoken
/// sessions at zero; `origin` overrides either.
class WallClock final : public Clock {
 public:
  WallClock(InputChannel& channel, Format format, std::optional<Micros> origin = std::nullopt);

  Micros now() override;
  void spend(Micros) override {}
  std::optional<Micros> pending() override;
  std::optional<Input> poll() override;
  bool wait_until(Micros deadline) override;
  bool wait_for_input() override;
  bool is_virtual() const override { return false; }

  Micros to_session_time(InputChannel::SteadyTime t) const;

 private:
  InputChannel& channel_;
  Micros origin_;
  InputChannel::SteadyTime start_;
};

/// Current UTC time in microseconds since the epoch.
Micros utc_now();

}  // namespace livetalk
