#include "livetalk/clock.hpp"

#include <algorithm>

namespace livetalk {

Input Input::message(Micros time, std::string text, std::string tag) {
  Input in;
  in.kind = Kind::message;
  in.time = time;
  in.text = std::move(text);
  in.tag = std::move(tag);
  return in;
}

Input Input::retcon(Micros time, EventId target, std::string text) {
  Input in;
  in.kind = Kind::retcon;
  in.time = time;
  in.target = target;
  in.text = std::move(text);
  return in;
}

Input Input::retcon_tag(Micros time, std::string target_tag, std::string text) {
  Input in;
  in.kind = Kind::retcon;
  in.time = time;
  in.target_tag = std::move(target_tag);
  in.text = std::move(text);
  return in;
}

Input Input::close(Micros time) {
  Input in;
  in.kind = Kind::close;
  in.time = time;
  return in;
}

VirtualClock::VirtualClock(std::vector<Input> script, Micros start) : now_(start) {
  std::stable_sort(script.begin(), script.end(), [](const Input& a, const Input& b) { return a.time < b.time; });
  script_.assign(script.begin(), script.end());
}

std::optional<Micros> VirtualClock::pending() {
  if (script_.empty() || script_.front().time > now_) return std::nullopt;
  return script_.front().time;
}

std::optional<Input> VirtualClock::poll() {
  if (!pending()) return std::nullopt;
  Input in = std::move(script_.front());
  script_.pop_front();
  return in;
}

bool VirtualClock::wait_until(Micros deadline) {
  if (!script_.empty() && script_.front().time < deadline) {
    now_ = std::max(now_, script_.front().time);
    return true;
  }
  now_ = std::max(now_, deadline);
  return false;
}

bool VirtualClock::wait_for_input() {
  if (script_.empty()) return false;
  now_ = std::max(now_, script_.front().time);
  return true;
}

bool InputChannel::push(Input input) {
  {
    std::lock_guard lock(mu_);
    if (items_.size() >= capacity_) return false;
    items_.push_back({std::move(input), std::chrono::steady_clock::now()});
  }
  cv_.notify_all();
  return true;
}

Micros utc_now() {
  return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

WallClock::WallClock(InputChannel& channel, Format format, std::optional<Micros> origin)
    : channel_(channel),
      origin_(origin ? *origin : (format == Format::messenger ? utc_now() : 0)),
      start_(std::chrono::steady_clock::now()) {}

Micros WallClock::to_session_time(InputChannel::SteadyTime t) const {
  return origin_ + std::chrono::duration_cast<std::chrono::microseconds>(t - start_).count();
}

Micros WallClock::now() { return to_session_time(std::chrono::steady_clock::now()); }

std::optional<Micros> WallClock::pending() {
  std::lock_guard lock(channel_.mu_);
  if (channel_.items_.empty()) return std::nullopt;
  return to_session_time(channel_.items_.front().arrived);
}

std::optional<Input> WallClock::poll() {
  std::lock_guard lock(channel_.mu_);
  if (channel_.items_.empty()) return std::nullopt;
  auto item = std::move(channel_.items_.front());
  channel_.items_.pop_front();
  item.input.time = to_session_time(item.arrived);
  return std::move(item.input);
}

bool WallClock::wait_until(Micros deadline) {
  const auto until = start_ + std::chrono::microseconds(deadline - origin_);
  std::unique_lock lock(channel_.mu_);
  return channel_.cv_.wait_until(lock, until, [&] { return !channel_.items_.empty(); });
}

bool WallClock::wait_for_input() {
  std::unique_lock lock(channel_.mu_);
  channel_.cv_.wait(lock, [&] { return !channel_.items_.empty(); });
  return true;
}

}  // namespace livetalk
