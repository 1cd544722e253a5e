#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <queue>
#include <random>
#include <tuple>
#include <utility>
#include <vector>

namespace prescient {

class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() const = 0;
};

/// Virtual time, advanced only by its owner (normally a Scheduler).
class SimClock final : public Clock {
 public:
  explicit SimClock(double start = 0.0) : now_(start) {}
  double now() const override { return now_; }
  void advance_to(double t);

 private:
  double now_;
};

/// Unix time in seconds. Operator and robot share it, which stands in for
/// NTP-synchronized clocks.
class WallClock final : public Clock {
 public:
  double now() const override;
};

/// Stochastic forward delay, constant backward delay and a fixed-length
/// jitter buffer. All values in seconds.
struct DelayProfile {
  double forward_mean = 0.75;
  double forward_sigma = 0.1;
  double backward = 0.75;
  double backward_sigma = 0.0;
  double jitter_buffer = 0.0;
  double loss = 0.0;

  /// Forward mean and backward delay of rtt / 2, jitter (2/15) of the forward mean.
  static DelayProfile from_round_trip(double round_trip);
  void validate() const;
  /// Backward delay seen by the operator: deterministic part plus buffer length.
  double backward_total() const { return backward + jitter_buffer; }
  double round_trip() const { return forward_mean + backward_total(); }
};

/// JSON uses milliseconds: {tau_f_ms, sigma_ms, tau_b_ms, jitter_buffer_ms, loss}.
/// A missing sigma_ms defaults to 2/15 of tau_f_ms.
DelayProfile delay_profile_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DelayProfile& p);

inline constexpr double kMinStochasticDelay = 1e-3;

/// mean + N(0, sigma) truncated below at 1 ms; exactly `mean` when sigma == 0.
double sample_delay(double mean, double sigma, std::mt19937_64& rng);
double sample_forward_delay(const DelayProfile& profile, std::mt19937_64& rng);

/// Independent seed for a named stream derived from a base seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

template <class Payload>
struct Packet {
  std::uint64_t seq = 0;
  double sent = 0.0;
  Payload payload{};
};

template <class Payload>
struct Delivery {
  Packet<Payload> packet;
  double arrival = 0.0;
};

/// Unreliable, unordered one-way link. Every packet draws its own delay at
/// send time; lost packets vanish silently. Safe for one sending and one
/// polling thread.
template <class Payload>
class Link {
 public:
  Link(double mean_delay, double sigma, double loss, std::uint64_t seed)
      : mean_(mean_delay), sigma_(sigma), loss_(loss), rng_(seed) {}

  /// Returns the scheduled arrival time, or nullopt when the packet is lost.
  std::optional<double> send(Packet<Payload> packet, double now) {
    std::lock_guard lock(mutex_);
    ++sent_;
    const double delay = sample_delay(mean_, sigma_, rng_);
    if (loss_ > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < loss_) {
      ++lost_;
      return std::nullopt;
    }
    return enqueue(std::move(packet), now + delay);
  }

  /// Bypasses the delay law; used by scripted scenarios.
  double send_with_delay(Packet<Payload> packet, double now, double delay) {
    std::lock_guard lock(mutex_);
    ++sent_;
    return enqueue(std::move(packet), now + delay);
  }

  /// Everything with arrival <= now, in arrival order.
  std::vector<Delivery<Payload>> poll(double now) {
    std::lock_guard lock(mutex_);
    std::vector<Delivery<Payload>> out;
    auto it = in_flight_.begin();
    while (it != in_flight_.end() && it->first.first <= now) {
      out.push_back({std::move(it->second), it->first.first});
      it = in_flight_.erase(it);
    }
    return out;
  }

  std::size_t in_flight() const {
    std::lock_guard lock(mutex_);
    return in_flight_.size();
  }
  std::uint64_t sent_count() const {
    std::lock_guard lock(mutex_);
    return sent_;
  }
  std::uint64_t lost_count() const {
    std::lock_guard lock(mutex_);
    return lost_;
  }

 private:
  double enqueue(Packet<Payload> packet, double arrival) {
    in_flight_.emplace(std::make_pair(arrival, order_++), std::move(packet));
    return arrival;
  }

  double mean_;
  double sigma_;
  double loss_;
  std::mt19937_64 rng_;
  mutable std::mutex mutex_;
  std::map<std::pair<double, std::uint64_t>, Packet<Payload>> in_flight_;
  std::uint64_t order_ = 0;
  std::uint64_t sent_ = 0;
  std::uint64_t lost_ = 0;
};

template <class Payload>
struct Released {
  Packet<Payload> packet;
  double release = 0.0;
};

/// Receiver-side buffer turning a jittery link into a constant delay: a
/// packet sent at s is released at s + base_delay + length if it arrived by
/// then, otherwise it is dropped. Releases come out in sequence order.
template <class Payload>
class JitterBuffer {
 public:
  JitterBuffer(double base_delay, double length) : base_(base_delay), length_(length) {}

  double total_delay() const { return base_ + length_; }

  /// False when the packet is too late (or older than something already released).
  bool push(Packet<Payload> packet, double arrival) {
    std::lock_guard lock(mutex_);
    const double release = packet.sent + base_ + length_;
    if (arrival > release + kSlack || (released_any_ && packet.seq <= last_released_seq_)) {
      ++dropped_;
      return false;
    }
    pending_.emplace(std::make_pair(release, packet.seq), std::move(packet));
    return true;
  }

  std::vector<Released<Payload>> pop(double now) {
    std::lock_guard lock(mutex_);
    std::vector<Released<Payload>> out;
    auto it = pending_.begin();
    while (it != pending_.end() && it->first.first <= now + kSlack) {
      last_released_seq_ = it->second.seq;
      released_any_ = true;
      out.push_back({std::move(it->second), it->first.first});
      it = pending_.erase(it);
      ++released_;
    }
    return out;
  }

  std::uint64_t dropped() const {
    std::lock_guard lock(mutex_);
    return dropped_;
  }
  std::uint64_t released() const {
    std::lock_guard lock(mutex_);
    return released_;
  }

 private:
  // Absorbs floating-point noise in `sent + delay` sums.
  static constexpr double kSlack = 1e-9;

  double base_;
  double length_;
  mutable std::mutex mutex_;
  std::map<std::pair<double, std::uint64_t>, Packet<Payload>> pending_;
  std::uint64_t last_released_seq_ = 0;
  bool released_any_ = false;
  std::uint64_t dropped_ = 0;
  std::uint64_t released_ = 0;
};

/// Discrete-event scheduler over a SimClock. Events at equal times run in
/// ascending priority, then insertion order.
class Scheduler {
 public:
  explicit Scheduler(SimClock& clock) : clock_(clock) {}

  void at(double t, int priority, std::function<void()> fn);
  /// Runs `fn(k)` at start + k * period for k = 0, 1, ... while the time is <= until.
  void every(double start, double period, double until, int priority, std::function<void(std::uint64_t)> fn);
  /// Executes all events with time <= t_end, then advances the clock to t_end.
  void run_until(double t_end);
  std::size_t pending() const { return queue_.size(); }

 private:
  struct Event {
    double t;
    int priority;
    std::uint64_t order;
    std::function<void()> fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return std::tie(a.t, a.priority, a.order) > std::tie(b.t, b.priority, b.order);
    }
  };

  SimClock& clock_;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::uint64_t order_ = 0;
};

}  // namespace prescient
