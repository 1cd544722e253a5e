#pragma once

#include "prescient/compensator.hpp"
#include "prescient/controller.hpp"
#include "prescient/netsim.hpp"
#include "prescient/retarget.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace prescient {

// Wire protocol: one JSON object per line in both directions.
//   operator -> robot  {"t": <unix s>, "seq": <n>, "channels": {"hand_x": <m>, ...}}
//                      {"type": "config", "compensation": <bool>}
//   robot -> operator  {"t", "seq", "mode", "q", "points", "tau_f_ms", "task", "alpha"}
//                      {"error": "<message>"}
// Operator and robot share the Unix clock.

struct ServiceConfig {
  DelayProfile network;
  CompensatorConfig compensator;
  ArmControllerConfig controller;
  RetargetConfig retarget;        // operator frame -> robot frame, Cartesian channels
  double feedback_rate = 100.0;   // Hz, at most the control rate
  std::uint64_t seed = 1;         // link delay streams
  std::string host = "127.0.0.1";

  ServiceConfig();
  void validate() const;
};

/// Keys: "network", "compensator", "controller", "retarget", "feedback_rate_hz",
/// "seed", "host", and "compensation" (bool, shortcut for compensator.enabled).
/// Absent keys keep their value in `base`.
ServiceConfig service_config_from_json(const nlohmann::json& j, ServiceConfig base = {});

struct FeedbackFrame {
  std::uint64_t seq = 0;
  double t = 0.0;  // robot clock at the plant tick
  Mode mode = Mode::kDelayed;
  Eigen::VectorXd q;
  std::vector<Eigen::Vector2d> points;  // base, then every link endpoint
  double tau_f = 0.0;                   // s, last measured forward delay
  std::optional<int> task;
  double alpha = 0.0;
};

nlohmann::json to_json(const FeedbackFrame& frame);

/// Counters and logs of one session; safe to copy out while it runs.
struct SessionStats {
  std::uint64_t commands = 0;
  std::uint64_t errors = 0;
  std::uint64_t ticks = 0;
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_dropped = 0;
  std::uint64_t forward_lost = 0;
  double max_blend_excess = 0.0;  // over all ticks, see blend_bound_excess
  std::vector<ModeTransition> transitions;
};

/// Transport-free session: the reader thread feeds lines, the control loop
/// calls `tick` at the control rate and forwards what it returns.
class TeleopSession {
 public:
  TeleopSession(std::vector<TaskModel> library, ServiceConfig config, const Clock& clock);

  /// Queues one received line. Malformed lines become error messages on the
  /// next tick. Thread-safe against `tick`.
  void handle_line(const std::string& line);

  /// One control period at `clock.now()`. Returns the outgoing messages:
  /// error replies and the feedback frames the jitter buffer released.
  std::vector<nlohmann::json> tick();

  SessionStats stats() const;
  const ServiceConfig& config() const { return config_; }

 private:
  struct Command {
    std::uint64_t seq;
    double sent;
    Eigen::VectorXd values;
  };
  struct Toggle {
    bool compensation;
  };
  struct Malformed {
    std::string message;
  };
  using Event = std::variant<Command, Toggle, Malformed>;

  Event parse(const std::string& line) const;

  ServiceConfig config_;
  const Clock& clock_;
  Compensator comp_;
  ArmController arm_;
  Link<Eigen::VectorXd> forward_;
  Link<FeedbackFrame> backward_;
  JitterBuffer<FeedbackFrame> buffer_;
  std::vector<std::string> channel_names_;
  std::vector<bool> cartesian_;
  Eigen::Index hand_x_ = 0, hand_y_ = 1;

  std::mutex inbox_mutex_;
  std::vector<Event> inbox_;

  mutable std::mutex stats_mutex_;
  SessionStats stats_;
  std::optional<TickRecord> prev_record_;
  std::optional<Eigen::Vector2d> prev_ref_;
  std::uint64_t frame_seq_ = 0;
  std::uint64_t tick_count_ = 0;
  int feedback_every_ = 1;
};

/// TCP front end. Serves one client at a time; each session runs a reader,
/// a control loop at the control rate and a writer thread.
class TeleopServer {
 public:
  TeleopServer(std::vector<TaskModel> library, ServiceConfig config);
  ~TeleopServer();
  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  /// Binds and starts accepting. Port 0 picks a free port; returns the bound one.
  std::uint16_t start(std::uint16_t port);
  /// Closes the listener and the active session, then joins every thread.
  void stop();
  /// Blocks until `stop` is called from another thread.
  void wait();

  bool running() const { return running_; }
  std::uint16_t port() const { return port_; }
  /// Statistics of finished sessions, then the active one if any.
  std::vector<SessionStats> sessions() const;

 private:
  void accept_loop();
  void run_session(int fd);

  std::vector<TaskModel> library_;
  ServiceConfig config_;
  WallClock clock_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;

  mutable std::mutex mutex_;
  std::condition_variable stopped_;
  std::vector<SessionStats> finished_;
  std::shared_ptr<TeleopSession> active_;
  int active_fd_ = -1;
};

}  // namespace prescient
