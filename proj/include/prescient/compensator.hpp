#pragma once

#include "prescient/promp.hpp"
#include "prescient/recognition.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace prescient {

enum class Mode { kDelayed, kRecognizing, kBlending, kCompensating, kReverting };
enum class Provenance { kDelayedPassthrough, kBlended, kAnticipated };

const char* to_string(Mode mode);
const char* to_string(Provenance provenance);

/// Whether `from -> to` is an edge of the compensator state graph.
bool is_allowed_transition(Mode from, Mode to);

/// Forward delay of a packet, clock_robot - timestamp_operator, clamped at 0.
/// Each clamp increments `skew_warnings` when it is non-null.
double measure_forward_delay(double sent, double robot_now, std::uint64_t* skew_warnings = nullptr);

/// Phase at which a sample sent at `sent` conditions the primitive:
/// alpha (sent - t0) / mean_duration. Empty for pre-motion samples; values
/// above 1 are clamped and reported through `complete`.
std::optional<double> conditioned_phase(double sent, double t0, double alpha, double mean_duration,
                                        bool* complete = nullptr);

/// Blend weight 1 / (1 + exp(-12 (i / steps - 1/2))).
double blend_weight(int i, int steps);

/// Integer blend length for an initial gap: millimetres for Cartesian
/// channels, tenths of a degree for angular ones; rounded up, at least 1.
int blend_steps(double gap, ChannelKind kind);

/// (1 - beta) from + beta to at counter i.
double blend_step(double from, double to, int i, int steps);

struct ControlReference {
  double time = 0.0;
  Eigen::VectorXd values;
  Provenance provenance = Provenance::kDelayedPassthrough;
  std::vector<double> horizon_times;  // strictly increasing
  Eigen::MatrixXd horizon;            // one row per horizon time
};

struct CompensatorConfig {
  double control_rate = 100.0;            // Hz
  double backward_delay_estimate = 0.75;  // s, deterministic backward delay + jitter buffer
  double recognition_window = 1.0;        // s of sender time after motion onset
  double velocity_threshold = 0.02;       // units/s on end-effector channels
  double cartesian_obs_variance = 1e-4;   // m^2
  double angular_obs_variance = 1e-4;     // rad^2
  double divergence_margin = 0.05;        // m
  std::size_t horizon = 50;               // samples attached to each anticipated reference
  bool enabled = true;
  Eigen::VectorXd initial_reference;      // emitted before the first packet; zeros when empty

  void validate() const;
};

/// Fields absent from `j` keep their value in `base`.
CompensatorConfig compensator_config_from_json(const nlohmann::json& j, CompensatorConfig base = {});

/// Everything the control loop decided on one tick, for logs and checks.
struct TickRecord {
  double time = 0.0;
  Mode mode = Mode::kDelayed;
  Provenance provenance = Provenance::kDelayedPassthrough;
  Eigen::VectorXd delayed;    // latest received value
  Eigen::VectorXd predicted;  // anticipated value; empty outside prediction modes
  Eigen::VectorXd emitted;
  Eigen::VectorXd blend_from;  // blending endpoints; empty outside blend modes
  Eigen::VectorXd blend_to;
  std::vector<int> blend_steps;
  std::vector<int> blend_counters;
  double forward_delay = 0.0;
  int task_id = -1;
  double alpha = 0.0;
  bool motion_complete = false;
};

/// Largest amount, over channels, by which the emitted step from `prev` to
/// `cur` exceeds max(|step delayed|, |step predicted|) + 3/steps |to - from|.
/// Non-positive when every channel respects the bound.
double blend_bound_excess(const TickRecord& prev, const TickRecord& cur);

struct ModeTransition {
  double time = 0.0;
  Mode from = Mode::kDelayed;
  Mode to = Mode::kDelayed;
  std::string reason;
};

/// Delay-compensating reference generator.
///
/// Packets enter through `ingest` (callable from a network thread); the
/// control loop calls `tick` at the control rate and owns all other state.
/// Modes: Delayed -> Recognizing -> Blending -> Compensating, then
/// Compensating (or Blending) -> Reverting -> Delayed on divergence, motion
/// completion or when compensation is switched off.
class Compensator {
 public:
  Compensator(std::vector<TaskModel> library, CompensatorConfig config);

  void ingest(double sent, double arrival, Eigen::VectorXd values, std::uint64_t seq = 0);
  ControlReference tick(double now);

  /// Switching off while predicting reverts smoothly to the delayed stream.
  void set_enabled(bool enabled);
  bool enabled() const { return config_.enabled; }

  Mode mode() const { return mode_; }
  const TickRecord& last_record() const { return record_; }
  const std::vector<ModeTransition>& transitions() const { return transitions_; }
  const std::vector<TaskModel>& library() const { return library_; }
  const CompensatorConfig& config() const { return config_; }
  const std::optional<TaskModel>& posterior() const { return posterior_; }
  std::optional<RecognitionResult> recognition() const { return recognition_; }
  double last_forward_delay() const { return last_forward_delay_; }
  std::uint64_t skew_warnings() const { return skew_warnings_; }
  std::size_t channel_count() const { return channels_.size(); }
  const std::vector<Channel>& channels() const { return channels_; }

  /// Posterior mean evaluated at `t_now + backward delay` (the anticipated
  /// reference), with the following horizon samples. Requires a posterior.
  ControlReference anticipated_reference(double now) const;

  /// Conditions every channel on one observation. Returns false (and leaves
  /// the posterior untouched) for pre-motion or post-motion samples.
  bool condition_on_observation(const Observation& obs);

 private:
  void transition(double now, Mode to, std::string reason);
  void begin_blend(const Eigen::VectorXd& from, const Eigen::VectorXd& to);
  Eigen::VectorXd blend_output(const Eigen::VectorXd& from, const Eigen::VectorXd& to);
  bool blend_finished() const;
  void begin_revert(double now, const Eigen::VectorXd& delayed, std::string reason);
  void start_prediction(double now);
  double observation_variance(std::size_t channel) const;
  Eigen::VectorXd predicted_value(double now);

  std::vector<TaskModel> library_;
  CompensatorConfig config_;
  std::vector<Channel> channels_;
  ChannelMask mask_;
  ObservationBuffer buffer_;

  Mode mode_ = Mode::kDelayed;
  std::optional<RecognitionResult> recognition_;
  std::optional<TaskModel> posterior_;
  double t0_ = 0.0;
  double rearm_after_ = -1e300;
  bool require_rest_ = false;
  bool motion_complete_ = false;
  bool disable_pending_ = false;

  std::vector<int> blend_steps_;
  std::vector<int> blend_counters_;
  Eigen::VectorXd revert_from_;

  ControlReference horizon_ref_;
  std::size_t horizon_used_ = 0;
  bool have_horizon_ = false;

  Eigen::VectorXd last_emitted_;
  double last_forward_delay_ = 0.0;
  std::uint64_t skew_warnings_ = 0;
  TickRecord record_;
  std::vector<ModeTransition> transitions_;
};

}  // namespace prescient
