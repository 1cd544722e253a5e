#pragma once

#include "prescient/compensator.hpp"
#include "prescient/controller.hpp"
#include "prescient/netsim.hpp"
#include "prescient/promp.hpp"
#include "prescient/trajectory.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace prescient {

/// Planar point-to-point reach used to synthesize demonstrations. Positions
/// are in the robot frame.
struct TaskSpec {
  int task_id = 0;
  Eigen::Vector2d start = Eigen::Vector2d::Zero();
  Eigen::Vector2d goal = Eigen::Vector2d::Zero();
  double duration = 6.0;        // s
  double duration_sigma = 0.3;  // s
  double via_sigma = 0.01;      // m, mid-motion perturbation
  double goal_sigma = 0.005;    // m
  double pre_roll = 2.5;        // s of rest before the motion
  double post_roll = 3.0;       // s of rest after it
  double rate = 100.0;          // Hz
  std::vector<std::string> channels{"hand_x", "hand_y"};
  int repetitions = 16;

  void validate() const;
};

/// 10 s^3 - 15 s^4 + 6 s^5 on [0, 1], clamped outside.
double min_jerk(double s);
/// d/ds of `min_jerk`.
double min_jerk_rate(double s);

/// `spec.repetitions` noisy repetitions, each with its own duration, goal and
/// via perturbation. Deterministic for a given generator state.
std::vector<Trajectory> synth_demos(const TaskSpec& spec, std::mt19937_64& rng);

/// Cuts a recording to its moving segment (same speed rule as online onset
/// detection) and restarts its clock at zero.
Trajectory segment_motion(const Trajectory& traj, double threshold);

/// Per-channel RMS of a(t) - b(t - offset) over the samples of `a` inside
/// `window` whose shifted time lies in b's support. Throws kAlignment when
/// nothing overlaps.
std::vector<double> rms_error(const Trajectory& a, const Trajectory& b, double offset = 0.0,
                              std::optional<std::pair<double, double>> window = std::nullopt);

/// sqrt of the summed per-channel mean squares: Euclidean RMS over channels.
double combined_rms(const std::vector<double>& per_channel);

struct HarnessConfig {
  std::vector<TaskSpec> tasks;
  int train = 6;  // per task; the rest of each task's repetitions is the test set
  int test = 10;
  FitOptions fit;
  DelayProfile network;
  CompensatorConfig compensator;
  ArmControllerConfig controller;
  std::vector<double> sweep_round_trips{0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0};
  std::vector<double> fractions{0.25, 0.5};
  double settle = 0.5;  // s after motion end included in error windows

  void validate() const;
};

/// Two lateral reaches from the desk arm's rest hand position.
HarnessConfig default_harness_config();
HarnessConfig harness_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HarnessConfig& c);

struct Dataset {
  std::vector<std::vector<Trajectory>> train;  // indexed like HarnessConfig::tasks
  std::vector<std::vector<Trajectory>> test;
};

/// Independent generator stream per task; the first `train` repetitions are
/// training data, the next `test` are held out.
Dataset make_dataset(const HarnessConfig& config, std::uint64_t seed);

std::vector<TaskModel> fit_library(const HarnessConfig& config, const std::vector<std::vector<Trajectory>>& train);

/// The library named by config "library" (a JSON file), else one fitted to
/// the training split of the synthetic dataset for `seed`.
std::vector<TaskModel> library_for(const nlohmann::json& config, std::uint64_t seed);

nlohmann::json library_to_json(const std::vector<TaskModel>& library);
std::vector<TaskModel> library_from_json(const nlohmann::json& j);

/// Observation-fraction protocol: for every test motion, predicts the
/// unobserved remainder with the prior of the true task ("no_obs"), after
/// the recognition window, and after each configured fraction; also the
/// fully observed case against the ridge-fit residual of the motion.
nlohmann::json run_prediction_experiment(const HarnessConfig& config, const std::vector<TaskModel>& library,
                                         const std::vector<std::vector<Trajectory>>& test);

/// One simulated teleoperation session of a single operator motion.
struct SessionRun {
  Trajectory reference;          // emitted hand references, robot time
  Trajectory plant;              // plant hand position, robot time
  std::vector<std::string> provenance;
  std::vector<Mode> modes;
  std::vector<ModeTransition> transitions;
  double compensating_from = -1.0;  // robot time Compensating was entered, or -1
  std::uint64_t forward_lost = 0;
  std::uint64_t feedback_dropped = 0;
  std::uint64_t feedback_released = 0;
  double max_kkt = 0.0;
  double max_equality = 0.0;
  double max_box_violation = 0.0;
  std::uint64_t qp_solves = 0;
  int recognized_task = -1;
  std::vector<std::string> revert_reasons;
};

/// Operator stream -> forward link -> compensator -> QP controller -> plant,
/// with the feedback path through the backward link and jitter buffer.
SessionRun simulate_session(const HarnessConfig& config, const std::vector<TaskModel>& library,
                            const Trajectory& motion, const DelayProfile& profile, bool compensation,
                            std::uint64_t seed);

/// Plant driven directly by the undelayed operator stream.
Trajectory ideal_plant(const HarnessConfig& config, const Trajectory& motion);

/// Compensated and uncompensated sessions per test motion at the configured
/// profile, plus the round-trip sweep. `dump_dir`, when set, receives one CSV
/// per session.
nlohmann::json run_compensation_experiment(const HarnessConfig& config, const std::vector<TaskModel>& library,
                                           const std::vector<std::vector<Trajectory>>& test, std::uint64_t seed,
                                           const std::optional<std::filesystem::path>& dump_dir = std::nullopt,
                                           bool sweep = true);

/// Serializes with sorted keys and a trailing newline.
void write_report(const nlohmann::json& report, const std::filesystem::path& path);

/// CLI-level entry points. Each writes `report.json` (and its artifacts) into
/// `out_dir` and returns the report.
nlohmann::json run_synth(const nlohmann::json& config, std::uint64_t seed, const std::filesystem::path& out_dir);
nlohmann::json run_fit(const nlohmann::json& config, std::uint64_t seed, const std::filesystem::path& out_dir);
nlohmann::json run_predict(const nlohmann::json& config, std::uint64_t seed, const std::filesystem::path& out_dir);
nlohmann::json run_compensate(const nlohmann::json& config, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace prescient
