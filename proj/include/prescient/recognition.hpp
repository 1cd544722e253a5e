#pragma once

#include "prescient/promp.hpp"
#include "prescient/trajectory.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace prescient {

/// One received command sample: sender timestamp, robot arrival time, values.
struct Observation {
  double sent = 0.0;
  double arrival = 0.0;
  Eigen::VectorXd values;
  std::uint64_t seq = 0;
};

/// Observations reassembled in sender-timestamp order.
///
/// `push` may be called from an ingest thread while the control thread calls
/// `sync` and reads `samples`; everything other than `push` belongs to the
/// consumer.
class ObservationBuffer {
 public:
  void push(Observation obs);

  /// Moves pending arrivals into the sorted history. Returns them in arrival order.
  std::vector<Observation> sync();

  const std::vector<Observation>& samples() const { return samples_; }
  /// Drops history with sender timestamps before `sent`.
  void discard_before(double sent);
  void clear();

  std::optional<double> motion_start;

 private:
  std::mutex inbox_mutex_;
  std::vector<Observation> inbox_;
  std::vector<Observation> samples_;
};

/// Per-channel flags selecting which channels count as end-effector signals.
using ChannelMask = std::vector<bool>;

ChannelMask cartesian_mask(const std::vector<Channel>& channels);

/// Sender time of the first sample whose forward-difference speed to the next
/// sample exceeds `threshold` on any masked channel. With `require_rest`,
/// scanning starts only after a pair of samples that is below the threshold on
/// every masked channel.
std::optional<double> detect_motion_start(std::span<const Observation> samples, double threshold,
                                          const ChannelMask& mask, bool require_rest = false);

/// [start, end] of the motion in a recorded trajectory, using the same speed
/// test as `detect_motion_start`. `end` is the later sample of the last moving pair.
std::optional<std::pair<double, double>> motion_extent(const Trajectory& traj, double threshold,
                                                       const ChannelMask& mask);

struct RecognitionResult {
  std::size_t task_index = 0;  // position in the library
  int task_id = 0;
  double score = 0.0;          // summed L1 distance
  double alpha = 1.0;
  double t0 = 0.0;
};

/// L1 distance between observations and the task mean, with phase
/// alpha * (sent - t0) / mean_duration clamped to [0, 1].
double mean_distance(const TaskModel& task, std::span<const Observation> obs, double t0, double alpha);

/// Task whose mean (at its own mean duration) is closest to `obs` in summed L1
/// distance. Ties go to the lowest task id.
RecognitionResult recognize(std::span<const TaskModel> library, std::span<const Observation> obs, double t0);

/// Candidate from the task's recorded modulation set minimizing the L1
/// distance. Ties go to the earliest candidate.
double estimate_alpha(const TaskModel& task, std::span<const Observation> obs, double t0);

enum class Divergence { kWithin, kDiverged };

/// kDiverged iff |value - mean| > std + margin on any masked channel, with the
/// learned marginal evaluated at `phase`.
Divergence divergence_check(const TaskModel& learned, double phase,
                            const Eigen::Ref<const Eigen::VectorXd>& values, double margin,
                            const ChannelMask& mask);

}  // namespace prescient
