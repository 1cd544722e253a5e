#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace prescient {

enum class ChannelKind { kCartesian, kAngular };

const char* to_string(ChannelKind kind);
ChannelKind channel_kind_from_string(std::string_view s);

struct Channel {
  std::string name;
  ChannelKind kind = ChannelKind::kCartesian;
  std::string unit = "m";

  bool operator==(const Channel&) const = default;
};

std::vector<Channel> cartesian_channels(const std::vector<std::string>& names);

inline constexpr std::size_t kDefaultPhaseSamples = 100;

/// Timestamped multi-channel signal. Rows of `values()` are samples, columns
/// are channels. Timestamps are strictly increasing.
class Trajectory {
 public:
  Trajectory() = default;
  /// `rate` <= 0 infers the nominal rate from the sample spacing.
  Trajectory(std::vector<Channel> channels, std::vector<double> times,
             Eigen::MatrixXd values, double rate = 0.0);

  std::size_t size() const { return times_.size(); }
  bool empty() const { return times_.empty(); }
  std::size_t channel_count() const { return channels_.size(); }
  const std::vector<Channel>& channels() const { return channels_; }
  std::span<const double> times() const { return times_; }
  const Eigen::MatrixXd& values() const { return values_; }
  double rate() const { return rate_; }

  double start_time() const { return times_.front(); }
  double end_time() const { return times_.back(); }
  double duration() const { return times_.back() - times_.front(); }

  Eigen::VectorXd sample(std::size_t i) const { return values_.row(i).transpose(); }

  /// Linear interpolation; clamps to the boundary samples outside the support.
  Eigen::VectorXd at(double t) const;
  double at(double t, std::size_t channel) const;

  /// Index of the named channel, or -1.
  int channel_index(std::string_view name) const;

 private:
  std::vector<Channel> channels_;
  std::vector<double> times_;
  Eigen::MatrixXd values_;
  double rate_ = 0.0;
};

/// Trajectory resampled onto a uniform phase grid in [0, 1].
struct PhasedTrajectory {
  std::vector<Channel> channels;
  Eigen::VectorXd phase;   // S entries, phase(0) == 0, phase(S-1) == 1
  Eigen::MatrixXd values;  // S x N
  double duration = 0.0;   // seconds spanned by the source trajectory

  std::size_t size() const { return static_cast<std::size_t>(phase.size()); }
};

PhasedTrajectory to_phase(const Trajectory& traj,
                          std::size_t samples = kDefaultPhaseSamples);

/// Central differences in the interior, one-sided at the endpoints.
Trajectory derivative(const Trajectory& traj);

/// Samples in [t_begin, t_end], with both endpoints interpolated in.
Trajectory slice(const Trajectory& traj, double t_begin, double t_end);

/// Shifts every timestamp by `offset` seconds.
Trajectory shift_time(const Trajectory& traj, double offset);

/// Piecewise-linear interpolation of `ys` at `t`, clamped outside [xs.front(), xs.back()].
double interpolate(std::span<const double> xs, const Eigen::Ref<const Eigen::VectorXd>& ys,
                   double t);

}  // namespace prescient
