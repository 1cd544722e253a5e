#pragma once

// Small generators shared by the unit tests.

#include "prescient/promp.hpp"
#include "prescient/recognition.hpp"
#include "prescient/trajectory.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace prescient::testing {

inline double min_jerk(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
}

/// Planar point-to-point reach from `start` to `goal` over `duration`, sampled
/// at `rate`, with a via bump of `via` at mid-motion.
inline Trajectory reach(const Eigen::Vector2d& start, const Eigen::Vector2d& goal, double duration, double rate,
                        const Eigen::Vector2d& via = Eigen::Vector2d::Zero(), double t_begin = 0.0) {
  const auto n = static_cast<std::size_t>(std::lround(duration * rate)) + 1;
  std::vector<double> t(n);
  Eigen::MatrixXd v(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) / static_cast<double>(n - 1);
    t[i] = t_begin + s * duration;
    const double bump = 16.0 * s * s * (1.0 - s) * (1.0 - s);
    v.row(static_cast<Eigen::Index>(i)) = (start + min_jerk(s) * (goal - start) + bump * via).transpose();
  }
  return Trajectory(cartesian_channels({"hand_x", "hand_y"}), t, v, rate);
}

/// Repetitions of one reach with jittered duration, via and goal.
inline std::vector<Trajectory> reaches(std::mt19937_64& rng, const Eigen::Vector2d& start, const Eigen::Vector2d& goal,
                                       int count, double duration = 4.0, double duration_sigma = 0.2,
                                       double via_sigma = 0.01) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Trajectory> out;
  for (int i = 0; i < count; ++i) {
    const double d = duration + duration_sigma * n(rng);
    const Eigen::Vector2d via(via_sigma * n(rng), via_sigma * n(rng));
    const Eigen::Vector2d g = goal + Eigen::Vector2d(0.005 * n(rng), 0.005 * n(rng));
    out.push_back(reach(start, g, d, 100.0, via));
  }
  return out;
}



/// Cuts each demonstration to its moving segment, as onset detection sees it.
inline std::vector<Trajectory> segmented(const std::vector<Trajectory>& demos, double threshold = 0.02) {
  std::vector<Trajectory> out;
  for (const auto& d : demos) {
    const auto ext = motion_extent(d, threshold, cartesian_mask(d.channels()));
    out.push_back(ext ? shift_time(slice(d, ext->first, ext->second), -ext->first) : d);
  }
  return out;
}

}  // namespace prescient::testing
