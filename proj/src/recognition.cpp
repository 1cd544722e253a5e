#include "prescient/recognition.hpp"

#include "prescient/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace prescient {
namespace {

bool pair_moving(double t_a, const Eigen::Ref<const Eigen::VectorXd>& a, double t_b,
                 const Eigen::Ref<const Eigen::VectorXd>& b, double threshold, const ChannelMask& mask) {
  const double dt = t_b - t_a;
  if (!(dt > 0.0)) return false;
  for (Eigen::Index c = 0; c < a.size(); ++c) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(c)]) continue;
    if (std::abs(b(c) - a(c)) / dt > threshold) return true;
  }
  return false;
}

}  // namespace

void ObservationBuffer::push(Observation obs) {
  std::lock_guard lock(inbox_mutex_);
  inbox_.push_back(std::move(obs));
}

std::vector<Observation> ObservationBuffer::sync() {
  std::vector<Observation> fresh;
  {
    std::lock_guard lock(inbox_mutex_);
    fresh.swap(inbox_);
  }
  for (const auto& o : fresh) {
    const auto pos = std::upper_bound(samples_.begin(), samples_.end(), o.sent,
                                      [](double t, const Observation& s) { return t < s.sent; });
    samples_.insert(pos, o);
  }
  return fresh;
}

void ObservationBuffer::discard_before(double sent) {
  const auto pos = std::lower_bound(samples_.begin(), samples_.end(), sent,
                                    [](const Observation& s, double t) { return s.sent < t; });
  samples_.erase(samples_.begin(), pos);
}

void ObservationBuffer::clear() {
  samples_.clear();
  motion_start.reset();
}

ChannelMask cartesian_mask(const std::vector<Channel>& channels) {
  ChannelMask mask;
  mask.reserve(channels.size());
  for (const auto& c : channels) mask.push_back(c.kind == ChannelKind::kCartesian);
  return mask;
}

std::optional<double> detect_motion_start(std::span<const Observation> samples, double threshold,
                                          const ChannelMask& mask, bool require_rest) {
  bool armed = !require_rest;
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const bool moving = pair_moving(samples[i].sent, samples[i].values, samples[i + 1].sent,
                                    samples[i + 1].values, threshold, mask);
    if (!armed) {
      armed = !moving;
      continue;
    }
    if (moving) return samples[i].sent;
  }
  return std::nullopt;
}

std::optional<std::pair<double, double>> motion_extent(const Trajectory& traj, double threshold,
                                                       const ChannelMask& mask) {
  const auto t = traj.times();
  const auto& v = traj.values();
  std::optional<double> start;
  double end = 0.0;
  for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (pair_moving(t[i], v.row(r).transpose(), t[i + 1], v.row(r + 1).transpose(), threshold, mask)) {
      if (!start) start = t[i];
      end = t[i + 1];
    }
  }
  if (!start) return std::nullopt;
  return std::make_pair(*start, end);
}

double mean_distance(const TaskModel& task, std::span<const Observation> obs, double t0, double alpha) {
  double total = 0.0;
  for (const auto& o : obs) {
    if (static_cast<std::size_t>(o.values.size()) != task.channel_count()) {
      fail(ErrorCode::kMalformedInput, "recognition: observation width does not match task channels");
    }
    const double phase = std::clamp(alpha * (o.sent - t0) / task.mean_duration, 0.0, 1.0);
    total += (o.values - task.mean_at(phase)).cwiseAbs().sum();
  }
  return total;
}

RecognitionResult recognize(std::span<const TaskModel> library, std::span<const Observation> obs, double t0) {
  if (library.empty()) fail(ErrorCode::kConfiguration, "recognize: empty task library");
  RecognitionResult best;
  best.score = std::numeric_limits<double>::infinity();
  best.t0 = t0;
  for (std::size_t k = 0; k < library.size(); ++k) {
    const double score = mean_distance(library[k], obs, t0, 1.0);
    const bool better = score < best.score ||
                        (score == best.score && library[k].task_id < best.task_id);
    if (better || k == 0) {
      best.task_index = k;
      best.task_id = library[k].task_id;
      best.score = score;
    }
  }
  return best;
}

double estimate_alpha(const TaskModel& task, std::span<const Observation> obs, double t0) {
  if (task.alphas.empty()) fail(ErrorCode::kModel, "estimate_alpha: empty time-modulation set");
  double best_alpha = task.alphas.front();
  double best_score = std::numeric_limits<double>::infinity();
  for (double a : task.alphas) {
    const double score = mean_distance(task, obs, t0, a);
    if (score < best_score) {
      best_score = score;
      best_alpha = a;
    }
  }
  return best_alpha;
}

Divergence divergence_check(const TaskModel& learned, double phase,
                            const Eigen::Ref<const Eigen::VectorXd>& values, double margin,
                            const ChannelMask& mask) {
  for (std::size_t c = 0; c < learned.channel_count(); ++c) {
    if (!mask.empty() && !mask[c]) continue;
    const Marginal m = learned.channels[c].promp.marginal(phase);
    if (std::abs(values(static_cast<Eigen::Index>(c)) - m.mean) > std::sqrt(m.variance) + margin) {
      return Divergence::kDiverged;
    }
  }
  return Divergence::kWithin;
}

}  // namespace prescient
