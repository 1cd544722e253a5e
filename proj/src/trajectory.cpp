#include "prescient/trajectory.hpp"

#include "prescient/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace prescient {

const char* to_string(ChannelKind kind) {
  return kind == ChannelKind::kAngular ? "angular-rad" : "cartesian-m";
}

ChannelKind channel_kind_from_string(std::string_view s) {
  if (s == "angular-rad" || s == "angular") return ChannelKind::kAngular;
  if (s == "cartesian-m" || s == "cartesian") return ChannelKind::kCartesian;
  fail(ErrorCode::kParse, "unknown channel kind '" + std::string(s) + "'");
}

std::vector<Channel> cartesian_channels(const std::vector<std::string>& names) {
  std::vector<Channel> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back({n, ChannelKind::kCartesian, "m"});
  return out;
}

Trajectory::Trajectory(std::vector<Channel> channels, std::vector<double> times,
                       Eigen::MatrixXd values, double rate)
    : channels_(std::move(channels)), times_(std::move(times)), values_(std::move(values)) {
  if (static_cast<std::size_t>(values_.rows()) != times_.size()) {
    fail(ErrorCode::kMalformedInput, "trajectory: sample count does not match timestamp count");
  }
  if (static_cast<std::size_t>(values_.cols()) != channels_.size()) {
    std::ostringstream os;
    os << "trajectory: sample width " << values_.cols() << " != channel count "
       << channels_.size();
    fail(ErrorCode::kMalformedInput, os.str());
  }
  for (std::size_t i = 1; i < times_.size(); ++i) {
    if (!(times_[i] > times_[i - 1])) {
      std::ostringstream os;
      os << "trajectory: timestamps not strictly increasing at sample " << i;
      fail(ErrorCode::kMalformedInput, os.str());
    }
  }
  if (rate > 0.0) {
    rate_ = rate;
  } else if (times_.size() >= 2) {
    rate_ = static_cast<double>(times_.size() - 1) / (times_.back() - times_.front());
  } else {
    rate_ = 1.0;
  }
}

double interpolate(std::span<const double> xs, const Eigen::Ref<const Eigen::VectorXd>& ys,
                   double t) {
  const std::size_t n = xs.size();
  if (n == 0) fail(ErrorCode::kMalformedInput, "interpolate: empty support");
  if (t <= xs.front()) return ys(0);
  if (t >= xs.back()) return ys(static_cast<Eigen::Index>(n - 1));
  const auto it = std::upper_bound(xs.begin(), xs.end(), t);
  const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
  const std::size_t lo = hi - 1;
  const double w = (t - xs[lo]) / (xs[hi] - xs[lo]);
  return (1.0 - w) * ys(static_cast<Eigen::Index>(lo)) + w * ys(static_cast<Eigen::Index>(hi));
}

Eigen::VectorXd Trajectory::at(double t) const {
  Eigen::VectorXd out(values_.cols());
  for (Eigen::Index c = 0; c < values_.cols(); ++c) out(c) = interpolate(times_, values_.col(c), t);
  return out;
}

double Trajectory::at(double t, std::size_t channel) const {
  return interpolate(times_, values_.col(static_cast<Eigen::Index>(channel)), t);
}

int Trajectory::channel_index(std::string_view name) const {
  for (std::size_t i = 0; i < channels_.size(); ++i) {
    if (channels_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

PhasedTrajectory to_phase(const Trajectory& traj, std::size_t samples) {
  if (traj.size() < 2) fail(ErrorCode::kMalformedInput, "to_phase: need at least 2 samples");
  if (samples < 2) fail(ErrorCode::kInvalidArgument, "to_phase: need at least 2 phase samples");

  PhasedTrajectory out;
  out.channels = traj.channels();
  out.duration = traj.duration();
  out.phase = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(samples), 0.0, 1.0);
  out.values.resize(static_cast<Eigen::Index>(samples), static_cast<Eigen::Index>(traj.channel_count()));
  const double t0 = traj.start_time();
  for (Eigen::Index i = 0; i < out.phase.size(); ++i) {
    // Pin the last grid point to the final timestamp to avoid roundoff past the end.
    const double t = (i + 1 == out.phase.size()) ? traj.end_time() : t0 + out.phase(i) * out.duration;
    out.values.row(i) = traj.at(t).transpose();
  }
  return out;
}

Trajectory derivative(const Trajectory& traj) {
  const std::size_t n = traj.size();
  if (n < 2) fail(ErrorCode::kMalformedInput, "derivative: need at least 2 samples");
  const auto t = traj.times();
  const auto& y = traj.values();
  Eigen::MatrixXd d(y.rows(), y.cols());
  d.row(0) = (y.row(1) - y.row(0)) / (t[1] - t[0]);
  const auto last = static_cast<Eigen::Index>(n - 1);
  d.row(last) = (y.row(last) - y.row(last - 1)) / (t[n - 1] - t[n - 2]);
  for (Eigen::Index i = 1; i < last; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    d.row(i) = (y.row(i + 1) - y.row(i - 1)) / (t[iu + 1] - t[iu - 1]);
  }
  std::vector<Channel> channels = traj.channels();
  for (auto& c : channels) c.unit += "/s";
  return Trajectory(std::move(channels), std::vector<double>(t.begin(), t.end()), std::move(d),
                    traj.rate());
}

Trajectory slice(const Trajectory& traj, double t_begin, double t_end) {
  if (traj.empty() || !(t_end > t_begin)) {
    fail(ErrorCode::kInvalidArgument, "slice: empty interval");
  }
  constexpr double kEps = 1e-12;
  std::vector<double> times{t_begin};
  for (double t : traj.times()) {
    if (t > t_begin + kEps && t < t_end - kEps) times.push_back(t);
  }
  times.push_back(t_end);
  Eigen::MatrixXd values(static_cast<Eigen::Index>(times.size()),
                         static_cast<Eigen::Index>(traj.channel_count()));
  for (std::size_t i = 0; i < times.size(); ++i) {
    values.row(static_cast<Eigen::Index>(i)) = traj.at(times[i]).transpose();
  }
  return Trajectory(traj.channels(), std::move(times), std::move(values), traj.rate());
}

Trajectory shift_time(const Trajectory& traj, double offset) {
  std::vector<double> times(traj.times().begin(), traj.times().end());
  for (double& t : times) t += offset;
  return Trajectory(traj.channels(), std::move(times), traj.values(), traj.rate());
}

}  // namespace prescient
