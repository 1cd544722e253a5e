#include "prescient/compensator.hpp"

#include "prescient/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace prescient {
namespace {

// History kept while idle; onset detection only looks at recent samples.
constexpr double kIdleHistory = 5.0;

}  // namespace

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::kDelayed: return "delayed";
    case Mode::kRecognizing: return "recognizing";
    case Mode::kBlending: return "blending";
    case Mode::kCompensating: return "compensating";
    case Mode::kReverting: return "reverting";
  }
  return "unknown";
}

const char* to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::kDelayedPassthrough: return "delayed-passthrough";
    case Provenance::kBlended: return "blended";
    case Provenance::kAnticipated: return "anticipated";
  }
  return "unknown";
}

bool is_allowed_transition(Mode from, Mode to) {
  switch (from) {
    case Mode::kDelayed: return to == Mode::kRecognizing;
    // Recognizing -> Delayed only happens when compensation is switched off;
    // both modes emit the delayed stream so the output is unaffected.
    case Mode::kRecognizing: return to == Mode::kBlending || to == Mode::kDelayed;
    case Mode::kBlending: return to == Mode::kCompensating || to == Mode::kReverting;
    case Mode::kCompensating: return to == Mode::kReverting;
    case Mode::kReverting: return to == Mode::kDelayed;
  }
  return false;
}

double measure_forward_delay(double sent, double robot_now, std::uint64_t* skew_warnings) {
  const double d = robot_now - sent;
  if (d < 0.0) {
    if (skew_warnings != nullptr) ++*skew_warnings;
    return 0.0;
  }
  return d;
}

std::optional<double> conditioned_phase(double sent, double t0, double alpha, double mean_duration,
                                        bool* complete) {
  if (complete != nullptr) *complete = false;
  if (sent < t0) return std::nullopt;
  const double phase = alpha * (sent - t0) / mean_duration;
  if (phase > 1.0) {
    if (complete != nullptr) *complete = true;
    return 1.0;
  }
  return phase;
}

double blend_weight(int i, int steps) {
  return 1.0 / (1.0 + std::exp(-12.0 * (static_cast<double>(i) / steps - 0.5)));
}

int blend_steps(double gap, ChannelKind kind) {
  const double units = kind == ChannelKind::kAngular ? std::abs(gap) * 180.0 / std::numbers::pi * 10.0
                                                     : std::abs(gap) * 1000.0;
  return std::max(1, static_cast<int>(std::ceil(units)));
}

double blend_step(double from, double to, int i, int steps) {
  const double beta = blend_weight(i, steps);
  return (1.0 - beta) * from + beta * to;
}

void CompensatorConfig::validate() const {
  if (!(control_rate > 0.0)) fail(ErrorCode::kConfiguration, "compensator: control rate must be positive");
  if (!(backward_delay_estimate >= 0.0)) fail(ErrorCode::kConfiguration, "compensator: negative backward delay");
  if (!(recognition_window > 0.0)) fail(ErrorCode::kConfiguration, "compensator: recognition window must be positive");
  if (!(velocity_threshold >= 0.0)) fail(ErrorCode::kConfiguration, "compensator: negative velocity threshold");
  if (!(cartesian_obs_variance >= 0.0) || !(angular_obs_variance >= 0.0)) {
    fail(ErrorCode::kConfiguration, "compensator: negative observation variance");
  }
  if (!(divergence_margin >= 0.0)) fail(ErrorCode::kConfiguration, "compensator: negative divergence margin");
}

double blend_bound_excess(const TickRecord& prev, const TickRecord& cur) {
  double worst = -std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < cur.emitted.size(); ++c) {
    double bound = 0.0;
    if (cur.delayed.size() && prev.delayed.size()) bound = std::abs(cur.delayed(c) - prev.delayed(c));
    if (cur.predicted.size() && prev.predicted.size()) {
      bound = std::max(bound, std::abs(cur.predicted(c) - prev.predicted(c)));
    }
    // A blend that ends on this tick still moved by its last increment.
    const TickRecord* blend = cur.blend_steps.size() ? &cur : prev.blend_steps.size() ? &prev : nullptr;
    if (blend) {
      const auto i = static_cast<std::size_t>(c);
      bound += 3.0 / blend->blend_steps[i] * std::abs(blend->blend_to(c) - blend->blend_from(c));
    }
    const double step = prev.emitted.size() ? std::abs(cur.emitted(c) - prev.emitted(c)) : 0.0;
    worst = std::max(worst, step - bound);
  }
  return worst;
}

CompensatorConfig compensator_config_from_json(const nlohmann::json& j, CompensatorConfig c) {
  try {
    c.control_rate = j.value("control_rate_hz", c.control_rate);
    c.backward_delay_estimate = j.value("backward_delay_ms", c.backward_delay_estimate * 1000.0) / 1000.0;
    c.recognition_window = j.value("recognition_window_s", c.recognition_window);
    c.velocity_threshold = j.value("velocity_threshold", c.velocity_threshold);
    c.cartesian_obs_variance = j.value("cartesian_obs_variance", c.cartesian_obs_variance);
    c.angular_obs_variance = j.value("angular_obs_variance", c.angular_obs_variance);
    c.divergence_margin = j.value("divergence_margin_m", c.divergence_margin);
    c.horizon = j.value("horizon", c.horizon);
    c.enabled = j.value("enabled", c.enabled);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("compensator config: ") + e.what());
  }
}

Compensator::Compensator(std::vector<TaskModel> library, CompensatorConfig config)
    : library_(std::move(library)), config_(std::move(config)) {
  config_.validate();
  if (library_.empty()) fail(ErrorCode::kConfiguration, "compensator: empty task library");
  for (const auto& t : library_) t.validate();
  for (const auto& c : library_.front().channels) channels_.push_back(c.channel);
  for (const auto& t : library_) {
    if (t.channel_count() != channels_.size()) fail(ErrorCode::kConfiguration, "compensator: tasks have different channel sets");
    for (std::size_t i = 0; i < channels_.size(); ++i) {
      if (t.channels[i].channel.name != channels_[i].name) {
        fail(ErrorCode::kConfiguration, "compensator: tasks have different channel sets");
      }
    }
  }
  mask_ = cartesian_mask(channels_);
  const auto n = static_cast<Eigen::Index>(channels_.size());
  if (config_.initial_reference.size() == n) {
    last_emitted_ = config_.initial_reference;
  } else if (config_.initial_reference.size() == 0) {
    last_emitted_ = Eigen::VectorXd::Zero(n);
  } else {
    fail(ErrorCode::kConfiguration, "compensator: initial reference width does not match channels");
  }
}

void Compensator::ingest(double sent, double arrival, Eigen::VectorXd values, std::uint64_t seq) {
  if (static_cast<std::size_t>(values.size()) != channels_.size()) {
    fail(ErrorCode::kMalformedInput, "compensator: packet width does not match channels");
  }
  buffer_.push({sent, arrival, std::move(values), seq});
}

void Compensator::set_enabled(bool enabled) {
  if (enabled && !config_.enabled) {
    // Mid-motion onsets are meaningless; wait for the operator to be still.
    require_rest_ = true;
    if (!buffer_.samples().empty()) rearm_after_ = buffer_.samples().back().sent;
    disable_pending_ = false;
  }
  if (!enabled && (mode_ == Mode::kBlending || mode_ == Mode::kCompensating)) disable_pending_ = true;
  config_.enabled = enabled;
}

void Compensator::transition(double now, Mode to, std::string reason) {
  if (!is_allowed_transition(mode_, to)) {
    fail(ErrorCode::kInternal, std::string("compensator: illegal transition ") + to_string(mode_) + " -> " + to_string(to));
  }
  transitions_.push_back({now, mode_, to, std::move(reason)});
  mode_ = to;
}

double Compensator::observation_variance(std::size_t channel) const {
  return channels_[channel].kind == ChannelKind::kAngular ? config_.angular_obs_variance
                                                          : config_.cartesian_obs_variance;
}

bool Compensator::condition_on_observation(const Observation& obs) {
  if (!posterior_ || !recognition_) fail(ErrorCode::kInternal, "compensator: no posterior to condition");
  bool complete = false;
  const auto phase = conditioned_phase(obs.sent, t0_, recognition_->alpha, posterior_->mean_duration, &complete);
  if (!phase) return false;
  if (complete) {
    motion_complete_ = true;
    return false;
  }
  for (std::size_t c = 0; c < channels_.size(); ++c) {
    posterior_->channels[c].promp.condition_in_place(*phase, obs.values(static_cast<Eigen::Index>(c)),
                                                     observation_variance(c));
  }
  return true;
}

ControlReference Compensator::anticipated_reference(double now) const {
  if (!posterior_ || !recognition_) fail(ErrorCode::kInternal, "compensator: no posterior for anticipation");
  const double scale = recognition_->alpha / posterior_->mean_duration;
  const double lead = now - t0_ + config_.backward_delay_estimate;
  ControlReference ref;
  ref.time = now;
  ref.provenance = Provenance::kAnticipated;
  ref.values = posterior_->mean_at(std::clamp(scale * lead, 0.0, 1.0));
  const double dt = 1.0 / config_.control_rate;
  ref.horizon.resize(static_cast<Eigen::Index>(config_.horizon), static_cast<Eigen::Index>(channels_.size()));
  for (std::size_t k = 0; k < config_.horizon; ++k) {
    const double t = now + static_cast<double>(k + 1) * dt;
    ref.horizon_times.push_back(t);
    ref.horizon.row(static_cast<Eigen::Index>(k)) =
        posterior_->mean_at(std::clamp(scale * (lead + static_cast<double>(k + 1) * dt), 0.0, 1.0)).transpose();
  }
  return ref;
}

Eigen::VectorXd Compensator::predicted_value(double now) {
  if (have_horizon_) {
    // Without fresh packets the previous horizon supplies the reference.
    const double k = std::round((now - horizon_ref_.time) * config_.control_rate) - 1.0;
    if (k >= 0.0 && k < static_cast<double>(horizon_ref_.horizon_times.size())) {
      horizon_used_ = static_cast<std::size_t>(k) + 1;
      return horizon_ref_.horizon.row(static_cast<Eigen::Index>(k)).transpose();
    }
  }
  horizon_ref_ = anticipated_reference(now);
  horizon_used_ = 0;
  have_horizon_ = true;
  return horizon_ref_.values;
}

void Compensator::begin_blend(const Eigen::VectorXd& from, const Eigen::VectorXd& to) {
  blend_steps_.assign(channels_.size(), 1);
  blend_counters_.assign(channels_.size(), 0);
  for (std::size_t c = 0; c < channels_.size(); ++c) {
    const auto i = static_cast<Eigen::Index>(c);
    blend_steps_[c] = blend_steps(to(i) - from(i), channels_[c].kind);
  }
}

Eigen::VectorXd Compensator::blend_output(const Eigen::VectorXd& from, const Eigen::VectorXd& to) {
  Eigen::VectorXd out(from.size());
  record_.blend_from = from;
  record_.blend_to = to;
  record_.blend_steps = blend_steps_;
  record_.blend_counters = blend_counters_;
  for (std::size_t c = 0; c < channels_.size(); ++c) {
    const auto i = static_cast<Eigen::Index>(c);
    int& counter = blend_counters_[c];
    out(i) = counter > blend_steps_[c] ? to(i) : blend_step(from(i), to(i), counter, blend_steps_[c]);
    counter = std::min(counter + 1, blend_steps_[c] + 1);
  }
  return out;
}

bool Compensator::blend_finished() const {
  for (std::size_t c = 0; c < blend_counters_.size(); ++c) {
    if (blend_counters_[c] <= blend_steps_[c]) return false;
  }
  return true;
}

void Compensator::begin_revert(double now, const Eigen::VectorXd& delayed, std::string reason) {
  revert_from_ = last_emitted_;
  begin_blend(revert_from_, delayed);
  transition(now, Mode::kReverting, std::move(reason));
}

void Compensator::start_prediction(double now) {
  const auto& samples = buffer_.samples();
  std::vector<Observation> window;
  for (const auto& o : samples) {
    if (o.sent >= t0_ && o.sent <= t0_ + config_.recognition_window) window.push_back(o);
  }
  auto rec = recognize(library_, window, t0_);
  rec.alpha = estimate_alpha(library_[rec.task_index], window, t0_);
  recognition_ = rec;
  posterior_ = library_[rec.task_index];
  motion_complete_ = false;
  for (const auto& o : samples) {
    if (o.sent >= t0_) condition_on_observation(o);
  }
  have_horizon_ = false;
  transition(now, Mode::kBlending, "task " + std::to_string(rec.task_id) + " recognized");
  begin_blend(samples.back().values, predicted_value(now));
}

ControlReference Compensator::tick(double now) {
  const auto fresh = buffer_.sync();
  for (const auto& o : fresh) last_forward_delay_ = measure_forward_delay(o.sent, o.arrival, &skew_warnings_);
  const auto& samples = buffer_.samples();
  const Eigen::VectorXd delayed = samples.empty() ? last_emitted_ : samples.back().values;

  record_ = TickRecord{};
  record_.time = now;
  record_.delayed = delayed;
  record_.forward_delay = last_forward_delay_;

  if (mode_ == Mode::kDelayed && config_.enabled) {
    const auto first = std::upper_bound(samples.begin(), samples.end(), rearm_after_,
                                        [](double t, const Observation& s) { return t < s.sent; });
    const std::span<const Observation> candidates(first, samples.end());
    if (const auto onset = detect_motion_start(candidates, config_.velocity_threshold, mask_, require_rest_)) {
      t0_ = *onset;
      buffer_.motion_start = t0_;
      transition(now, Mode::kRecognizing, "motion onset");
    } else if (!samples.empty()) {
      buffer_.discard_before(samples.back().sent - kIdleHistory);
    }
  }

  bool started_now = false;
  if (mode_ == Mode::kRecognizing) {
    if (!config_.enabled) {
      transition(now, Mode::kDelayed, "compensation disabled");
    } else if (!samples.empty() && samples.back().sent - t0_ >= config_.recognition_window) {
      start_prediction(now);
      started_now = true;
    }
  }

  if ((mode_ == Mode::kBlending || mode_ == Mode::kCompensating) && !started_now) {
    bool diverged = false;
    bool updated = false;
    for (const auto& o : fresh) {
      bool complete = false;
      const auto phase = conditioned_phase(o.sent, t0_, recognition_->alpha, posterior_->mean_duration, &complete);
      if (!phase) continue;
      if (complete) {
        motion_complete_ = true;
        continue;
      }
      const auto& learned = library_[recognition_->task_index];
      if (divergence_check(learned, *phase, o.values, config_.divergence_margin, mask_) == Divergence::kDiverged) {
        diverged = true;
        break;
      }
      updated = condition_on_observation(o) || updated;
    }
    if (updated) have_horizon_ = false;
    if (diverged) {
      begin_revert(now, delayed, "divergence");
    } else if (disable_pending_) {
      begin_revert(now, delayed, "compensation disabled");
    } else if (motion_complete_) {
      begin_revert(now, delayed, "motion complete");
    }
  }

  record_.mode = mode_;
  Eigen::VectorXd out;
  switch (mode_) {
    case Mode::kDelayed:
    case Mode::kRecognizing:
      out = delayed;
      record_.provenance = Provenance::kDelayedPassthrough;
      break;
    case Mode::kBlending: {
      const Eigen::VectorXd predicted = predicted_value(now);
      record_.predicted = predicted;
      out = blend_output(delayed, predicted);
      record_.provenance = Provenance::kBlended;
      if (blend_finished()) transition(now, Mode::kCompensating, "blend complete");
      break;
    }
    case Mode::kCompensating:
      out = predicted_value(now);
      record_.predicted = out;
      record_.provenance = Provenance::kAnticipated;
      break;
    case Mode::kReverting:
      out = blend_output(revert_from_, delayed);
      record_.provenance = Provenance::kBlended;
      if (blend_finished()) {
        transition(now, Mode::kDelayed, "revert complete");
        rearm_after_ = samples.empty() ? now : samples.back().sent;
        require_rest_ = true;
        posterior_.reset();
        recognition_.reset();
        have_horizon_ = false;
        motion_complete_ = false;
        disable_pending_ = false;
        buffer_.motion_start.reset();
      }
      break;
  }
  if (recognition_) {
    record_.task_id = recognition_->task_id;
    record_.alpha = recognition_->alpha;
  }
  record_.motion_complete = motion_complete_;
  record_.emitted = out;
  last_emitted_ = out;

  ControlReference ref;
  ref.time = now;
  ref.values = out;
  ref.provenance = record_.provenance;
  if (record_.provenance == Provenance::kAnticipated && have_horizon_) {
    const auto used = static_cast<Eigen::Index>(horizon_used_);
    const Eigen::Index remaining = horizon_ref_.horizon.rows() - used;
    ref.horizon_times.assign(horizon_ref_.horizon_times.begin() + used, horizon_ref_.horizon_times.end());
    ref.horizon = horizon_ref_.horizon.bottomRows(remaining);
  }
  return ref;
}

}  // namespace prescient
