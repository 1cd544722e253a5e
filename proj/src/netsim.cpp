#include "prescient/netsim.hpp"

#include "prescient/error.hpp"

#include <chrono>
#include <memory>

namespace prescient {

void SimClock::advance_to(double t) {
  if (t < now_) fail(ErrorCode::kInvalidArgument, "sim clock cannot move backwards");
  now_ = t;
}

double WallClock::now() const {
  const auto since = std::chrono::system_clock::now().time_since_epoch();
  return std::chrono::duration<double>(since).count();
}

DelayProfile DelayProfile::from_round_trip(double round_trip) {
  DelayProfile p;
  p.forward_mean = 0.5 * round_trip;
  p.forward_sigma = 2.0 / 15.0 * p.forward_mean;
  p.backward = p.forward_mean;
  p.backward_sigma = 0.0;
  p.jitter_buffer = 0.0;
  p.loss = 0.0;
  return p;
}

void DelayProfile::validate() const {
  if (!(forward_mean >= 0.0) || !(forward_sigma >= 0.0) || !(backward >= 0.0) ||
      !(backward_sigma >= 0.0) || !(jitter_buffer >= 0.0)) {
    fail(ErrorCode::kConfiguration, "delay profile: delays must be non-negative");
  }
  if (!(loss >= 0.0 && loss < 1.0)) fail(ErrorCode::kConfiguration, "delay profile: loss must be in [0, 1)");
}

DelayProfile delay_profile_from_json(const nlohmann::json& j) {
  try {
    DelayProfile p;
    p.forward_mean = j.value("tau_f_ms", 750.0) / 1000.0;
    p.forward_sigma = j.contains("sigma_ms") ? j["sigma_ms"].get<double>() / 1000.0 : 2.0 / 15.0 * p.forward_mean;
    p.backward = j.contains("tau_b_ms") ? j["tau_b_ms"].get<double>() / 1000.0 : p.forward_mean;
    p.backward_sigma = j.value("sigma_b_ms", 0.0) / 1000.0;
    p.jitter_buffer = j.value("jitter_buffer_ms", 0.0) / 1000.0;
    p.loss = j.value("loss", 0.0);
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("delay profile: ") + e.what());
  }
}

nlohmann::json to_json(const DelayProfile& p) {
  return {{"tau_f_ms", p.forward_mean * 1000.0},
          {"sigma_ms", p.forward_sigma * 1000.0},
          {"tau_b_ms", p.backward * 1000.0},
          {"sigma_b_ms", p.backward_sigma * 1000.0},
          {"jitter_buffer_ms", p.jitter_buffer * 1000.0},
          {"loss", p.loss}};
}

double sample_delay(double mean, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0.0) return mean;
  std::normal_distribution<double> jitter(0.0, sigma);
  return std::max(mean + jitter(rng), kMinStochasticDelay);
}

double sample_forward_delay(const DelayProfile& profile, std::mt19937_64& rng) {
  return sample_delay(profile.forward_mean, profile.forward_sigma, rng);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void Scheduler::at(double t, int priority, std::function<void()> fn) {
  if (t < clock_.now()) fail(ErrorCode::kInvalidArgument, "scheduler: event in the past");
  queue_.push({t, priority, order_++, std::move(fn)});
}

void Scheduler::every(double start, double period, double until, int priority,
                      std::function<void(std::uint64_t)> fn) {
  if (!(period > 0.0)) fail(ErrorCode::kInvalidArgument, "scheduler: period must be positive");
  auto shared = std::make_shared<std::function<void(std::uint64_t)>>(std::move(fn));
  // Times are start + k * period rather than accumulated sums, so no drift.
  auto step = std::make_shared<std::function<void(std::uint64_t)>>();
  *step = [this, start, period, until, priority, shared, weak = std::weak_ptr(step)](std::uint64_t k) {
    (*shared)(k);
    const double next = start + static_cast<double>(k + 1) * period;
    if (next <= until + 1e-12) {
      auto self = weak.lock();
      at(next, priority, [self, k] { (*self)(k + 1); });
    }
  };
  if (start <= until + 1e-12) at(start, priority, [step] { (*step)(0); });
}

void Scheduler::run_until(double t_end) {
  while (!queue_.empty() && queue_.top().t <= t_end) {
    Event ev = queue_.top();
    queue_.pop();
    clock_.advance_to(ev.t);
    ev.fn();
  }
  clock_.advance_to(std::max(t_end, clock_.now()));
}

}  // namespace prescient
