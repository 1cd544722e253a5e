#include "prescient/harness.hpp"

#include "prescient/error.hpp"
#include "prescient/recognition.hpp"
#include "prescient/trajectory_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace prescient {
namespace {

Eigen::Vector2d read_point(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2) fail(ErrorCode::kParse, "harness: points must have 2 coordinates");
  return {v[0], v[1]};
}

nlohmann::json point_json(const Eigen::Vector2d& p) { return {p.x(), p.y()}; }

std::vector<Observation> observations(const Trajectory& traj, double t_begin, double t_end) {
  std::vector<Observation> out;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const double t = traj.times()[i];
    if (t < t_begin || t > t_end) continue;
    out.push_back({t, t, traj.sample(i), i});
  }
  return out;
}

/// Posterior mean of `task` evaluated at the sample times of `like`.
Trajectory predict_on(const TaskModel& task, double alpha, const Trajectory& like) {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(like.size()), static_cast<Eigen::Index>(task.channel_count()));
  for (std::size_t i = 0; i < like.size(); ++i) {
    const double phase = std::clamp(alpha * like.times()[i] / task.mean_duration, 0.0, 1.0);
    v.row(static_cast<Eigen::Index>(i)) = task.mean_at(phase).transpose();
  }
  return Trajectory(like.channels(), std::vector<double>(like.times().begin(), like.times().end()), v, like.rate());
}

// Observation variance used when every sample of a motion is conditioned on.
constexpr double kInterpolationVariance = 1e-12;

TaskModel condition_all(TaskModel task, std::span<const Observation> obs, double alpha, const CompensatorConfig& cc,
                        std::optional<double> variance = std::nullopt) {
  for (const auto& o : obs) {
    const double phase = alpha * o.sent / task.mean_duration;
    if (phase > 1.0) continue;
    for (std::size_t c = 0; c < task.channel_count(); ++c) {
      const double var = variance ? *variance
                         : task.channels[c].channel.kind == ChannelKind::kAngular ? cc.angular_obs_variance
                                                                                  : cc.cartesian_obs_variance;
      task.channels[c].promp.condition_in_place(phase, o.values(static_cast<Eigen::Index>(c)), var);
    }
  }
  return task;
}

/// Column of each library channel in `traj`.
std::vector<Eigen::Index> channel_columns(const std::vector<Channel>& channels, const Trajectory& traj) {
  std::vector<Eigen::Index> cols;
  for (const auto& c : channels) {
    const int i = traj.channel_index(c.name);
    if (i < 0) fail(ErrorCode::kConfiguration, "harness: motion lacks channel '" + c.name + "'");
    cols.push_back(i);
  }
  return cols;
}

std::pair<Eigen::Index, Eigen::Index> hand_columns(const std::vector<Channel>& channels) {
  Eigen::Index x = -1, y = -1;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i].name == "hand_x") x = static_cast<Eigen::Index>(i);
    if (channels[i].name == "hand_y") y = static_cast<Eigen::Index>(i);
  }
  if (x < 0 || y < 0) fail(ErrorCode::kConfiguration, "harness: channels must include hand_x and hand_y");
  return {x, y};
}

/// Runs the arm at the control rate from t = 0 to `t_end`, following
/// `reference(now)`; feedforward velocity is the reference difference.
template <class Reference, class Observer>
Trajectory drive_arm(const HarnessConfig& config, double t_end, Reference reference, Observer observe) {
  ArmController arm(desk_arm(), config.controller);
  const double dt = 1.0 / config.controller.control_rate;
  const auto ticks = static_cast<std::size_t>(std::floor(t_end / dt + 1e-9)) + 1;
  std::vector<double> times(ticks);
  Eigen::MatrixXd hand(static_cast<Eigen::Index>(ticks), 2);
  Eigen::Vector2d prev;
  for (std::size_t k = 0; k < ticks; ++k) {
    const double now = static_cast<double>(k) * dt;
    const Eigen::Vector2d ref = reference(k, now);
    const Eigen::Vector2d vel = k == 0 ? Eigen::Vector2d::Zero() : Eigen::Vector2d((ref - prev) / dt);
    prev = ref;
    times[k] = now;
    hand.row(static_cast<Eigen::Index>(k)) = arm.hand().transpose();
    observe(k, now, arm.step(ref, vel), arm);
  }
  return Trajectory(cartesian_channels({"hand_x", "hand_y"}), times, hand, config.controller.control_rate);
}

struct MotionWindow {
  double onset = 0.0;
  double end = 0.0;
};

MotionWindow motion_window(const Trajectory& motion, double threshold) {
  const auto ext = motion_extent(motion, threshold, cartesian_mask(motion.channels()));
  if (!ext) fail(ErrorCode::kModel, "harness: test motion never exceeds the velocity threshold");
  return {ext->first, ext->second};
}

/// Ridge-fit reconstruction of the moving segment; rest samples are kept.
Trajectory basis_reconstruction(const Trajectory& motion, const FitOptions& fit, double threshold) {
  const auto w = motion_window(motion, threshold);
  Eigen::MatrixXd v = motion.values();
  const auto seg = slice(motion, w.onset, w.end);
  const double duration = w.end - w.onset;
  Eigen::VectorXd phase(static_cast<Eigen::Index>(seg.size()));
  for (std::size_t i = 0; i < seg.size(); ++i) phase(static_cast<Eigen::Index>(i)) = (seg.times()[i] - w.onset) / duration;
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    const Eigen::VectorXd weights = fit_weights(phase, seg.values().col(c), fit.basis);
    for (std::size_t i = 0; i < motion.size(); ++i) {
      const double t = motion.times()[i];
      if (t < w.onset || t > w.end) continue;
      v(static_cast<Eigen::Index>(i), c) = basis_row((t - w.onset) / duration, fit.basis).dot(weights);
    }
  }
  return Trajectory(motion.channels(), std::vector<double>(motion.times().begin(), motion.times().end()), v,
                    motion.rate());
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

void dump_session(const std::filesystem::path& path, const SessionRun& run) {
  const auto n = static_cast<Eigen::Index>(run.plant.size());
  Eigen::MatrixXd v(n, 4);
  v.leftCols(2) = run.reference.values();
  v.rightCols(2) = run.plant.values();
  const Trajectory t(cartesian_channels({"ref_hand_x", "ref_hand_y", "plant_hand_x", "plant_hand_y"}),
                     std::vector<double>(run.plant.times().begin(), run.plant.times().end()), v, run.plant.rate());
  save_csv(t, path, run.provenance);
}

std::vector<TaskModel> load_or_fit_library(const nlohmann::json& config, const HarnessConfig& hc, const Dataset& data) {
  if (config.contains("library")) {
    std::ifstream in(config["library"].get<std::string>());
    if (!in) fail(ErrorCode::kIo, "cannot open library '" + config["library"].get<std::string>() + "'");
    try {
      return library_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kParse, std::string("library: ") + e.what());
    }
  }
  return fit_library(hc, data.train);
}

}  // namespace

void TaskSpec::validate() const {
  if (!(duration > 0.0)) fail(ErrorCode::kConfiguration, "task spec: duration must be positive");
  if (!(duration_sigma >= 0.0) || !(via_sigma >= 0.0) || !(goal_sigma >= 0.0)) {
    fail(ErrorCode::kConfiguration, "task spec: spreads must be non-negative");
  }
  if (!(pre_roll >= 0.0) || !(post_roll >= 0.0)) fail(ErrorCode::kConfiguration, "task spec: negative rest time");
  if (!(rate > 0.0)) fail(ErrorCode::kConfiguration, "task spec: rate must be positive");
  if (repetitions < 2) fail(ErrorCode::kConfiguration, "task spec: need at least 2 repetitions");
  if (channels.size() != 2) fail(ErrorCode::kConfiguration, "task spec: reaches have exactly 2 channels");
}

double min_jerk(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
}

double min_jerk_rate(double s) {
  if (s <= 0.0 || s >= 1.0) return 0.0;
  return 30.0 * s * s * (1.0 - s) * (1.0 - s);
}

std::vector<Trajectory> synth_demos(const TaskSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Trajectory> out;
  for (int r = 0; r < spec.repetitions; ++r) {
    // Draw order is fixed so streams are reproducible.
    const double d = std::max(spec.duration + spec.duration_sigma * n(rng), 0.5 * spec.duration);
    const double gx = spec.goal_sigma * n(rng);
    const double gy = spec.goal_sigma * n(rng);
    const double vx = spec.via_sigma * n(rng);
    const double vy = spec.via_sigma * n(rng);
    const Eigen::Vector2d goal = spec.goal + Eigen::Vector2d(gx, gy);
    const Eigen::Vector2d via(vx, vy);
    const double total = spec.pre_roll + d + spec.post_roll;
    const auto count = static_cast<std::size_t>(std::floor(total * spec.rate + 1e-9)) + 1;
    std::vector<double> t(count);
    Eigen::MatrixXd v(static_cast<Eigen::Index>(count), 2);
    for (std::size_t i = 0; i < count; ++i) {
      t[i] = static_cast<double>(i) / spec.rate;
      const double s = std::clamp((t[i] - spec.pre_roll) / d, 0.0, 1.0);
      const double bump = 16.0 * s * s * (1.0 - s) * (1.0 - s);
      v.row(static_cast<Eigen::Index>(i)) = (spec.start + min_jerk(s) * (goal - spec.start) + bump * via).transpose();
    }
    out.emplace_back(cartesian_channels(spec.channels), std::move(t), std::move(v), spec.rate);
  }
  return out;
}

Trajectory segment_motion(const Trajectory& traj, double threshold) {
  const auto ext = motion_extent(traj, threshold, cartesian_mask(traj.channels()));
  if (!ext) fail(ErrorCode::kModel, "segment: recording never exceeds the velocity threshold");
  return shift_time(slice(traj, ext->first, ext->second), -ext->first);
}

std::vector<double> rms_error(const Trajectory& a, const Trajectory& b, double offset,
                              std::optional<std::pair<double, double>> window) {
  if (a.channel_count() != b.channel_count()) fail(ErrorCode::kAlignment, "rms: channel counts differ");
  if (a.empty() || b.empty()) fail(ErrorCode::kAlignment, "rms: empty trajectory");
  const auto c = static_cast<Eigen::Index>(a.channel_count());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(c);
  std::size_t n = 0;
  const double slack = 1e-9;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a.times()[i];
    if (window && (t < window->first - slack || t > window->second + slack)) continue;
    const double tb = t - offset;
    if (tb < b.start_time() - slack || tb > b.end_time() + slack) continue;
    sum += (a.sample(i) - b.at(tb)).array().square().matrix();
    ++n;
  }
  if (n == 0) fail(ErrorCode::kAlignment, "rms: trajectories do not overlap after realignment");
  std::vector<double> out(static_cast<std::size_t>(c));
  for (Eigen::Index k = 0; k < c; ++k) out[static_cast<std::size_t>(k)] = std::sqrt(sum(k) / static_cast<double>(n));
  return out;
}

double combined_rms(const std::vector<double>& per_channel) {
  double s = 0.0;
  for (double x : per_channel) s += x * x;
  return std::sqrt(s);
}

void HarnessConfig::validate() const {
  if (tasks.empty()) fail(ErrorCode::kConfiguration, "harness: no tasks");
  for (const auto& t : tasks) {
    t.validate();
    if (t.repetitions < train + test) fail(ErrorCode::kConfiguration, "harness: not enough repetitions for the split");
  }
  if (train < 2) fail(ErrorCode::kConfiguration, "harness: need at least 2 training repetitions");
  if (test < 1) fail(ErrorCode::kConfiguration, "harness: need at least 1 test repetition");
  fit.basis.validate();
  network.validate();
  compensator.validate();
  if (!(controller.control_rate > 0.0)) fail(ErrorCode::kConfiguration, "harness: control rate must be positive");
  for (double f : fractions) {
    if (!(f > 0.0 && f < 1.0)) fail(ErrorCode::kConfiguration, "harness: fractions must lie in (0, 1)");
  }
  for (double r : sweep_round_trips) {
    if (!(r >= 0.0)) fail(ErrorCode::kConfiguration, "harness: negative round trip");
  }
}

HarnessConfig default_harness_config() {
  HarnessConfig c;
  const Eigen::Vector2d start = forward_kinematics(desk_arm()).back();
  for (int k = 0; k < 2; ++k) {
    TaskSpec t;
    t.task_id = k;
    t.start = start;
    t.goal = start + Eigen::Vector2d(-0.12, k == 0 ? 0.2 : -0.2);
    t.duration = 10.0;
    t.duration_sigma = 0.5;
    c.tasks.push_back(t);
  }
  c.compensator.backward_delay_estimate = c.network.backward_total();
  c.compensator.cartesian_obs_variance = 1e-10;
  c.fit.covariance_jitter = 1e-3;
  return c;
}

HarnessConfig harness_config_from_json(const nlohmann::json& j) {
  try {
    HarnessConfig c = default_harness_config();
    if (j.contains("tasks")) {
      c.tasks.clear();
      const Eigen::Vector2d rest = forward_kinematics(desk_arm()).back();
      for (const auto& tj : j["tasks"]) {
        TaskSpec t;
        t.task_id = tj.value("task_id", static_cast<int>(c.tasks.size()));
        t.start = tj.contains("start") ? read_point(tj["start"]) : rest;
        t.goal = read_point(tj.at("goal"));
        t.duration = tj.value("duration_s", t.duration);
        t.duration_sigma = tj.value("duration_sigma_s", t.duration_sigma);
        t.via_sigma = tj.value("via_sigma_m", t.via_sigma);
        t.goal_sigma = tj.value("goal_sigma_m", t.goal_sigma);
        t.pre_roll = tj.value("pre_roll_s", t.pre_roll);
        t.post_roll = tj.value("post_roll_s", t.post_roll);
        t.rate = tj.value("rate_hz", t.rate);
        t.repetitions = tj.value("repetitions", t.repetitions);
        if (tj.contains("channels")) t.channels = tj["channels"].get<std::vector<std::string>>();
        c.tasks.push_back(t);
      }
    }
    c.train = j.value("train", c.train);
    c.test = j.value("test", c.test);
    if (j.contains("basis")) {
      const auto& b = j["basis"];
      c.fit.basis = BasisConfig::with_count(b.value("m", c.fit.basis.count), b.value("lambda", c.fit.basis.ridge));
      c.fit.basis.bandwidth = b.value("h", c.fit.basis.bandwidth);
    }
    c.fit.phase_samples = j.value("phase_samples", c.fit.phase_samples);
    c.fit.covariance_jitter = j.value("covariance_jitter", c.fit.covariance_jitter);
    if (j.contains("network")) c.network = delay_profile_from_json(j["network"]);
    if (j.contains("compensator")) c.compensator = compensator_config_from_json(j["compensator"], c.compensator);
    if (!j.contains("compensator") || !j["compensator"].contains("backward_delay_ms")) {
      c.compensator.backward_delay_estimate = c.network.backward_total();
    }
    if (j.contains("controller")) c.controller = arm_controller_config_from_json(j["controller"]);
    if (j.contains("sweep_round_trips_s")) c.sweep_round_trips = j["sweep_round_trips_s"].get<std::vector<double>>();
    if (j.contains("fractions")) c.fractions = j["fractions"].get<std::vector<double>>();
    c.settle = j.value("settle_s", c.settle);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("harness config: ") + e.what());
  }
}

nlohmann::json to_json(const HarnessConfig& c) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : c.tasks) {
    tasks.push_back({{"task_id", t.task_id},
                     {"start", point_json(t.start)},
                     {"goal", point_json(t.goal)},
                     {"duration_s", t.duration},
                     {"duration_sigma_s", t.duration_sigma},
                     {"via_sigma_m", t.via_sigma},
                     {"goal_sigma_m", t.goal_sigma},
                     {"pre_roll_s", t.pre_roll},
                     {"post_roll_s", t.post_roll},
                     {"rate_hz", t.rate},
                     {"repetitions", t.repetitions},
                     {"channels", t.channels}});
  }
  const auto& cc = c.compensator;
  return {{"tasks", tasks},
          {"train", c.train},
          {"test", c.test},
          {"basis", {{"m", c.fit.basis.count}, {"h", c.fit.basis.bandwidth}, {"lambda", c.fit.basis.ridge}}},
          {"phase_samples", c.fit.phase_samples},
          {"covariance_jitter", c.fit.covariance_jitter},
          {"network", to_json(c.network)},
          {"compensator",
           {{"control_rate_hz", cc.control_rate},
            {"backward_delay_ms", cc.backward_delay_estimate * 1000.0},
            {"recognition_window_s", cc.recognition_window},
            {"velocity_threshold", cc.velocity_threshold},
            {"cartesian_obs_variance", cc.cartesian_obs_variance},
            {"angular_obs_variance", cc.angular_obs_variance},
            {"divergence_margin_m", cc.divergence_margin},
            {"horizon", cc.horizon},
            {"enabled", cc.enabled}}},
          {"controller",
           {{"gain", c.controller.gain},
            {"control_rate_hz", c.controller.control_rate},
            {"weights",
             {{"hand", c.controller.weights.hand},
              {"waist_height", c.controller.weights.waist_height},
              {"head_posture", c.controller.weights.head_posture},
              {"torso_posture", c.controller.weights.torso_posture},
              {"distal_posture", c.controller.weights.distal_posture}}}}},
          {"sweep_round_trips_s", c.sweep_round_trips},
          {"fractions", c.fractions},
          {"settle_s", c.settle}};
}

Dataset make_dataset(const HarnessConfig& config, std::uint64_t seed) {
  config.validate();
  Dataset d;
  for (std::size_t k = 0; k < config.tasks.size(); ++k) {
    std::mt19937_64 rng(derive_seed(seed, 100 + k));
    auto all = synth_demos(config.tasks[k], rng);
    d.train.emplace_back(all.begin(), all.begin() + config.train);
    d.test.emplace_back(all.begin() + config.train, all.begin() + config.train + config.test);
  }
  return d;
}

std::vector<TaskModel> fit_library(const HarnessConfig& config, const std::vector<std::vector<Trajectory>>& train) {
  if (train.size() != config.tasks.size()) fail(ErrorCode::kConfiguration, "fit: one demonstration set per task expected");
  std::vector<TaskModel> lib;
  for (std::size_t k = 0; k < train.size(); ++k) {
    std::vector<Trajectory> segs;
    for (const auto& d : train[k]) segs.push_back(segment_motion(d, config.compensator.velocity_threshold));
    lib.push_back(fit_task(config.tasks[k].task_id, segs, config.fit));
  }
  return lib;
}

nlohmann::json library_to_json(const std::vector<TaskModel>& library) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& t : library) out.push_back(to_json(t));
  return out;
}

std::vector<TaskModel> library_from_json(const nlohmann::json& j) {
  if (!j.is_array()) fail(ErrorCode::kParse, "library: expected an array of task models");
  std::vector<TaskModel> out;
  for (const auto& t : j) out.push_back(task_model_from_json(t));
  return out;
}

nlohmann::json run_prediction_experiment(const HarnessConfig& config, const std::vector<TaskModel>& library,
                                         const std::vector<std::vector<Trajectory>>& test) {
  const auto& cc = config.compensator;
  std::map<std::string, std::vector<double>> rows, common_rows;
  std::vector<double> floors;
  double last_fraction = 0.0;
  for (double f : config.fractions) last_fraction = std::max(last_fraction, f);
  nlohmann::json motions = nlohmann::json::array();
  int correct = 0, total = 0;
  auto row_name = [](double f) {
    std::ostringstream os;
    os << "fraction_" << f;
    return os.str();
  };

  for (std::size_t k = 0; k < test.size(); ++k) {
    std::size_t true_index = library.size();
    for (std::size_t i = 0; i < library.size(); ++i) {
      if (library[i].task_id == config.tasks[k].task_id) true_index = i;
    }
    if (true_index == library.size()) fail(ErrorCode::kConfiguration, "predict: task missing from the library");
    for (std::size_t r = 0; r < test[k].size(); ++r) {
      const auto seg = segment_motion(test[k][r], cc.velocity_threshold);
      const double duration = seg.duration();
      // Every row is also scored on the part none of them has observed.
      const double common_from = std::max(cc.recognition_window, last_fraction * duration);
      nlohmann::json m{{"task_id", config.tasks[k].task_id}, {"repetition", r}, {"duration_s", duration},
                       {"common_from_s", common_from}};
      auto record = [&](const std::string& name, const Trajectory& pred, double from) {
        const auto e = rms_error(seg, pred, 0.0, std::make_pair(from, duration));
        const double c = combined_rms(e);
        rows[name].push_back(c);
        m[name] = {{"rms", c}, {"per_channel", e}, {"from_s", from}};
        if (name == "full") return;
        const double cm = combined_rms(rms_error(seg, pred, 0.0, std::make_pair(common_from, duration)));
        common_rows[name].push_back(cm);
        m[name]["rms_common"] = cm;
      };

      record("no_obs", predict_on(library[true_index], 1.0, seg), 0.0);

      const auto window_obs = observations(seg, 0.0, cc.recognition_window);
      const auto rec = recognize(library, window_obs, 0.0);
      const auto& chosen = library[rec.task_index];
      m["recognized_task"] = rec.task_id;
      ++total;
      if (rec.task_id == config.tasks[k].task_id) ++correct;

      const double rec_alpha = estimate_alpha(chosen, window_obs, 0.0);
      record("recognition", predict_on(condition_all(chosen, window_obs, rec_alpha, cc), rec_alpha, seg),
             cc.recognition_window);
      for (double f : config.fractions) {
        const auto obs = observations(seg, 0.0, f * duration);
        const double alpha = estimate_alpha(chosen, obs, 0.0);
        record(row_name(f), predict_on(condition_all(chosen, obs, alpha, cc), alpha, seg), f * duration);
      }

      // Fully observed: the duration is known, so alpha is exact, and the
      // samples are interpolated.
      const auto all = observations(seg, 0.0, duration);
      const double full_alpha = chosen.mean_duration / duration;
      record("full", predict_on(condition_all(chosen, all, full_alpha, cc, kInterpolationVariance), full_alpha, seg),
             0.0);
      // A negative threshold marks every sample as moving: the whole segment is refit.
      const auto recon = basis_reconstruction(seg, config.fit, -1.0);
      const double floor = combined_rms(rms_error(seg, recon));
      floors.push_back(floor);
      m["basis_floor"] = floor;
      motions.push_back(m);
    }
  }

  nlohmann::json summary;
  for (const auto& [name, v] : rows) summary[name] = {{"mean", mean_of(v)}, {"std", std_of(v)}, {"count", v.size()}};
  summary["basis_floor"] = {{"mean", mean_of(floors)}, {"std", std_of(floors)}, {"count", floors.size()}};
  nlohmann::json common;
  for (const auto& [name, v] : common_rows) common[name] = {{"mean", mean_of(v)}, {"std", std_of(v)}, {"count", v.size()}};
  std::vector<std::string> order{"no_obs", "recognition"};
  for (double f : config.fractions) order.push_back(row_name(f));
  return {{"rows", summary},
          {"rows_common_window", common},
          {"row_order", order},
          {"recognition_accuracy", total ? static_cast<double>(correct) / total : 0.0},
          {"recognized", correct},
          {"motions", motions},
          {"test_count", total}};
}

Trajectory ideal_plant(const HarnessConfig& config, const Trajectory& motion) {
  const auto [hx, hy] = hand_columns(motion.channels());
  return drive_arm(
      config, motion.end_time(),
      [&](std::size_t, double now) { return Eigen::Vector2d(motion.at(now, hx), motion.at(now, hy)); },
      [](std::size_t, double, const QpSolution&, const ArmController&) {});
}

SessionRun simulate_session(const HarnessConfig& config, const std::vector<TaskModel>& library,
                            const Trajectory& motion, const DelayProfile& profile, bool compensation,
                            std::uint64_t seed) {
  profile.validate();
  if (library.empty()) fail(ErrorCode::kConfiguration, "session: empty library");
  const auto& lib_channels = library.front().channels;
  std::vector<Channel> channels;
  for (const auto& c : lib_channels) channels.push_back(c.channel);
  const auto cols = channel_columns(channels, motion);
  const auto [hx, hy] = hand_columns(channels);

  auto row = [&](std::size_t i) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) v(static_cast<Eigen::Index>(c)) = motion.values()(static_cast<Eigen::Index>(i), cols[c]);
    return v;
  };

  CompensatorConfig cc = config.compensator;
  cc.enabled = compensation;
  cc.backward_delay_estimate = profile.backward_total();
  cc.initial_reference = row(0);
  Compensator comp(library, cc);

  Link<Eigen::VectorXd> forward(profile.forward_mean, profile.forward_sigma, profile.loss, derive_seed(seed, 1));
  Link<Eigen::Vector2d> backward(profile.backward, profile.backward_sigma, 0.0, derive_seed(seed, 2));
  JitterBuffer<Eigen::Vector2d> buffer(profile.backward, profile.jitter_buffer);

  SimClock clock;
  Scheduler sched(clock);
  for (std::size_t i = 0; i < motion.size(); ++i) {
    const double sent = motion.times()[i];
    sched.at(sent, 0, [&, i, sent] { forward.send({i, sent, row(i)}, sent); });
  }
  const double t_end = motion.end_time() + profile.forward_mean + 4.0 * profile.forward_sigma;

  SessionRun run;
  std::vector<Eigen::Vector2d> refs;
  std::vector<std::string> provenance;
  std::vector<Mode> modes;
  // Each control tick first runs every send scheduled up to and including
  // its instant.
  run.plant = drive_arm(
      config, t_end,
      [&](std::size_t, double now) {
        sched.run_until(now);
        for (auto& d : forward.poll(now)) comp.ingest(d.packet.sent, d.arrival, std::move(d.packet.payload), d.packet.seq);
        const auto ref = comp.tick(now);
        const auto& rec = comp.last_record();
        modes.push_back(rec.mode);
        if (run.recognized_task < 0) run.recognized_task = rec.task_id;
        provenance.emplace_back(to_string(ref.provenance));
        refs.emplace_back(ref.values(hx), ref.values(hy));
        return refs.back();
      },
      [&](std::size_t k, double now, const QpSolution& sol, const ArmController& arm) {
        run.max_kkt = std::max(run.max_kkt, sol.kkt_residual);
        run.max_equality = std::max(run.max_equality, sol.equality_violation);
        run.max_box_violation =
            std::max(run.max_box_violation, (sol.x.cwiseAbs() - arm.chain().qdot_max).maxCoeff());
        ++run.qp_solves;
        // Feedback: the plant state at this tick goes back to the operator.
        const Eigen::Vector2d hand = forward_kinematics(arm.chain()).back();
        backward.send({k, now, hand}, now);
        for (auto& d : backward.poll(now)) buffer.push(std::move(d.packet), d.arrival);
        buffer.pop(now);
      });
  for (auto& d : backward.poll(1e300)) buffer.push(std::move(d.packet), d.arrival);
  buffer.pop(1e300);

  Eigen::MatrixXd rv(static_cast<Eigen::Index>(refs.size()), 2);
  for (std::size_t i = 0; i < refs.size(); ++i) rv.row(static_cast<Eigen::Index>(i)) = refs[i].transpose();
  run.reference = Trajectory(cartesian_channels({"hand_x", "hand_y"}),
                             std::vector<double>(run.plant.times().begin(), run.plant.times().end()), rv,
                             config.controller.control_rate);
  run.provenance = std::move(provenance);
  run.modes = std::move(modes);
  run.transitions = comp.transitions();
  for (const auto& t : run.transitions) {
    if (t.to == Mode::kCompensating && run.compensating_from < 0.0) run.compensating_from = t.time;
    if (t.to == Mode::kReverting) run.revert_reasons.push_back(t.reason);
  }
  run.forward_lost = forward.lost_count();
  run.feedback_dropped = buffer.dropped();
  run.feedback_released = buffer.released();
  return run;
}

namespace {

struct MotionErrors {
  double with_transition_comp = 0.0;
  double with_transition_delayed = 0.0;
  std::optional<double> post_comp;
  std::optional<double> post_delayed;
  nlohmann::json detail;
};

MotionErrors evaluate_motion(const HarnessConfig& config, const std::vector<TaskModel>& library,
                             const Trajectory& motion, const Trajectory& ideal, const DelayProfile& profile,
                             std::uint64_t seed, const std::string& dump_stem,
                             const std::optional<std::filesystem::path>& dump_dir) {
  const auto comp = simulate_session(config, library, motion, profile, true, seed);
  const auto delayed = simulate_session(config, library, motion, profile, false, seed);
  const auto w = motion_window(motion, config.compensator.velocity_threshold);
  const double lead = profile.backward_total();
  const double end = w.end + config.settle;

  MotionErrors e;
  const auto wt_comp = rms_error(ideal, comp.plant, lead, std::make_pair(w.onset, end));
  const auto wt_del = rms_error(ideal, delayed.plant, lead, std::make_pair(w.onset, end));
  e.with_transition_comp = combined_rms(wt_comp);
  e.with_transition_delayed = combined_rms(wt_del);
  e.detail = {{"onset_s", w.onset},
              {"motion_end_s", w.end},
              {"realign_offset_s", lead},
              {"recognized_task", comp.recognized_task},
              {"with_transition", {{"compensated", e.with_transition_comp},
                                   {"delayed", e.with_transition_delayed},
                                   {"compensated_per_channel", wt_comp},
                                   {"delayed_per_channel", wt_del},
                                   {"window_s", {w.onset, end}}}},
              {"reverts", comp.revert_reasons},
              {"forward_lost", comp.forward_lost},
              {"feedback_dropped", comp.feedback_dropped},
              {"feedback_released", comp.feedback_released},
              {"qp", {{"solves", comp.qp_solves + delayed.qp_solves},
                      {"max_kkt_residual", std::max(comp.max_kkt, delayed.max_kkt)},
                      {"max_equality_violation", std::max(comp.max_equality, delayed.max_equality)},
                      {"max_box_violation", std::max(comp.max_box_violation, delayed.max_box_violation)}}}};
  nlohmann::json log = nlohmann::json::array();
  for (const auto& t : comp.transitions) {
    log.push_back({{"t", t.time}, {"from", to_string(t.from)}, {"to", to_string(t.to)}, {"reason", t.reason}});
  }
  e.detail["transitions"] = log;

  if (comp.compensating_from >= 0.0 && comp.compensating_from + lead < end) {
    const auto window = std::make_pair(comp.compensating_from + lead, end);
    const auto pc = rms_error(ideal, comp.plant, lead, window);
    const auto pd = rms_error(ideal, delayed.plant, lead, window);
    e.post_comp = combined_rms(pc);
    e.post_delayed = combined_rms(pd);
    e.detail["post_transition"] = {{"compensated", *e.post_comp},
                                   {"delayed", *e.post_delayed},
                                   {"compensated_per_channel", pc},
                                   {"delayed_per_channel", pd},
                                   {"window_s", {window.first, window.second}}};
  } else {
    e.detail["post_transition"] = nullptr;
  }
  if (dump_dir) {
    std::filesystem::create_directories(*dump_dir);
    dump_session(*dump_dir / (dump_stem + "_compensated.csv"), comp);
    dump_session(*dump_dir / (dump_stem + "_delayed.csv"), delayed);
    save_csv(ideal, *dump_dir / (dump_stem + "_ideal.csv"));
  }
  return e;
}

nlohmann::json summarize(const std::vector<double>& v) {
  return {{"mean", mean_of(v)}, {"std", std_of(v)}, {"count", v.size()}};
}

}  // namespace

nlohmann::json run_compensation_experiment(const HarnessConfig& config, const std::vector<TaskModel>& library,
                                           const std::vector<std::vector<Trajectory>>& test, std::uint64_t seed,
                                           const std::optional<std::filesystem::path>& dump_dir, bool sweep) {
  struct Item {
    const Trajectory* motion;
    std::string stem;
    Trajectory ideal;
  };
  std::vector<Item> items;
  for (std::size_t k = 0; k < test.size(); ++k) {
    for (std::size_t r = 0; r < test[k].size(); ++r) {
      items.push_back({&test[k][r], "task" + std::to_string(config.tasks[k].task_id) + "_rep" + std::to_string(r),
                       ideal_plant(config, test[k][r])});
    }
  }

  nlohmann::json motions = nlohmann::json::array();
  std::vector<double> wt_c, wt_d, pt_c, pt_d;
  std::uint64_t reverts = 0, dropped = 0, lost = 0;
  int no_transition = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto e = evaluate_motion(config, library, *items[i].motion, items[i].ideal, config.network,
                                   derive_seed(seed, 1000 + i), items[i].stem, dump_dir);
    wt_c.push_back(e.with_transition_comp);
    wt_d.push_back(e.with_transition_delayed);
    if (e.post_comp) {
      pt_c.push_back(*e.post_comp);
      pt_d.push_back(*e.post_delayed);
    } else {
      ++no_transition;
    }
    reverts += e.detail["reverts"].size();
    dropped += e.detail["feedback_dropped"].get<std::uint64_t>();
    lost += e.detail["forward_lost"].get<std::uint64_t>();
    auto d = e.detail;
    d["motion"] = items[i].stem;
    motions.push_back(d);
  }

  nlohmann::json report{{"profile", to_json(config.network)},
                        {"motions", motions},
                        {"with_transition", {{"compensated", summarize(wt_c)}, {"delayed", summarize(wt_d)}}},
                        {"post_transition", {{"compensated", summarize(pt_c)}, {"delayed", summarize(pt_d)}}},
                        {"motions_without_transition", no_transition},
                        {"counters", {{"reverts", reverts}, {"feedback_dropped", dropped}, {"forward_lost", lost}}}};
  const double pc = mean_of(pt_c), pd = mean_of(pt_d);
  report["post_transition"]["ratio"] = pd > 0.0 ? pc / pd : 0.0;

  if (sweep) {
    nlohmann::json curve = nlohmann::json::array();
    for (std::size_t r = 0; r < config.sweep_round_trips.size(); ++r) {
      const double rtt = config.sweep_round_trips[r];
      const auto profile = DelayProfile::from_round_trip(rtt);
      std::vector<double> c, d, pc2, pd2, floors;
      for (std::size_t i = 0; i < items.size(); ++i) {
        const auto e = evaluate_motion(config, library, *items[i].motion, items[i].ideal, profile,
                                       derive_seed(seed, 100000 + 1000 * r + i), "", std::nullopt);
        c.push_back(e.with_transition_comp);
        d.push_back(e.with_transition_delayed);
        if (e.post_comp) {
          pc2.push_back(*e.post_comp);
          pd2.push_back(*e.post_delayed);
        }
        if (rtt == 0.0) {
          const auto w = motion_window(*items[i].motion, config.compensator.velocity_threshold);
          const auto recon = ideal_plant(config, basis_reconstruction(*items[i].motion, config.fit,
                                                                      config.compensator.velocity_threshold));
          floors.push_back(combined_rms(rms_error(items[i].ideal, recon, 0.0, std::make_pair(w.onset, w.end + config.settle))));
        }
      }
      nlohmann::json point{{"round_trip_s", rtt},
                           {"with_transition", {{"compensated", summarize(c)}, {"delayed", summarize(d)}}},
                           {"post_transition", {{"compensated", summarize(pc2)}, {"delayed", summarize(pd2)}}}};
      if (rtt == 0.0) point["basis_floor"] = summarize(floors);
      curve.push_back(point);
    }
    report["sweep"] = curve;
  }
  return report;
}

void write_report(const nlohmann::json& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out << report.dump(2) << '\n';
  if (!out) fail(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

std::vector<TaskModel> library_for(const nlohmann::json& config, std::uint64_t seed) {
  const auto hc = harness_config_from_json(config);
  if (config.contains("library")) return load_or_fit_library(config, hc, Dataset{});
  return fit_library(hc, make_dataset(hc, seed).train);
}

nlohmann::json run_synth(const nlohmann::json& config, std::uint64_t seed, const std::filesystem::path& out_dir) {
  const auto hc = harness_config_from_json(config);
  const auto data = make_dataset(hc, seed);
  nlohmann::json files{{"train", nlohmann::json::array()}, {"test", nlohmann::json::array()}};
  for (std::size_t k = 0; k < hc.tasks.size(); ++k) {
    for (const auto& [name, set] : {std::pair{"train", &data.train[k]}, std::pair{"test", &data.test[k]}}) {
      for (std::size_t r = 0; r < set->size(); ++r) {
        const auto rel = std::filesystem::path(name) /
                         ("task" + std::to_string(hc.tasks[k].task_id) + "_rep" + std::to_string(r) + ".csv");
        std::filesystem::create_directories(out_dir / name);
        save_csv((*set)[r], out_dir / rel);
        files[name].push_back({{"task_id", hc.tasks[k].task_id}, {"file", rel.generic_string()}});
      }
    }
  }
  nlohmann::json report{{"command", "synth"}, {"seed", seed}, {"config", to_json(hc)}, {"files", files}};
  write_report(report, out_dir / "report.json");
  return report;
}

nlohmann::json run_fit(const nlohmann::json& config, std::uint64_t seed, const std::filesystem::path& out_dir) {
  auto hc = harness_config_from_json(config);
  std::vector<std::vector<Trajectory>> train;
  if (config.contains("demos")) {
    // {"demos": [{"task_id": k, "files": [...]}, ...]}
    hc.tasks.clear();
    for (const auto& d : config["demos"]) {
      TaskSpec t;
      t.task_id = d.at("task_id").get<int>();
      hc.tasks.push_back(t);
      std::vector<Trajectory> demos;
      for (const auto& f : d.at("files")) demos.push_back(load_csv(f.get<std::string>()));
      train.push_back(std::move(demos));
    }
  } else {
    train = make_dataset(hc, seed).train;
  }
  const auto lib = fit_library(hc, train);
  std::filesystem::create_directories(out_dir);
  write_report(library_to_json(lib), out_dir / "library.json");
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : lib) {
    nlohmann::json noise = nlohmann::json::array();
    for (const auto& c : t.channels) noise.push_back(c.promp.noise_variance());
    tasks.push_back({{"task_id", t.task_id}, {"mean_duration_s", t.mean_duration}, {"alphas", t.alphas},
                     {"sigma_xi2", noise}, {"demonstrations", t.alphas.size()}});
  }
  nlohmann::json report{{"command", "fit"}, {"seed", seed}, {"config", to_json(hc)}, {"tasks", tasks},
                        {"library", "library.json"}};
  write_report(report, out_dir / "report.json");
  return report;
}

nlohmann::json run_predict(const nlohmann::json& config, std::uint64_t seed, const std::filesystem::path& out_dir) {
  const auto hc = harness_config_from_json(config);
  const auto data = make_dataset(hc, seed);
  const auto lib = load_or_fit_library(config, hc, data);
  nlohmann::json report{{"command", "predict"}, {"seed", seed}, {"config", to_json(hc)},
                        {"prediction", run_prediction_experiment(hc, lib, data.test)}};
  write_report(report, out_dir / "report.json");
  return report;
}

nlohmann::json run_compensate(const nlohmann::json& config, std::uint64_t seed, const std::filesystem::path& out_dir) {
  const auto hc = harness_config_from_json(config);
  const auto data = make_dataset(hc, seed);
  const auto lib = load_or_fit_library(config, hc, data);
  const bool sweep = config.value("sweep", true);
  nlohmann::json report{{"command", "compensate"}, {"seed", seed}, {"config", to_json(hc)},
                        {"compensation", run_compensation_experiment(hc, lib, data.test, seed, out_dir / "sessions", sweep)}};
  write_report(report, out_dir / "report.json");
  return report;
}

}  // namespace prescient
