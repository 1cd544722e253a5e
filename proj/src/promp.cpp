#include "prescient/promp.hpp"

#include "prescient/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace prescient {

BasisConfig BasisConfig::with_count(int count, double ridge) {
  BasisConfig c;
  c.count = count;
  c.bandwidth = count > 1 ? 1.0 / (2.0 * (count - 1) * (count - 1)) : 1.0;
  c.ridge = ridge;
  return c;
}

void BasisConfig::validate() const {
  if (count < 2) fail(ErrorCode::kConfiguration, "basis: need at least 2 basis functions");
  if (!(bandwidth > 0.0)) fail(ErrorCode::kConfiguration, "basis: bandwidth must be positive");
  if (!(ridge > 0.0)) fail(ErrorCode::kConfiguration, "basis: ridge factor must be positive");
}

Eigen::VectorXd basis_row(double phase, const BasisConfig& config) {
  const double p = std::clamp(phase, 0.0, 1.0);
  const int m = config.count;
  Eigen::VectorXd expo(m);
  for (int c = 0; c < m; ++c) {
    const double d = p - static_cast<double>(c) / (m - 1);
    expo(c) = -0.5 * d * d / config.bandwidth;
  }
  // Normalization is invariant to a common shift of the exponents.
  const Eigen::VectorXd e = (expo.array() - expo.maxCoeff()).exp().matrix();
  return e / e.sum();
}

Eigen::MatrixXd basis_matrix(const Eigen::Ref<const Eigen::VectorXd>& phases,
                             const BasisConfig& config) {
  Eigen::MatrixXd phi(phases.size(), config.count);
  for (Eigen::Index i = 0; i < phases.size(); ++i) phi.row(i) = basis_row(phases(i), config).transpose();
  return phi;
}

Eigen::VectorXd fit_weights(const Eigen::Ref<const Eigen::VectorXd>& phases,
                            const Eigen::Ref<const Eigen::VectorXd>& values,
                            const BasisConfig& config) {
  config.validate();
  if (phases.size() != values.size()) {
    fail(ErrorCode::kInvalidArgument, "fit_weights: phase and value counts differ");
  }
  if (phases.size() < config.count) {
    std::ostringstream os;
    os << "fit_weights: " << phases.size() << " samples for " << config.count << " basis functions";
    fail(ErrorCode::kUnderdeterminedFit, os.str());
  }
  const Eigen::MatrixXd phi = basis_matrix(phases, config);
  Eigen::MatrixXd gram = phi.transpose() * phi;
  gram.diagonal().array() += config.ridge;
  return gram.ldlt().solve(phi.transpose() * values);
}

WeightDistribution fit_distribution(std::span<const Eigen::VectorXd> weights, double jitter) {
  if (!(jitter >= 0.0)) fail(ErrorCode::kInvalidArgument, "fit_distribution: negative covariance jitter");
  const std::size_t d = weights.size();
  if (d < 2) fail(ErrorCode::kInsufficientDemonstrations, "fit_distribution: need at least 2 demonstrations");
  const Eigen::Index m = weights.front().size();
  WeightDistribution out;
  out.mean = Eigen::VectorXd::Zero(m);
  for (const auto& w : weights) {
    if (w.size() != m) fail(ErrorCode::kInvalidArgument, "fit_distribution: weight sizes differ");
    out.mean += w;
  }
  out.mean /= static_cast<double>(d);
  out.covariance = Eigen::MatrixXd::Zero(m, m);
  for (const auto& w : weights) {
    const Eigen::VectorXd dev = w - out.mean;
    out.covariance.noalias() += dev * dev.transpose();
  }
  out.covariance /= static_cast<double>(d);
  out.regularization = std::max(jitter * out.covariance.diagonal().mean(), 1e-12);
  out.covariance.diagonal().array() += out.regularization;
  return out;
}

ProMP::ProMP(BasisConfig config, Eigen::VectorXd mean, Eigen::MatrixXd covariance,
             double noise_variance)
    : config_(config),
      mean_(std::move(mean)),
      covariance_(std::move(covariance)),
      noise_variance_(noise_variance) {
  config_.validate();
  if (mean_.size() != config_.count || covariance_.rows() != config_.count ||
      covariance_.cols() != config_.count) {
    fail(ErrorCode::kModel, "promp: weight dimensions do not match basis count");
  }
  if (!mean_.allFinite() || !covariance_.allFinite()) fail(ErrorCode::kModel, "promp: non-finite parameters");
  if (!(noise_variance_ >= 0.0)) fail(ErrorCode::kModel, "promp: negative noise variance");
}

Marginal ProMP::marginal(double phase) const {
  const Eigen::VectorXd phi = basis_row(phase, config_);
  return {phi.dot(mean_), phi.dot(covariance_ * phi) + noise_variance_};
}

double ProMP::mean_at(double phase) const { return basis_row(phase, config_).dot(mean_); }

ProMP ProMP::condition(double phase, double value, double obs_variance) const {
  ProMP out = *this;
  out.condition_in_place(phase, value, obs_variance);
  return out;
}

void ProMP::condition_in_place(double phase, double value, double obs_variance) {
  if (!(obs_variance >= 0.0)) fail(ErrorCode::kInvalidArgument, "condition: negative observation variance");
  const Eigen::VectorXd phi = basis_row(phase, config_);
  const Eigen::VectorXd sphi = covariance_ * phi;
  const double denom = obs_variance + phi.dot(sphi);
  if (!(denom > 1e-14)) {
    fail(ErrorCode::kSingularConditioning, "condition: observation on a deterministic primitive");
  }
  const Eigen::VectorXd gain = sphi / denom;
  mean_ += gain * (value - phi.dot(mean_));
  covariance_.noalias() -= gain * sphi.transpose();
  covariance_ = 0.5 * (covariance_ + covariance_.transpose()).eval();
}

Eigen::VectorXd TaskModel::mean_at(double phase) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(channels.size()));
  for (std::size_t i = 0; i < channels.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = channels[i].promp.mean_at(phase);
  }
  return out;
}

void TaskModel::validate() const {
  if (channels.empty()) fail(ErrorCode::kModel, "task model has no channels");
  for (const auto& c : channels) {
    if (!(c.promp.config() == channels.front().promp.config())) {
      fail(ErrorCode::kModel, "task model channels use different basis configurations");
    }
  }
  if (alphas.empty()) fail(ErrorCode::kModel, "task model has an empty time-modulation set");
  for (double a : alphas) {
    if (!(a > 0.0)) fail(ErrorCode::kModel, "task model has a non-positive time modulation");
  }
  if (!(mean_duration > 0.0)) fail(ErrorCode::kModel, "task model mean duration must be positive");
}

TaskModel fit_task(int task_id, std::span<const Trajectory> demos, const FitOptions& options) {
  options.basis.validate();
  if (demos.size() < 2) fail(ErrorCode::kInsufficientDemonstrations, "fit_task: need at least 2 demonstrations");
  const auto& channels = demos.front().channels();
  for (const auto& d : demos) {
    if (d.channels().size() != channels.size()) fail(ErrorCode::kMalformedInput, "fit_task: channel sets differ");
    for (std::size_t i = 0; i < channels.size(); ++i) {
      if (d.channels()[i].name != channels[i].name) fail(ErrorCode::kMalformedInput, "fit_task: channel sets differ");
    }
  }

  std::vector<PhasedTrajectory> phased;
  phased.reserve(demos.size());
  double total = 0.0;
  for (const auto& d : demos) {
    phased.push_back(to_phase(d, options.phase_samples));
    total += phased.back().duration;
  }

  TaskModel task;
  task.task_id = task_id;
  task.mean_duration = total / static_cast<double>(demos.size());
  for (const auto& p : phased) task.alphas.push_back(task.mean_duration / p.duration);

  const Eigen::MatrixXd phi = basis_matrix(phased.front().phase, options.basis);
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto col = static_cast<Eigen::Index>(c);
    std::vector<Eigen::VectorXd> weights;
    double residual = 0.0;
    std::size_t count = 0;
    for (const auto& p : phased) {
      weights.push_back(fit_weights(p.phase, p.values.col(col), options.basis));
      residual += (phi * weights.back() - p.values.col(col)).squaredNorm();
      count += p.size();
    }
    auto dist = fit_distribution(weights, options.covariance_jitter);
    task.channels.push_back({channels[c], ProMP(options.basis, std::move(dist.mean), std::move(dist.covariance),
                                                residual / static_cast<double>(count))});
  }
  return task;
}

Trajectory mean_trajectory(const TaskModel& task, double duration, double rate) {
  if (!(duration > 0.0) || !(rate > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "mean_trajectory: duration and rate must be positive");
  }
  const auto n = static_cast<std::size_t>(std::llround(duration * rate)) + 1;
  std::vector<double> times(n);
  Eigen::MatrixXd values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(task.channel_count()));
  for (std::size_t i = 0; i < n; ++i) {
    times[i] = (i + 1 == n) ? duration : static_cast<double>(i) / rate;
    values.row(static_cast<Eigen::Index>(i)) = task.mean_at(times[i] / duration).transpose();
  }
  std::vector<Channel> channels;
  for (const auto& c : task.channels) channels.push_back(c.channel);
  return Trajectory(std::move(channels), std::move(times), std::move(values), rate);
}

nlohmann::json to_json(const TaskModel& task) {
  nlohmann::json j;
  j["task_id"] = task.task_id;
  const auto& basis = task.basis();
  j["m"] = basis.count;
  j["h"] = basis.bandwidth;
  j["lambda"] = basis.ridge;
  j["channels"] = nlohmann::json::array();
  for (const auto& c : task.channels) {
    const auto& p = c.promp;
    std::vector<double> mu(p.mean().data(), p.mean().data() + p.mean().size());
    std::vector<double> sigma;
    sigma.reserve(static_cast<std::size_t>(p.covariance().size()));
    for (Eigen::Index r = 0; r < p.covariance().rows(); ++r) {
      for (Eigen::Index k = 0; k < p.covariance().cols(); ++k) sigma.push_back(p.covariance()(r, k));
    }
    j["channels"].push_back({{"name", c.channel.name},
                             {"kind", to_string(c.channel.kind)},
                             {"mu_w", mu},
                             {"sigma_w", sigma},
                             {"sigma_xi2", p.noise_variance()}});
  }
  j["alphas"] = task.alphas;
  j["mean_duration_s"] = task.mean_duration;
  return j;
}

TaskModel task_model_from_json(const nlohmann::json& j) {
  try {
    TaskModel task;
    task.task_id = j.at("task_id").get<int>();
    BasisConfig basis;
    basis.count = j.at("m").get<int>();
    basis.bandwidth = j.at("h").get<double>();
    basis.ridge = j.at("lambda").get<double>();
    basis.validate();
    const auto m = static_cast<Eigen::Index>(basis.count);
    for (const auto& c : j.at("channels")) {
      Channel channel;
      channel.name = c.at("name").get<std::string>();
      if (c.contains("kind")) channel.kind = channel_kind_from_string(c["kind"].get<std::string>());
      channel.unit = channel.kind == ChannelKind::kAngular ? "rad" : "m";
      const auto mu = c.at("mu_w").get<std::vector<double>>();
      const auto sigma = c.at("sigma_w").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(mu.size()) != m || static_cast<Eigen::Index>(sigma.size()) != m * m) {
        fail(ErrorCode::kParse, "task model: weight array sizes do not match m");
      }
      Eigen::VectorXd mean = Eigen::Map<const Eigen::VectorXd>(mu.data(), m);
      Eigen::MatrixXd cov(m, m);
      for (Eigen::Index r = 0; r < m; ++r) {
        for (Eigen::Index k = 0; k < m; ++k) cov(r, k) = sigma[static_cast<std::size_t>(r * m + k)];
      }
      task.channels.push_back({channel, ProMP(basis, std::move(mean), std::move(cov), c.at("sigma_xi2").get<double>())});
    }
    task.alphas = j.at("alphas").get<std::vector<double>>();
    task.mean_duration = j.at("mean_duration_s").get<double>();
    task.validate();
    return task;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("task model: ") + e.what());
  }
}

}  // namespace prescient
