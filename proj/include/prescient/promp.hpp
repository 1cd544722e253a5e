#pragma once

#include "prescient/trajectory.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <span>
#include <vector>

namespace prescient {

/// Normalized Gaussian basis over the phase interval. Basis c (0-based) is
/// centred at c / (m - 1) and has variance `bandwidth` in phase units.
struct BasisConfig {
  int count = 20;
  double bandwidth = 1.0 / (2.0 * 19.0 * 19.0);
  double ridge = 1e-12;

  /// Bandwidth 1 / (2 (m-1)^2): half the squared centre spacing.
  static BasisConfig with_count(int count, double ridge = 1e-12);
  void validate() const;

  bool operator==(const BasisConfig&) const = default;
};

/// One row of the design matrix. Phase is clamped to [0, 1]. Entries are
/// positive and sum to one.
Eigen::VectorXd basis_row(double phase, const BasisConfig& config);

/// Rows are `basis_row(phases(i))`.
Eigen::MatrixXd basis_matrix(const Eigen::Ref<const Eigen::VectorXd>& phases,
                             const BasisConfig& config);

/// Ridge regression w = (Phi^T Phi + lambda I)^-1 Phi^T values.
/// Throws kUnderdeterminedFit when there are fewer samples than bases.
Eigen::VectorXd fit_weights(const Eigen::Ref<const Eigen::VectorXd>& phases,
                            const Eigen::Ref<const Eigen::VectorXd>& values,
                            const BasisConfig& config);

struct WeightDistribution {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  double regularization = 0.0;  // epsilon added to the diagonal
};

/// Sample mean and population covariance (1/D) of the weight vectors, plus
/// epsilon I with epsilon = jitter * mean diagonal (floored at 1e-12).
WeightDistribution fit_distribution(std::span<const Eigen::VectorXd> weights, double jitter = 1e-8);

struct Marginal {
  double mean = 0.0;
  double variance = 0.0;
};

/// Gaussian distribution over basis weights for one scalar channel.
class ProMP {
 public:
  ProMP(BasisConfig config, Eigen::VectorXd mean, Eigen::MatrixXd covariance,
        double noise_variance);

  const BasisConfig& config() const { return config_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return covariance_; }
  double noise_variance() const { return noise_variance_; }

  /// Mean phi^T mu and variance phi^T Sigma phi + noise variance.
  Marginal marginal(double phase) const;
  double mean_at(double phase) const;

  /// Bayesian update on a scalar observation `value` at `phase` with
  /// observation variance `obs_variance`. Returns the posterior.
  ProMP condition(double phase, double value, double obs_variance) const;
  void condition_in_place(double phase, double value, double obs_variance);

 private:
  BasisConfig config_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd covariance_;
  double noise_variance_ = 0.0;
};

struct TaskChannel {
  Channel channel;
  ProMP promp;
};

/// The ProMPs of one task, one per channel, plus the time modulations of
/// its demonstrations (alpha_i = mean duration / duration_i).
struct TaskModel {
  int task_id = 0;
  std::vector<TaskChannel> channels;
  std::vector<double> alphas;
  double mean_duration = 0.0;

  const BasisConfig& basis() const { return channels.front().promp.config(); }
  std::size_t channel_count() const { return channels.size(); }
  /// Per-channel means at `phase`.
  Eigen::VectorXd mean_at(double phase) const;
  void validate() const;
};

struct FitOptions {
  BasisConfig basis = BasisConfig::with_count(20);
  std::size_t phase_samples = kDefaultPhaseSamples;
  double covariance_jitter = 1e-8;  // relative to the mean prior variance
};

/// Learns one task from segmented demonstrations (each spans exactly the
/// motion). Needs at least two demonstrations with identical channel sets.
TaskModel fit_task(int task_id, std::span<const Trajectory> demos, const FitOptions& options = {});

/// Samples of the per-channel mean on t = 0, 1/rate, ..., duration
/// (inclusive endpoints) with phase t / duration.
Trajectory mean_trajectory(const TaskModel& task, double duration, double rate);

nlohmann::json to_json(const TaskModel& task);
TaskModel task_model_from_json(const nlohmann::json& j);

}  // namespace prescient
