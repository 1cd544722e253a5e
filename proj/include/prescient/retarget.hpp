#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <map>
#include <string>

namespace prescient {

/// Ground-plane support line between two feet, plus the admissible
/// displacement range along its normal (used by the orthogonal CoM offset).
struct Support {
  Eigen::Vector2d left = Eigen::Vector2d::Zero();
  Eigen::Vector2d right = Eigen::Vector2d::UnitX();
  double normal_min = -0.1;  // m, most backward displacement
  double normal_max = 0.1;   // m, most forward displacement
};

struct RetargetConfig {
  double scale = 0.4;
  std::map<std::string, std::string> joint_map;  // human channel -> robot channel
  std::map<std::string, double> q0_robot;        // keyed by robot channel
  std::map<std::string, double> q0_human;        // keyed by human channel
  Eigen::VectorXd p0_robot;                      // Cartesian origin, robot frame
  Eigen::VectorXd p0_human;                      // Cartesian origin, operator frame
  Support human_feet;
  Support robot_feet;

  void validate() const;
};

/// q0_R + (q_H - q0_H) for the mapped channel. Returns the robot channel name
/// through `robot_channel` when non-null.
double retarget_joint(const std::string& human_channel, double q_human, const RetargetConfig& config,
                      std::string* robot_channel = nullptr);

/// p0_R + s (p_H - p0_H). Empty origins are treated as zero.
Eigen::VectorXd scale_cartesian(const Eigen::Ref<const Eigen::VectorXd>& p_human,
                                const RetargetConfig& config);

/// Normalized projection of `com` onto the left->right foot line. Not clamped.
double com_offset(const Eigen::Vector2d& com, const Support& feet);

/// Normalized displacement along the foot-line normal:
/// 0 at `normal_min`, 1 at `normal_max`. Not clamped.
double com_normal_offset(const Eigen::Vector2d& com, const Support& feet);

/// left + clamp(o, 0, 1) (right - left).
Eigen::Vector2d reconstruct_com(double offset, const Support& feet);

/// Along-line reconstruction plus the clamped normal displacement.
Eigen::Vector2d reconstruct_com(double offset, double normal_offset, const Support& feet);

RetargetConfig retarget_config_from_json(const nlohmann::json& j);

}  // namespace prescient
