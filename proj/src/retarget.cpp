#include "prescient/retarget.hpp"

#include "prescient/error.hpp"

#include <algorithm>
#include <set>

namespace prescient {
namespace {

Eigen::Vector2d line_direction(const Support& feet) {
  const Eigen::Vector2d d = feet.right - feet.left;
  if (d.squaredNorm() < 1e-24) fail(ErrorCode::kDegenerateSupport, "feet anchors coincide");
  return d;
}

Eigen::Vector2d unit_normal(const Eigen::Vector2d& d) {
  return Eigen::Vector2d(-d.y(), d.x()).normalized();
}

Eigen::Vector2d read_point(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2) fail(ErrorCode::kParse, "retarget: foot anchor must have 2 coordinates");
  return {v[0], v[1]};
}

Support read_support(const nlohmann::json& j) {
  Support s;
  s.left = read_point(j.at("left"));
  s.right = read_point(j.at("right"));
  s.normal_min = j.value("normal_min", s.normal_min);
  s.normal_max = j.value("normal_max", s.normal_max);
  return s;
}

}  // namespace

void RetargetConfig::validate() const {
  if (!(scale > 0.0)) fail(ErrorCode::kConfiguration, "retarget: scale must be positive");
  std::set<std::string> targets;
  for (const auto& [h, r] : joint_map) {
    if (!targets.insert(r).second) fail(ErrorCode::kConfiguration, "retarget: joint map is not injective at '" + r + "'");
  }
  line_direction(human_feet);
  line_direction(robot_feet);
  if (p0_robot.size() != p0_human.size() && p0_robot.size() != 0 && p0_human.size() != 0) {
    fail(ErrorCode::kConfiguration, "retarget: Cartesian origins differ in dimension");
  }
}

double retarget_joint(const std::string& human_channel, double q_human, const RetargetConfig& config,
                      std::string* robot_channel) {
  const auto it = config.joint_map.find(human_channel);
  if (it == config.joint_map.end()) fail(ErrorCode::kMapping, "retarget: unmapped channel '" + human_channel + "'");
  const auto q0r = config.q0_robot.find(it->second);
  const auto q0h = config.q0_human.find(human_channel);
  const double robot0 = q0r == config.q0_robot.end() ? 0.0 : q0r->second;
  const double human0 = q0h == config.q0_human.end() ? 0.0 : q0h->second;
  if (robot_channel != nullptr) *robot_channel = it->second;
  return robot0 + (q_human - human0);
}

Eigen::VectorXd scale_cartesian(const Eigen::Ref<const Eigen::VectorXd>& p_human,
                                const RetargetConfig& config) {
  const Eigen::Index n = p_human.size();
  const Eigen::VectorXd p0h = config.p0_human.size() == n ? config.p0_human : Eigen::VectorXd::Zero(n);
  const Eigen::VectorXd p0r = config.p0_robot.size() == n ? config.p0_robot : Eigen::VectorXd::Zero(n);
  return p0r + config.scale * (p_human - p0h);
}

double com_offset(const Eigen::Vector2d& com, const Support& feet) {
  const Eigen::Vector2d d = line_direction(feet);
  return (com - feet.left).dot(d) / d.squaredNorm();
}

double com_normal_offset(const Eigen::Vector2d& com, const Support& feet) {
  const Eigen::Vector2d n = unit_normal(line_direction(feet));
  const double span = feet.normal_max - feet.normal_min;
  if (!(span > 0.0)) fail(ErrorCode::kConfiguration, "retarget: normal displacement range is empty");
  return ((com - feet.left).dot(n) - feet.normal_min) / span;
}

Eigen::Vector2d reconstruct_com(double offset, const Support& feet) {
  const Eigen::Vector2d d = line_direction(feet);
  return feet.left + std::clamp(offset, 0.0, 1.0) * d;
}

Eigen::Vector2d reconstruct_com(double offset, double normal_offset, const Support& feet) {
  const Eigen::Vector2d n = unit_normal(line_direction(feet));
  const double disp = feet.normal_min + std::clamp(normal_offset, 0.0, 1.0) * (feet.normal_max - feet.normal_min);
  return reconstruct_com(offset, feet) + disp * n;
}

RetargetConfig retarget_config_from_json(const nlohmann::json& j) {
  try {
    RetargetConfig c;
    c.scale = j.value("scale", c.scale);
    if (j.contains("joint_map")) c.joint_map = j["joint_map"].get<std::map<std::string, std::string>>();
    if (j.contains("q0_R")) c.q0_robot = j["q0_R"].get<std::map<std::string, double>>();
    if (j.contains("q0_H")) c.q0_human = j["q0_H"].get<std::map<std::string, double>>();
    if (j.contains("p0_R")) {
      const auto v = j["p0_R"].get<std::vector<double>>();
      c.p0_robot = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    if (j.contains("p0_H")) {
      const auto v = j["p0_H"].get<std::vector<double>>();
      c.p0_human = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    if (j.contains("feet")) {
      c.human_feet = read_support(j["feet"]);
      c.robot_feet = c.human_feet;
    }
    if (j.contains("robot_feet")) c.robot_feet = read_support(j["robot_feet"]);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("retarget config: ") + e.what());
  }
}

}  // namespace prescient
