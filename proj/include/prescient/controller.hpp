#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstddef>
#include <vector>

namespace prescient {

/// Planar serial chain. Joint i rotates link i relative to link i-1; angles
/// are relative, absolute link angles are cumulative sums.
struct Chain {
  std::vector<double> lengths;
  Eigen::VectorXd q;
  Eigen::VectorXd qdot_max;  // symmetric velocity bounds, >= 0
  Eigen::Vector2d base = Eigen::Vector2d::Zero();

  std::size_t joints() const { return lengths.size(); }
  void validate() const;
};

/// Endpoint of every link, base excluded.
std::vector<Eigen::Vector2d> forward_kinematics(const Chain& chain);

/// 2 x N positional Jacobian of the endpoint of `link`. Columns of joints
/// distal to the link are zero.
Eigen::Matrix2Xd jacobian(const Chain& chain, std::size_t link);

enum class Axes { kXY, kX, kY };

struct CartesianTask {
  std::size_t link = 0;
  Axes axes = Axes::kXY;
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();  // entries outside `axes` are ignored
  double weight = 1.0;
};

struct PosturalTask {
  std::vector<std::size_t> joints;
  Eigen::VectorXd velocity;  // one entry per joint in `joints`
  double weight = 1.0;
};

/// Rows solved exactly: jacobian * qdot == velocity.
struct EqualityTask {
  Eigen::MatrixXd jacobian;
  Eigen::VectorXd velocity;
};

struct TaskSet {
  std::vector<CartesianTask> cartesian;
  std::vector<PosturalTask> postural;
  std::vector<EqualityTask> equality;
  Eigen::VectorXd linear_cost;  // c in c^T qdot; empty means zero
  double tikhonov = 1e-9;       // added to the Hessian diagonal
};

/// Dense convex QP: min 1/2 x^T G x + d^T x  s.t.  E x = e,  lower <= x <= upper.
struct DenseQp {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd eq_matrix;
  Eigen::VectorXd eq_rhs;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd eq_multipliers;
  double objective = 0.0;
  double kkt_residual = 0.0;        // stationarity + multiplier-sign violation, inf-norm
  double equality_violation = 0.0;  // inf-norm of E x - e
  int iterations = 0;
  bool regularized = false;         // a rank-deficient KKT system needed the fallback solve
};

/// Primal active-set method. Feasibility is found first by a bounded
/// least-squares pass on the equality rows. Throws kInfeasible when the
/// constraints cannot be met.
QpSolution solve_qp(const DenseQp& qp);

/// Builds the weighted velocity-IK problem and solves it. Bounds are the
/// chain's symmetric velocity limits.
DenseQp build_ik_qp(const TaskSet& tasks, const Chain& chain);
QpSolution solve(const TaskSet& tasks, const Chain& chain);

/// Weighted task cost at `qdot` (Tikhonov term excluded).
double task_objective(const TaskSet& tasks, const Chain& chain, const Eigen::VectorXd& qdot);

/// q + qdot dt.
Chain step_plant(Chain chain, const Eigen::VectorXd& qdot, double dt);

/// Fixed task priorities of the whole-body controller, reused by the planar arm.
struct TaskWeights {
  double hand = 1.0;
  double waist_height = 0.65;
  double head_posture = 1.0;
  double torso_posture = 0.72;
  double distal_posture = 0.11;
};

/// Four-joint desk arm: torso, shoulder, elbow, wrist. The hand is the
/// endpoint of the last link, the waist the endpoint of the torso link.
Chain desk_arm();

struct ArmControllerConfig {
  TaskWeights weights;
  double gain = 10.0;          // 1/s, proportional feedback on positions
  double control_rate = 100.0; // Hz
};

ArmControllerConfig arm_controller_config_from_json(const nlohmann::json& j);

/// Tracks a hand position reference on the desk arm. Torso and wrist hold
/// their initial angles, the waist holds its height and its x position is an
/// equality constraint (centre-of-mass analog).
class ArmController {
 public:
  explicit ArmController(Chain chain, ArmControllerConfig config = {});

  /// One control period: builds tasks, solves, integrates the plant.
  const QpSolution& step(const Eigen::Vector2d& hand_ref, const Eigen::Vector2d& hand_ref_velocity);

  const Chain& chain() const { return chain_; }
  Eigen::Vector2d hand() const;
  TaskSet tasks_for(const Eigen::Vector2d& hand_ref, const Eigen::Vector2d& hand_ref_velocity) const;
  const QpSolution& last_solution() const { return last_; }
  std::size_t hand_link() const { return chain_.joints() - 1; }

 private:
  Chain chain_;
  Eigen::VectorXd q_initial_;
  Eigen::Vector2d waist_initial_;
  ArmControllerConfig config_;
  QpSolution last_;
};

}  // namespace prescient
