#include "prescient/controller.hpp"
#include "prescient/error.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

using namespace prescient;

namespace {

Chain random_chain(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
  Chain c = desk_arm();
  for (auto& q : c.q) q = u(rng);
  return c;
}

// Brute force over every assignment of {free, lower, upper} to the variables:
// solve the equality-constrained problem with the fixed ones pinned and keep
// the best feasible point.
Eigen::VectorXd brute_force_qp(const DenseQp& qp) {
  const Eigen::Index n = qp.hessian.rows();
  const Eigen::Index m = qp.eq_matrix.rows();
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_x;
  int combos = 1;
  for (Eigen::Index i = 0; i < n; ++i) combos *= 3;
  for (int code = 0; code < combos; ++code) {
    std::vector<int> state(static_cast<std::size_t>(n));
    int c = code;
    for (auto& s : state) {
      s = c % 3;
      c /= 3;
    }
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n + m, n + m);
    Eigen::VectorXd r = Eigen::VectorXd::Zero(n + m);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (state[static_cast<std::size_t>(i)] == 0) {
        k.row(i).head(n) = qp.hessian.row(i);
        if (m) k.row(i).tail(m) = qp.eq_matrix.col(i).transpose();
        r(i) = -qp.gradient(i);
      } else {
        k(i, i) = 1.0;
        r(i) = state[static_cast<std::size_t>(i)] == 1 ? qp.lower(i) : qp.upper(i);
      }
    }
    if (m) {
      k.bottomLeftCorner(m, n) = qp.eq_matrix;
      r.tail(m) = qp.eq_rhs;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(k);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd x = lu.solve(r).head(n);
    if ((x.array() < qp.lower.array() - 1e-9).any() || (x.array() > qp.upper.array() + 1e-9).any()) continue;
    if (m && (qp.eq_matrix * x - qp.eq_rhs).lpNorm<Eigen::Infinity>() > 1e-9) continue;
    const double f = 0.5 * x.dot(qp.hessian * x) + qp.gradient.dot(x);
    if (f < best) {
      best = f;
      best_x = x;
    }
  }
  return best_x;
}

DenseQp random_qp(std::mt19937_64& rng, int n, int m) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(n + 2, n);
  for (auto& x : a.reshaped()) x = g(rng);
  DenseQp qp;
  qp.hessian = a.transpose() * a + 1e-3 * Eigen::MatrixXd::Identity(n, n);
  qp.gradient.resize(n);
  for (auto& x : qp.gradient) x = 3.0 * g(rng);
  qp.eq_matrix.resize(m, n);
  for (auto& x : qp.eq_matrix.reshaped()) x = g(rng);
  qp.eq_rhs.resize(m);
  for (auto& x : qp.eq_rhs) x = 0.3 * g(rng);
  qp.lower = Eigen::VectorXd::Constant(n, -1.0);
  qp.upper = Eigen::VectorXd::Constant(n, 1.0);
  return qp;
}

}  // namespace

TEST(Kinematics, StraightChain) {
  Chain c = desk_arm();
  c.q.setZero();
  const auto p = forward_kinematics(c);
  EXPECT_NEAR(p.back().x(), 0.88, 1e-15);
  EXPECT_NEAR(p.back().y(), 0.0, 1e-15);
  const auto j = jacobian(c, 3);
  EXPECT_NEAR(j(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(j(1, 0), 0.88, 1e-15);
  EXPECT_NEAR(j(1, 3), 0.08, 1e-15);
  const auto j1 = jacobian(c, 1);
  EXPECT_EQ(j1.col(2).norm(), 0.0);
  EXPECT_EQ(j1.col(3).norm(), 0.0);
  EXPECT_THROW(jacobian(c, 4), Error);
}

TEST(Kinematics, FiniteDifferenceJacobian) {
  std::mt19937_64 rng(17);
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    const Chain c = random_chain(rng);
    for (std::size_t link = 0; link < c.joints(); ++link) {
      const auto j = jacobian(c, link);
      for (Eigen::Index col = 0; col < c.q.size(); ++col) {
        Chain plus = c, minus = c;
        plus.q(col) += h;
        minus.q(col) -= h;
        const Eigen::Vector2d fd = (forward_kinematics(plus)[link] - forward_kinematics(minus)[link]) / (2.0 * h);
        EXPECT_LT((fd - j.col(col)).cwiseAbs().maxCoeff(), 1e-5);
      }
    }
  }
}

TEST(Qp, UnconstrainedMatchesNormalEquations) {
  std::mt19937_64 rng(2);
  Chain c = random_chain(rng);
  c.qdot_max = Eigen::VectorXd::Constant(4, 1e6);
  TaskSet tasks;
  tasks.cartesian.push_back({3, Axes::kXY, Eigen::Vector2d(0.05, -0.02), 1.0});
  tasks.postural.push_back({{0, 1, 2, 3}, Eigen::VectorXd::Zero(4), 1e-3});
  const auto sol = solve(tasks, c);
  const Eigen::Matrix2Xd j = jacobian(c, 3);
  const Eigen::MatrixXd h = j.transpose() * j + 1e-3 * Eigen::MatrixXd::Identity(4, 4) +
                            tasks.tikhonov * Eigen::MatrixXd::Identity(4, 4);
  const Eigen::VectorXd oracle = h.ldlt().solve(j.transpose() * Eigen::Vector2d(0.05, -0.02));
  EXPECT_LT((sol.x - oracle).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Qp, FullRankTaskIsPseudoInverse) {
  Chain c;
  c.lengths = {0.3, 0.25};
  c.q = Eigen::Vector2d(0.4, 0.9);
  c.qdot_max = Eigen::Vector2d::Constant(1e6);
  TaskSet tasks;
  tasks.tikhonov = 0.0;
  tasks.cartesian.push_back({1, Axes::kXY, Eigen::Vector2d(0.1, 0.05), 1.0});
  const auto sol = solve(tasks, c);
  const Eigen::Matrix2d j = jacobian(c, 1);
  EXPECT_LT((sol.x - j.inverse() * Eigen::Vector2d(0.1, 0.05)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Qp, ConflictingPosturalTasks) {
  Chain c;
  c.lengths = {0.3};
  c.q = Eigen::VectorXd::Zero(1);
  c.qdot_max = Eigen::VectorXd::Constant(1, 10.0);
  TaskSet tasks;
  tasks.tikhonov = 0.0;
  tasks.postural.push_back({{0}, Eigen::VectorXd::Constant(1, 0.0), 1.0});
  tasks.postural.push_back({{0}, Eigen::VectorXd::Constant(1, 4.0), 3.0});
  EXPECT_NEAR(solve(tasks, c).x(0), 3.0, 1e-12);
  c.qdot_max(0) = 2.0;
  const auto clipped = solve(tasks, c);
  EXPECT_EQ(clipped.x(0), 2.0);
  EXPECT_LT(clipped.kkt_residual, 1e-12);
}

TEST(Qp, MatchesBruteForceActiveSets) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 4;
    const int m = trial % 3 == 0 ? 0 : 1;
    const auto qp = random_qp(rng, n, m);
    const auto oracle = brute_force_qp(qp);
    if (oracle.size() == 0) {
      EXPECT_THROW(solve_qp(qp), Error);
      continue;
    }
    const auto sol = solve_qp(qp);
    EXPECT_LT((sol.x - oracle).cwiseAbs().maxCoeff(), 1e-8) << "trial " << trial;
    EXPECT_TRUE((sol.x.array() >= qp.lower.array()).all());
    EXPECT_TRUE((sol.x.array() <= qp.upper.array()).all());
    EXPECT_LT(sol.kkt_residual, 1e-8);
    EXPECT_LT(sol.equality_violation, 1e-9);
  }
}

TEST(Qp, InfeasibleEquality) {
  DenseQp qp;
  qp.hessian = Eigen::Matrix2d::Identity();
  qp.gradient = Eigen::Vector2d::Zero();
  qp.eq_matrix = Eigen::RowVector2d(1.0, 1.0);
  qp.eq_rhs = Eigen::VectorXd::Constant(1, 5.0);
  qp.lower = Eigen::Vector2d::Constant(-1.0);
  qp.upper = Eigen::Vector2d::Constant(1.0);
  try {
    solve_qp(qp);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInfeasible);
  }
  qp.eq_rhs(0) = 2.0;  // reachable only at the corner
  const auto sol = solve_qp(qp);
  EXPECT_EQ(sol.x, Eigen::Vector2d(1.0, 1.0));
}

TEST(Qp, RedundantEqualityRows) {
  DenseQp qp;
  qp.hessian = Eigen::Matrix3d::Identity();
  qp.gradient = Eigen::Vector3d(1.0, -2.0, 0.5);
  qp.eq_matrix.resize(2, 3);
  qp.eq_matrix << 1, 1, 0, 2, 2, 0;
  qp.eq_rhs = Eigen::Vector2d(0.2, 0.4);
  qp.lower = Eigen::Vector3d::Constant(-5.0);
  qp.upper = Eigen::Vector3d::Constant(5.0);
  const auto sol = solve_qp(qp);
  EXPECT_TRUE(sol.regularized);
  EXPECT_LT(sol.equality_violation, 1e-12);
  // x1 + x2 = 0.2 with gradient (1, -2): x1 - x2 = -3 at the optimum.
  EXPECT_NEAR(sol.x(0), -1.4, 1e-10);
  EXPECT_NEAR(sol.x(1), 1.6, 1e-10);
  EXPECT_NEAR(sol.x(2), -0.5, 1e-10);
}

TEST(Qp, DimensionErrors) {
  DenseQp qp;
  qp.hessian = Eigen::Matrix2d::Identity();
  qp.gradient = Eigen::Vector3d::Zero();
  qp.lower = Eigen::Vector2d::Zero();
  qp.upper = Eigen::Vector2d::Zero();
  EXPECT_THROW(solve_qp(qp), Error);
}

TEST(Qp, TaskObjectiveAgreesWithQpObjective) {
  std::mt19937_64 rng(4);
  const Chain c = random_chain(rng);
  ArmController arm(desk_arm());
  const auto tasks = arm.tasks_for(Eigen::Vector2d(0.45, 0.2), Eigen::Vector2d(0.01, 0.0));
  const auto qp = build_ik_qp(tasks, arm.chain());
  std::normal_distribution<double> g(0.0, 0.3);
  Eigen::VectorXd a(4), b(4);
  for (int i = 0; i < 4; ++i) {
    a(i) = g(rng);
    b(i) = g(rng);
  }
  // Both objectives differ by a constant and the Tikhonov term.
  auto qp_obj = [&](const Eigen::VectorXd& x) {
    return 0.5 * x.dot(qp.hessian * x) + qp.gradient.dot(x) - tasks.tikhonov * x.squaredNorm();
  };
  EXPECT_NEAR(task_objective(tasks, arm.chain(), a) - task_objective(tasks, arm.chain(), b), qp_obj(a) - qp_obj(b),
              1e-12);
  (void)c;
}

TEST(Arm, TracksCircle) {
  ArmController arm(desk_arm());
  const Eigen::Vector2d center = arm.hand() + Eigen::Vector2d(-0.05, 0.0);
  const double r = 0.05, period = 4.0, dt = 0.01;
  double sq = 0.0;
  int n = 0;
  // One settle-in period, then one measured period.
  for (int k = 0; k <= static_cast<int>(2 * period / dt); ++k) {
    const double t = k * dt;
    const double w = 2.0 * std::numbers::pi / period;
    const Eigen::Vector2d ref = center + r * Eigen::Vector2d(std::cos(w * t), std::sin(w * t));
    const Eigen::Vector2d vel = r * w * Eigen::Vector2d(-std::sin(w * t), std::cos(w * t));
    const auto& sol = arm.step(ref, vel);
    EXPECT_LT(sol.kkt_residual, 1e-8);
    EXPECT_LT(sol.equality_violation, 1e-9);
    const Eigen::Vector2d next = center + r * Eigen::Vector2d(std::cos(w * (t + dt)), std::sin(w * (t + dt)));
    if (t >= period) {
      sq += (arm.hand() - next).squaredNorm();
      ++n;
    }
  }
  EXPECT_LT(std::sqrt(sq / n), 0.005);
}

TEST(Arm, HoldsWaistAndRespectsLimits) {
  ArmController arm(desk_arm());
  const Eigen::Vector2d waist0 = forward_kinematics(arm.chain()).front();
  for (int k = 0; k < 300; ++k) {
    const auto& sol = arm.step(Eigen::Vector2d(0.3, 0.4), Eigen::Vector2d::Zero());  // far target, saturates
    EXPECT_LE(sol.x.cwiseAbs().maxCoeff(), 2.0);
    EXPECT_LT(sol.kkt_residual, 1e-8);
  }
  EXPECT_NEAR(forward_kinematics(arm.chain()).front().x(), waist0.x(), 1e-9);
}

TEST(Arm, ConfigFromJson) {
  const auto c = arm_controller_config_from_json(nlohmann::json::parse(R"({"gain": 5, "weights": {"hand": 2}})"));
  EXPECT_DOUBLE_EQ(c.gain, 5.0);
  EXPECT_DOUBLE_EQ(c.weights.hand, 2.0);
  EXPECT_DOUBLE_EQ(c.weights.waist_height, 0.65);
}
