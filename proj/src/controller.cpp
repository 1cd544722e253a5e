#include "prescient/controller.hpp"

#include "prescient/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace prescient {
namespace {

enum Bound : int { kFree = 0, kLower = -1, kUpper = 1 };

constexpr double kStepTol = 1e-12;
constexpr double kSignTol = 1e-11;

struct EqpResult {
  Eigen::VectorXd x_free;
  Eigen::VectorXd nu;
  bool regularized = false;
};

std::vector<Eigen::Index> free_indices(const std::vector<int>& state) {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (state[i] == kFree) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

// Equality-constrained subproblem over the free variables, fixed ones held.
EqpResult solve_eqp(const DenseQp& qp, const Eigen::VectorXd& x, const std::vector<Eigen::Index>& free) {
  const Eigen::Index n = x.size();
  const Eigen::Index nf = static_cast<Eigen::Index>(free.size());
  const Eigen::Index m = qp.eq_matrix.rows();
  EqpResult out;
  out.nu = Eigen::VectorXd::Zero(m);
  if (nf == 0) return out;

  Eigen::VectorXd x_fixed = x;
  for (Eigen::Index i : free) x_fixed(i) = 0.0;

  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nf + m, nf + m);
  Eigen::VectorXd rhs(nf + m);
  const Eigen::VectorXd g_fixed = qp.hessian * x_fixed + qp.gradient;
  for (Eigen::Index a = 0; a < nf; ++a) {
    for (Eigen::Index b = 0; b < nf; ++b) kkt(a, b) = qp.hessian(free[a], free[b]);
    for (Eigen::Index r = 0; r < m; ++r) {
      kkt(a, nf + r) = qp.eq_matrix(r, free[a]);
      kkt(nf + r, a) = qp.eq_matrix(r, free[a]);
    }
    rhs(a) = -g_fixed(free[a]);
  }
  if (m > 0) rhs.tail(m) = qp.eq_rhs - qp.eq_matrix * x_fixed;

  Eigen::VectorXd z;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
  if (lu.isInvertible()) {
    z = lu.solve(rhs);
  } else {
    out.regularized = true;
    z = kkt.completeOrthogonalDecomposition().solve(rhs);
    if ((kkt * z - rhs).norm() > 1e-9 * (1.0 + rhs.norm())) {
      fail(ErrorCode::kInfeasible, "qp: rank-deficient KKT system has no consistent solution");
    }
  }
  out.x_free = z.head(nf);
  out.nu = z.tail(m);
  (void)n;
  return out;
}

double bound_value(const DenseQp& qp, Eigen::Index i, int side) {
  return side == kLower ? qp.lower(i) : qp.upper(i);
}

// Ratio test along p restricted to the free set. Returns the step length and
// the index/side of the blocking bound (side kFree when unblocked).
std::pair<double, std::pair<Eigen::Index, int>> ratio_test(const DenseQp& qp, const Eigen::VectorXd& x,
                                                           const std::vector<Eigen::Index>& free,
                                                           const Eigen::VectorXd& p) {
  double alpha = 1.0;
  std::pair<Eigen::Index, int> block{-1, kFree};
  for (Eigen::Index a = 0; a < static_cast<Eigen::Index>(free.size()); ++a) {
    const Eigen::Index i = free[a];
    if (p(a) < 0.0) {
      const double s = (qp.lower(i) - x(i)) / p(a);
      if (s < alpha) {
        alpha = std::max(s, 0.0);
        block = {i, kLower};
      }
    } else if (p(a) > 0.0) {
      const double s = (qp.upper(i) - x(i)) / p(a);
      if (s < alpha) {
        alpha = std::max(s, 0.0);
        block = {i, kUpper};
      }
    }
  }
  return {alpha, block};
}

// Fixed bound whose multiplier has the wrong sign by the largest margin, or -1.
Eigen::Index worst_multiplier(const DenseQp& qp, const std::vector<int>& state, const Eigen::VectorXd& r,
                              double tol) {
  Eigen::Index worst = -1;
  double worst_violation = tol;
  for (std::size_t k = 0; k < state.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    if (state[k] == kFree || qp.lower(i) == qp.upper(i)) continue;
    const double violation = state[k] == kLower ? -r(i) : r(i);
    if (violation > worst_violation) {
      worst_violation = violation;
      worst = i;
    }
  }
  return worst;
}

// Bounded least squares on the equality rows: finds a point with E x = e
// inside the box, starting from the box-projected origin.
std::vector<int> find_feasible(const DenseQp& qp, Eigen::VectorXd& x, int& iterations) {
  const Eigen::Index n = x.size();
  std::vector<int> state(static_cast<std::size_t>(n), kFree);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i) = std::clamp(0.0, qp.lower(i), qp.upper(i));
    if (qp.lower(i) == qp.upper(i)) state[static_cast<std::size_t>(i)] = kLower;
  }
  if (qp.eq_matrix.rows() == 0) return state;

  const int max_iter = 50 * static_cast<int>(n + 1);
  for (int it = 0; it < max_iter; ++it, ++iterations) {
    const auto free = free_indices(state);
    Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(free.size()));
    if (!free.empty()) {
      Eigen::VectorXd x_fixed = x;
      Eigen::MatrixXd e_free(qp.eq_matrix.rows(), static_cast<Eigen::Index>(free.size()));
      for (Eigen::Index a = 0; a < static_cast<Eigen::Index>(free.size()); ++a) {
        x_fixed(free[a]) = 0.0;
        e_free.col(a) = qp.eq_matrix.col(free[a]);
      }
      const Eigen::VectorXd target = qp.eq_rhs - qp.eq_matrix * x_fixed;
      const Eigen::VectorXd best = e_free.completeOrthogonalDecomposition().solve(target);
      for (Eigen::Index a = 0; a < static_cast<Eigen::Index>(free.size()); ++a) p(a) = best(a) - x(free[a]);
    }
    if (p.size() == 0 || p.lpNorm<Eigen::Infinity>() <= kStepTol * (1.0 + x.lpNorm<Eigen::Infinity>())) {
      const Eigen::VectorXd r = qp.eq_matrix.transpose() * (qp.eq_matrix * x - qp.eq_rhs);
      const Eigen::Index drop = worst_multiplier(qp, state, r, kSignTol);
      if (drop < 0) return state;
      state[static_cast<std::size_t>(drop)] = kFree;
      continue;
    }
    const auto [alpha, block] = ratio_test(qp, x, free, p);
    for (Eigen::Index a = 0; a < static_cast<Eigen::Index>(free.size()); ++a) x(free[a]) += alpha * p(a);
    if (block.second != kFree) {
      x(block.first) = bound_value(qp, block.first, block.second);
      state[static_cast<std::size_t>(block.first)] = block.second;
    }
  }
  fail(ErrorCode::kInfeasible, "qp: feasibility search did not converge");
}

Eigen::MatrixXd select_rows(const Eigen::Matrix2Xd& j, Axes axes) {
  switch (axes) {
    case Axes::kX: return j.row(0);
    case Axes::kY: return j.row(1);
    case Axes::kXY: break;
  }
  return j;
}

Eigen::VectorXd select_rows(const Eigen::Vector2d& v, Axes axes) {
  switch (axes) {
    case Axes::kX: return v.head<1>();
    case Axes::kY: return v.tail<1>();
    case Axes::kXY: break;
  }
  return v;
}

}  // namespace

void Chain::validate() const {
  if (lengths.empty()) fail(ErrorCode::kConfiguration, "chain: no links");
  for (double l : lengths) {
    if (!(l > 0.0)) fail(ErrorCode::kConfiguration, "chain: link lengths must be positive");
  }
  const auto n = static_cast<Eigen::Index>(lengths.size());
  if (q.size() != n || qdot_max.size() != n) fail(ErrorCode::kConfiguration, "chain: joint vector sizes differ from link count");
  if ((qdot_max.array() < 0.0).any()) fail(ErrorCode::kConfiguration, "chain: velocity bounds must be non-negative");
}

std::vector<Eigen::Vector2d> forward_kinematics(const Chain& chain) {
  std::vector<Eigen::Vector2d> points;
  points.reserve(chain.joints());
  Eigen::Vector2d p = chain.base;
  double angle = 0.0;
  for (std::size_t i = 0; i < chain.joints(); ++i) {
    angle += chain.q(static_cast<Eigen::Index>(i));
    p += chain.lengths[i] * Eigen::Vector2d(std::cos(angle), std::sin(angle));
    points.push_back(p);
  }
  return points;
}

Eigen::Matrix2Xd jacobian(const Chain& chain, std::size_t link) {
  const std::size_t n = chain.joints();
  if (link >= n) fail(ErrorCode::kInvalidArgument, "jacobian: link index out of range");
  // Column j sums the link vectors from j to `link`, rotated by 90 degrees.
  std::vector<Eigen::Vector2d> segments(link + 1);
  double angle = 0.0;
  for (std::size_t i = 0; i <= link; ++i) {
    angle += chain.q(static_cast<Eigen::Index>(i));
    segments[i] = chain.lengths[i] * Eigen::Vector2d(-std::sin(angle), std::cos(angle));
  }
  Eigen::Matrix2Xd j = Eigen::Matrix2Xd::Zero(2, static_cast<Eigen::Index>(n));
  Eigen::Vector2d acc = Eigen::Vector2d::Zero();
  for (std::size_t i = link + 1; i-- > 0;) {
    acc += segments[i];
    j.col(static_cast<Eigen::Index>(i)) = acc;
  }
  return j;
}

QpSolution solve_qp(const DenseQp& qp) {
  const Eigen::Index n = qp.hessian.rows();
  if (qp.hessian.cols() != n || qp.gradient.size() != n || qp.lower.size() != n || qp.upper.size() != n ||
      (qp.eq_matrix.rows() > 0 && qp.eq_matrix.cols() != n) || qp.eq_rhs.size() != qp.eq_matrix.rows()) {
    fail(ErrorCode::kInvalidArgument, "qp: inconsistent dimensions");
  }
  if ((qp.lower.array() > qp.upper.array()).any()) fail(ErrorCode::kInfeasible, "qp: empty box");

  QpSolution sol;
  Eigen::VectorXd x(n);
  std::vector<int> state = find_feasible(qp, x, sol.iterations);
  const double eq_scale = 1.0 + (qp.eq_rhs.size() > 0 ? qp.eq_rhs.lpNorm<Eigen::Infinity>() : 0.0);
  if (qp.eq_matrix.rows() > 0 && (qp.eq_matrix * x - qp.eq_rhs).lpNorm<Eigen::Infinity>() > 1e-9 * eq_scale) {
    fail(ErrorCode::kInfeasible, "qp: equality constraints cannot be met within the bounds");
  }

  const int max_iter = 50 * static_cast<int>(n + 1);
  Eigen::VectorXd nu = Eigen::VectorXd::Zero(qp.eq_matrix.rows());
  bool converged = false;
  for (int it = 0; it < max_iter; ++it, ++sol.iterations) {
    const auto free = free_indices(state);
    const EqpResult eqp = solve_eqp(qp, x, free);
    sol.regularized = sol.regularized || eqp.regularized;
    Eigen::VectorXd p(static_cast<Eigen::Index>(free.size()));
    for (Eigen::Index a = 0; a < p.size(); ++a) p(a) = eqp.x_free(a) - x(free[a]);

    if (p.size() == 0 || p.lpNorm<Eigen::Infinity>() <= kStepTol * (1.0 + x.lpNorm<Eigen::Infinity>())) {
      nu = eqp.nu;
      for (Eigen::Index a = 0; a < p.size(); ++a) x(free[a]) = eqp.x_free(a);
      Eigen::VectorXd r = qp.hessian * x + qp.gradient;
      if (nu.size() > 0) r += qp.eq_matrix.transpose() * nu;
      const Eigen::Index drop = worst_multiplier(qp, state, r, kSignTol * (1.0 + r.lpNorm<Eigen::Infinity>()));
      if (drop < 0) {
        converged = true;
        break;
      }
      state[static_cast<std::size_t>(drop)] = kFree;
      continue;
    }
    const auto [alpha, block] = ratio_test(qp, x, free, p);
    for (Eigen::Index a = 0; a < p.size(); ++a) x(free[a]) += alpha * p(a);
    if (block.second != kFree) {
      x(block.first) = bound_value(qp, block.first, block.second);
      state[static_cast<std::size_t>(block.first)] = block.second;
    }
  }
  if (!converged) fail(ErrorCode::kInfeasible, "qp: active-set iteration limit reached");

  // Remove roundoff so bounds hold exactly.
  x = x.cwiseMax(qp.lower).cwiseMin(qp.upper);

  Eigen::VectorXd r = qp.hessian * x + qp.gradient;
  if (nu.size() > 0) r += qp.eq_matrix.transpose() * nu;
  double kkt = 0.0;
  for (std::size_t k = 0; k < state.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    if (state[k] == kFree) {
      kkt = std::max(kkt, std::abs(r(i)));
    } else if (qp.lower(i) != qp.upper(i)) {
      kkt = std::max(kkt, state[k] == kLower ? std::max(0.0, -r(i)) : std::max(0.0, r(i)));
    }
  }
  sol.x = x;
  sol.eq_multipliers = nu;
  sol.kkt_residual = kkt;
  sol.equality_violation =
      qp.eq_matrix.rows() > 0 ? (qp.eq_matrix * x - qp.eq_rhs).lpNorm<Eigen::Infinity>() : 0.0;
  sol.objective = 0.5 * x.dot(qp.hessian * x) + qp.gradient.dot(x);
  return sol;
}

DenseQp build_ik_qp(const TaskSet& tasks, const Chain& chain) {
  chain.validate();
  const auto n = static_cast<Eigen::Index>(chain.joints());
  // f(qdot) = qdot^T H qdot - 2 b^T qdot + c^T qdot + const, so G = 2H, d = c - 2b.
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  for (const auto& t : tasks.cartesian) {
    if (!(t.weight > 0.0)) fail(ErrorCode::kConfiguration, "ik: task weights must be positive");
    const Eigen::MatrixXd j = select_rows(jacobian(chain, t.link), t.axes);
    const Eigen::VectorXd v = select_rows(t.velocity, t.axes);
    h.noalias() += t.weight * j.transpose() * j;
    b.noalias() += t.weight * j.transpose() * v;
  }
  for (const auto& t : tasks.postural) {
    if (!(t.weight > 0.0)) fail(ErrorCode::kConfiguration, "ik: task weights must be positive");
    if (static_cast<Eigen::Index>(t.joints.size()) != t.velocity.size()) {
      fail(ErrorCode::kConfiguration, "ik: postural task joint/velocity sizes differ");
    }
    for (std::size_t k = 0; k < t.joints.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(t.joints[k]);
      if (i >= n) fail(ErrorCode::kConfiguration, "ik: postural task joint out of range");
      h(i, i) += t.weight;
      b(i) += t.weight * t.velocity(static_cast<Eigen::Index>(k));
    }
  }
  h.diagonal().array() += tasks.tikhonov;

  DenseQp qp;
  qp.hessian = 2.0 * h;
  qp.gradient = -2.0 * b;
  if (tasks.linear_cost.size() == n) qp.gradient += tasks.linear_cost;
  Eigen::Index rows = 0;
  for (const auto& e : tasks.equality) rows += e.jacobian.rows();
  qp.eq_matrix.resize(rows, n);
  qp.eq_rhs.resize(rows);
  Eigen::Index r = 0;
  for (const auto& e : tasks.equality) {
    if (e.jacobian.cols() != n || e.velocity.size() != e.jacobian.rows()) {
      fail(ErrorCode::kConfiguration, "ik: equality task dimensions");
    }
    qp.eq_matrix.middleRows(r, e.jacobian.rows()) = e.jacobian;
    qp.eq_rhs.segment(r, e.jacobian.rows()) = e.velocity;
    r += e.jacobian.rows();
  }
  qp.lower = -chain.qdot_max;
  qp.upper = chain.qdot_max;
  return qp;
}

QpSolution solve(const TaskSet& tasks, const Chain& chain) { return solve_qp(build_ik_qp(tasks, chain)); }

double task_objective(const TaskSet& tasks, const Chain& chain, const Eigen::VectorXd& qdot) {
  double f = 0.0;
  for (const auto& t : tasks.cartesian) {
    const Eigen::MatrixXd j = select_rows(jacobian(chain, t.link), t.axes);
    f += t.weight * (j * qdot - select_rows(t.velocity, t.axes)).squaredNorm();
  }
  for (const auto& t : tasks.postural) {
    for (std::size_t k = 0; k < t.joints.size(); ++k) {
      const double d = qdot(static_cast<Eigen::Index>(t.joints[k])) - t.velocity(static_cast<Eigen::Index>(k));
      f += t.weight * d * d;
    }
  }
  if (tasks.linear_cost.size() == qdot.size()) f += tasks.linear_cost.dot(qdot);
  return f;
}

Chain step_plant(Chain chain, const Eigen::VectorXd& qdot, double dt) {
  if (!(dt > 0.0)) fail(ErrorCode::kInvalidArgument, "step_plant: dt must be positive");
  if (qdot.size() != chain.q.size()) fail(ErrorCode::kInvalidArgument, "step_plant: velocity size mismatch");
  chain.q += qdot * dt;
  return chain;
}

Chain desk_arm() {
  Chain c;
  c.lengths = {0.25, 0.30, 0.25, 0.08};
  c.q.resize(4);
  c.q << std::numbers::pi / 2.0, -1.2, -1.3, -0.3;
  c.qdot_max = Eigen::VectorXd::Constant(4, 2.0);
  return c;
}

ArmControllerConfig arm_controller_config_from_json(const nlohmann::json& j) {
  ArmControllerConfig c;
  c.gain = j.value("gain", c.gain);
  c.control_rate = j.value("control_rate_hz", c.control_rate);
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    c.weights.hand = w.value("hand", c.weights.hand);
    c.weights.waist_height = w.value("waist_height", c.weights.waist_height);
    c.weights.head_posture = w.value("head_posture", c.weights.head_posture);
    c.weights.torso_posture = w.value("torso_posture", c.weights.torso_posture);
    c.weights.distal_posture = w.value("distal_posture", c.weights.distal_posture);
  }
  return c;
}

ArmController::ArmController(Chain chain, ArmControllerConfig config)
    : chain_(std::move(chain)), q_initial_(chain_.q), config_(config) {
  chain_.validate();
  if (chain_.joints() < 3) fail(ErrorCode::kConfiguration, "arm controller: need at least 3 joints");
  waist_initial_ = forward_kinematics(chain_).front();
}

Eigen::Vector2d ArmController::hand() const { return forward_kinematics(chain_).back(); }

TaskSet ArmController::tasks_for(const Eigen::Vector2d& hand_ref, const Eigen::Vector2d& hand_ref_velocity) const {
  const auto points = forward_kinematics(chain_);
  const std::size_t last = chain_.joints() - 1;
  const double k = config_.gain;
  TaskSet tasks;
  tasks.cartesian.push_back({last, Axes::kXY, hand_ref_velocity + k * (hand_ref - points.back()), config_.weights.hand});
  tasks.cartesian.push_back({0, Axes::kY, Eigen::Vector2d(0.0, k * (waist_initial_.y() - points.front().y())),
                             config_.weights.waist_height});
  tasks.postural.push_back({{0}, Eigen::VectorXd::Constant(1, k * (q_initial_(0) - chain_.q(0))),
                            config_.weights.torso_posture});
  const auto wrist = static_cast<Eigen::Index>(last);
  tasks.postural.push_back({{last}, Eigen::VectorXd::Constant(1, k * (q_initial_(wrist) - chain_.q(wrist))),
                            config_.weights.distal_posture});
  EqualityTask com_x;
  com_x.jacobian = jacobian(chain_, 0).row(0);
  com_x.velocity = Eigen::VectorXd::Constant(1, k * (waist_initial_.x() - points.front().x()));
  tasks.equality.push_back(std::move(com_x));
  return tasks;
}

const QpSolution& ArmController::step(const Eigen::Vector2d& hand_ref, const Eigen::Vector2d& hand_ref_velocity) {
  last_ = solve(tasks_for(hand_ref, hand_ref_velocity), chain_);
  chain_ = step_plant(std::move(chain_), last_.x, 1.0 / config_.control_rate);
  return last_;
}

}  // namespace prescient
