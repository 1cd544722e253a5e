#include "support.hpp"

#include "prescient/error.hpp"
#include "prescient/recognition.hpp"

#include <gtest/gtest.h>

#include <thread>

using namespace prescient;
using prescient::testing::reach;
using prescient::testing::reaches;

namespace {

std::vector<Observation> observe(const Trajectory& tr, double t_begin, double t_end) {
  std::vector<Observation> out;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const double t = tr.times()[i];
    if (t < t_begin || t > t_end) continue;
    out.push_back({t, t + 0.75, tr.sample(i), i});
  }
  return out;
}

std::vector<TaskModel> two_tasks(std::mt19937_64& rng) {
  const Eigen::Vector2d start(0.5, 0.1);
  const auto left = reaches(rng, start, start + Eigen::Vector2d(-0.1, 0.2), 6);
  const auto right = reaches(rng, start, start + Eigen::Vector2d(-0.1, -0.2), 6);
  return {fit_task(0, left), fit_task(1, right)};
}

}  // namespace

TEST(Recognition, RampOnset) {
  // Rest until 1.0 s, then 0.2 m/s; threshold 0.05 m/s.
  std::vector<Observation> obs;
  for (int i = 0; i <= 300; ++i) {
    const double t = i * 0.01;
    obs.push_back({t, t, Eigen::VectorXd::Constant(1, t < 1.0 ? 0.0 : 0.2 * (t - 1.0)), static_cast<std::uint64_t>(i)});
  }
  const auto t0 = detect_motion_start(obs, 0.05, {true});
  ASSERT_TRUE(t0);
  EXPECT_NEAR(*t0, 1.0, 0.01 + 1e-12);
}

TEST(Recognition, NoMotionNoOnset) {
  std::vector<Observation> obs;
  for (int i = 0; i < 50; ++i) obs.push_back({i * 0.01, 0.0, Eigen::VectorXd::Constant(1, 0.1), 0});
  EXPECT_FALSE(detect_motion_start(obs, 0.05, {true}));
}

TEST(Recognition, MaskIgnoresAngularChannels) {
  std::vector<Observation> obs;
  for (int i = 0; i < 50; ++i) obs.push_back({i * 0.01, 0.0, Eigen::Vector2d(0.0, 0.5 * i), 0});
  EXPECT_FALSE(detect_motion_start(obs, 0.05, {true, false}));
  EXPECT_TRUE(detect_motion_start(obs, 0.05, {true, true}));
}

TEST(Recognition, RequireRestSkipsOngoingMotion) {
  std::vector<Observation> obs;
  for (int i = 0; i < 300; ++i) {
    const double t = i * 0.01;
    double y = 0.0;
    if (t < 1.0) y = 0.3 * t;            // already moving
    else if (t < 2.0) y = 0.3;           // rest
    else y = 0.3 + 0.3 * (t - 2.0);      // new motion
    obs.push_back({t, t, Eigen::VectorXd::Constant(1, y), 0});
  }
  EXPECT_NEAR(*detect_motion_start(obs, 0.05, {true}), 0.0, 1e-12);
  EXPECT_NEAR(*detect_motion_start(obs, 0.05, {true}, true), 2.0, 0.01 + 1e-12);
}

TEST(Recognition, MotionExtent) {
  Trajectory tr = reach({0, 0}, {0.2, 0}, 2.0, 100.0, Eigen::Vector2d::Zero(), 1.0);
  const auto ext = motion_extent(tr, 0.02, {true, true});
  ASSERT_TRUE(ext);
  EXPECT_GT(ext->first, 1.0);
  EXPECT_LT(ext->first, 1.3);
  EXPECT_GT(ext->second, 2.7);
  EXPECT_LT(ext->second, 3.0 + 1e-12);
}

TEST(Recognition, BufferSortsBySenderTime) {
  ObservationBuffer buf;
  buf.push({0.2, 1.0, Eigen::VectorXd::Zero(1), 2});
  buf.push({0.1, 1.1, Eigen::VectorXd::Zero(1), 1});
  std::thread t([&] { buf.push({0.3, 1.2, Eigen::VectorXd::Zero(1), 3}); });
  t.join();
  const auto fresh = buf.sync();
  ASSERT_EQ(fresh.size(), 3u);
  EXPECT_EQ(fresh[0].seq, 2u);
  ASSERT_EQ(buf.samples().size(), 3u);
  EXPECT_EQ(buf.samples()[0].seq, 1u);
  EXPECT_EQ(buf.samples()[2].seq, 3u);
  buf.discard_before(0.15);
  EXPECT_EQ(buf.samples().size(), 2u);
  EXPECT_TRUE(buf.sync().empty());
}

TEST(Recognition, TwoTasksOneSecond) {
  std::mt19937_64 rng(42);
  const auto lib = two_tasks(rng);
  const Eigen::Vector2d start(0.5, 0.1);
  int correct = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int k = trial % 2;
    const Eigen::Vector2d goal = start + Eigen::Vector2d(-0.1, k == 0 ? 0.2 : -0.2);
    const auto test = reaches(rng, start, goal, 1)[0];
    const auto obs = observe(test, 0.0, 1.0);
    if (recognize(lib, obs, 0.0).task_id == k) ++correct;
  }
  EXPECT_EQ(correct, 20);
}

TEST(Recognition, TiesGoToLowestId) {
  std::mt19937_64 rng(1);
  auto lib = two_tasks(rng);
  lib[1] = lib[0];
  lib[0].task_id = 5;
  lib[1].task_id = 3;
  const auto obs = observe(reach({0.5, 0.1}, {0.4, 0.2}, 4.0, 100.0), 0.0, 1.0);
  const auto r = recognize(lib, obs, 0.0);
  EXPECT_EQ(r.task_id, 3);
  EXPECT_EQ(r.task_index, 1u);
  EXPECT_THROW(recognize({}, obs, 0.0), Error);
}

TEST(Recognition, AlphaEstimate) {
  std::mt19937_64 rng(4);
  const Eigen::Vector2d start(0.5, 0.1), goal(0.4, 0.2);
  auto demos = reaches(rng, start, goal, 6, 4.0, 0.0, 0.0);
  auto task = fit_task(0, demos);
  task.alphas = {0.8, 1.0, 1.25};
  const auto fast = reach(start, goal, task.mean_duration / 1.25, 100.0);
  EXPECT_DOUBLE_EQ(estimate_alpha(task, observe(fast, 0.0, 1.5), 0.0), 1.25);
  const auto slow = reach(start, goal, task.mean_duration / 0.8, 100.0);
  EXPECT_DOUBLE_EQ(estimate_alpha(task, observe(slow, 0.0, 1.5), 0.0), 0.8);
}

TEST(Recognition, Divergence) {
  std::mt19937_64 rng(8);
  const auto task = fit_task(0, reaches(rng, {0.5, 0.1}, {0.4, 0.2}, 6));
  const double phase = 0.5;
  const Eigen::VectorXd mean = task.mean_at(phase);
  const ChannelMask mask{true, true};
  EXPECT_EQ(divergence_check(task, phase, mean, 0.05, mask), Divergence::kWithin);
  const double sd = std::sqrt(task.channels[0].promp.marginal(phase).variance);
  Eigen::VectorXd off = mean;
  off(0) += sd + 0.05 + 1e-3;
  EXPECT_EQ(divergence_check(task, phase, off, 0.05, mask), Divergence::kDiverged);
  off(0) = mean(0) + sd + 0.05 - 1e-3;
  EXPECT_EQ(divergence_check(task, phase, off, 0.05, mask), Divergence::kWithin);
  off(0) = mean(0) + 0.30;
  EXPECT_EQ(divergence_check(task, phase, off, 0.05, {false, true}), Divergence::kWithin);
}

TEST(Recognition, DivergenceHandCase) {
  // Marginal std 0.02 everywhere: zero weight covariance, noise variance 4e-4.
  const auto cfg = BasisConfig::with_count(4);
  TaskModel task;
  task.channels.push_back({{"hand_x", ChannelKind::kCartesian, "m"},
                           ProMP(cfg, Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Zero(4, 4), 4e-4)});
  task.alphas = {1.0};
  task.mean_duration = 1.0;
  EXPECT_EQ(divergence_check(task, 0.4, Eigen::VectorXd::Constant(1, 0.30), 0.05, {true}), Divergence::kDiverged);
  EXPECT_EQ(divergence_check(task, 0.4, Eigen::VectorXd::Constant(1, 0.069), 0.05, {true}), Divergence::kWithin);
}
