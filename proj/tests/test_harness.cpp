#include "prescient/error.hpp"
#include "prescient/harness.hpp"
#include "prescient/trajectory_io.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace prescient;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("prescient_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Trajectory line(const std::vector<double>& t, double slope, double offset) {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(t.size()), 1);
  for (std::size_t i = 0; i < t.size(); ++i) v(static_cast<Eigen::Index>(i), 0) = offset + slope * t[i];
  return Trajectory(cartesian_channels({"x"}), t, v, 100.0);
}

std::vector<double> grid(double t0, double t1, double dt) {
  std::vector<double> t;
  for (int i = 0; t0 + i * dt <= t1 + 1e-9; ++i) t.push_back(t0 + i * dt);
  return t;
}

// Small config so the full pipeline runs in well under a second.
nlohmann::json small_config() {
  return nlohmann::json::parse(R"({"test": 2, "sweep": false})");
}

}  // namespace

TEST(MinJerk, EndpointsAndVelocity) {
  EXPECT_DOUBLE_EQ(min_jerk(0.0), 0.0);
  EXPECT_DOUBLE_EQ(min_jerk(1.0), 1.0);
  EXPECT_DOUBLE_EQ(min_jerk(0.5), 0.5);
  EXPECT_NEAR(min_jerk_rate(0.0), 0.0, 1e-9);
  EXPECT_NEAR(min_jerk_rate(1.0), 0.0, 1e-9);
  EXPECT_NEAR(min_jerk_rate(1e-9), 0.0, 1e-9);
  EXPECT_NEAR(min_jerk_rate(1.0 - 1e-9), 0.0, 1e-9);
  // Rate against a central difference of the position profile.
  for (double s = 0.05; s < 1.0; s += 0.05) {
    const double h = 1e-6;
    EXPECT_NEAR(min_jerk_rate(s), (min_jerk(s + h) - min_jerk(s - h)) / (2 * h), 1e-6) << s;
  }
  EXPECT_NEAR(min_jerk_rate(0.5), 1.875, 1e-12);
}

TEST(Synth, DeterministicUnderSeed) {
  TaskSpec spec;
  spec.start = {0.4, 0.1};
  spec.goal = {0.3, 0.3};
  std::mt19937_64 a(7), b(7), c(8);
  const auto da = synth_demos(spec, a);
  const auto db = synth_demos(spec, b);
  const auto dc = synth_demos(spec, c);
  ASSERT_EQ(da.size(), 16u);
  for (std::size_t i = 0; i < da.size(); ++i) {
    EXPECT_EQ(da[i].values(), db[i].values());
    EXPECT_EQ(da[i].size(), db[i].size());
  }
  EXPECT_NE(da[0].values().row(400), dc[0].values().row(400));
}

TEST(Synth, ZeroSpreadGivesIdenticalRepetitions) {
  TaskSpec spec;
  spec.start = {0.4, 0.1};
  spec.goal = {0.3, 0.3};
  spec.duration_sigma = spec.via_sigma = spec.goal_sigma = 0.0;
  spec.repetitions = 4;
  std::mt19937_64 rng(3);
  const auto d = synth_demos(spec, rng);
  for (const auto& r : d) {
    ASSERT_EQ(r.size(), d[0].size());
    EXPECT_EQ(r.values(), d[0].values());
  }
}

TEST(Synth, EndpointsRespectSpread) {
  TaskSpec spec;
  spec.start = {0.4, 0.1};
  spec.goal = {0.3, 0.3};
  spec.repetitions = 40;
  std::mt19937_64 rng(11);
  for (const auto& r : synth_demos(spec, rng)) {
    EXPECT_EQ(r.sample(0), spec.start);
    const Eigen::Vector2d end = r.sample(r.size() - 1);
    EXPECT_LE(std::abs(end.x() - spec.goal.x()), 3 * spec.goal_sigma + 1e-12);
    EXPECT_LE(std::abs(end.y() - spec.goal.y()), 3 * spec.goal_sigma + 1e-12);
  }
}

TEST(Synth, RejectsBadSpec) {
  TaskSpec spec;
  spec.repetitions = 1;
  std::mt19937_64 rng(1);
  EXPECT_THROW(synth_demos(spec, rng), Error);
  spec.repetitions = 2;
  spec.duration = 0.0;
  EXPECT_THROW(synth_demos(spec, rng), Error);
}

TEST(Segment, CutsToMovingPartAndRestartsClock) {
  TaskSpec spec;
  spec.start = {0.4, 0.1};
  spec.goal = {0.3, 0.3};
  spec.duration_sigma = spec.via_sigma = spec.goal_sigma = 0.0;
  spec.repetitions = 2;
  std::mt19937_64 rng(1);
  const auto d = synth_demos(spec, rng);
  const auto seg = segment_motion(d[0], 0.02);
  EXPECT_DOUBLE_EQ(seg.start_time(), 0.0);
  EXPECT_GT(seg.duration(), 0.5 * spec.duration);
  EXPECT_LT(seg.duration(), spec.duration);
  const auto flat = line(grid(0, 2, 0.01), 0.0, 1.0);
  try {
    segment_motion(flat, 0.02);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kModel);
  }
}

TEST(Rms, IdentityIsZero) {
  const auto a = line(grid(0, 2, 0.01), 0.3, 0.1);
  EXPECT_EQ(rms_error(a, a), std::vector<double>{0.0});
}

TEST(Rms, ConstantOffset) {
  const auto a = line(grid(0, 2, 0.01), 0.3, 0.1);
  const auto b = line(grid(0, 2, 0.01), 0.3, 0.11);
  EXPECT_NEAR(rms_error(a, b)[0], 0.01, 1e-12);
}

TEST(Rms, KnownShiftRealigns) {
  // b runs 0.25 s behind a; comparing a(t) to b(t + 0.25) is exact.
  const auto t = grid(0, 3, 0.01);
  const auto a = line(t, 0.3, 0.1);
  const auto b = line(t, 0.3, 0.1 - 0.3 * 0.25);
  EXPECT_NEAR(rms_error(a, b, -0.25)[0], 0.0, 1e-12);
  EXPECT_NEAR(rms_error(a, b, 0.0)[0], 0.3 * 0.25, 1e-12);
}

TEST(Rms, WindowRestrictsSamples) {
  const auto t = grid(0, 2, 0.01);
  auto b = line(t, 0.0, 0.0);
  Eigen::MatrixXd v = b.values();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] > 1.0) v(static_cast<Eigen::Index>(i), 0) = 1.0;
  }
  const Trajectory a(b.channels(), t, v, 100.0);
  EXPECT_NEAR(rms_error(a, b, 0.0, std::make_pair(0.0, 0.99))[0], 0.0, 1e-15);
  EXPECT_NEAR(rms_error(a, b, 0.0, std::make_pair(1.01, 2.0))[0], 1.0, 1e-15);
}

TEST(Rms, NoOverlapIsAlignmentError) {
  const auto a = line(grid(0, 1, 0.01), 0.3, 0.1);
  const auto b = line(grid(5, 6, 0.01), 0.3, 0.1);
  try {
    rms_error(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAlignment);
  }
  EXPECT_THROW(rms_error(a, a, 0.0, std::make_pair(3.0, 4.0)), Error);
}

TEST(Rms, CombinedIsEuclidean) { EXPECT_DOUBLE_EQ(combined_rms({3.0, 4.0}), 5.0); }

TEST(Dataset, SplitIsDisjointAndFollowsStream) {
  auto hc = default_harness_config();
  const auto d = make_dataset(hc, 42);
  ASSERT_EQ(d.train.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    ASSERT_EQ(d.train[k].size(), 6u);
    ASSERT_EQ(d.test[k].size(), 10u);
    std::mt19937_64 rng(derive_seed(42, 100 + k));
    const auto all = synth_demos(hc.tasks[k], rng);
    for (int i = 0; i < 6; ++i) EXPECT_EQ(d.train[k][i].values(), all[i].values());
    for (int i = 0; i < 10; ++i) EXPECT_EQ(d.test[k][i].values(), all[6 + i].values());
    for (const auto& a : d.train[k]) {
      for (const auto& b : d.test[k]) {
        EXPECT_FALSE(a.size() == b.size() && a.values() == b.values());
      }
    }
  }
  hc.train = 12;
  EXPECT_THROW(make_dataset(hc, 1), Error);
}

TEST(Config, JsonRoundTrip) {
  auto j = to_json(default_harness_config());
  const auto again = to_json(harness_config_from_json(j));
  EXPECT_EQ(j, again);
  const auto c = harness_config_from_json(nlohmann::json::parse(
      R"({"train": 4, "compensator": {"horizon": 10}, "network": {"tau_f_ms": 500}})"));
  EXPECT_EQ(c.train, 4);
  EXPECT_EQ(c.compensator.horizon, 10u);
  // Fields absent from the override keep the harness defaults.
  EXPECT_EQ(c.compensator.cartesian_obs_variance, default_harness_config().compensator.cartesian_obs_variance);
  EXPECT_THROW(harness_config_from_json(nlohmann::json::parse(R"({"fractions": [1.5]})")), Error);
  EXPECT_THROW(harness_config_from_json(nlohmann::json::parse(R"({"tasks": [{"start": [0, 0]}]})")), Error);
}

TEST(Library, JsonRoundTrip) {
  const auto hc = default_harness_config();
  const auto lib = fit_library(hc, make_dataset(hc, 3).train);
  const auto back = library_from_json(library_to_json(lib));
  ASSERT_EQ(back.size(), lib.size());
  for (std::size_t k = 0; k < lib.size(); ++k) {
    EXPECT_EQ(back[k].task_id, lib[k].task_id);
    EXPECT_EQ(back[k].alphas, lib[k].alphas);
    for (std::size_t c = 0; c < lib[k].channel_count(); ++c) {
      EXPECT_EQ(back[k].channels[c].promp.mean(), lib[k].channels[c].promp.mean());
      EXPECT_EQ(back[k].channels[c].promp.covariance(), lib[k].channels[c].promp.covariance());
    }
  }
  EXPECT_THROW(library_from_json(nlohmann::json::object()), Error);
}

TEST(Prediction, FullObservationReachesBasisFloor) {
  const auto hc = default_harness_config();
  const auto data = make_dataset(hc, 5);
  const auto lib = fit_library(hc, data.train);
  const auto r = run_prediction_experiment(hc, lib, data.test);
  for (const auto& m : r["motions"]) {
    EXPECT_NEAR(m["full"]["rms"].get<double>(), m["basis_floor"].get<double>(), 1e-6);
  }
}

TEST(Compensation, ReportMatchesDumpedTrajectories) {
  const auto dir = scratch_dir("integrity");
  const auto report = run_compensate(small_config(), 9, dir);
  const auto& motions = report["compensation"]["motions"];
  ASSERT_EQ(motions.size(), 4u);
  int post = 0;
  for (const auto& m : motions) {
    const std::string stem = m["motion"];
    const auto ideal = load_csv(dir / "sessions" / (stem + "_ideal.csv"));
    const auto comp_csv = load_csv(dir / "sessions" / (stem + "_compensated.csv"));
    const auto del_csv = load_csv(dir / "sessions" / (stem + "_delayed.csv"));
    auto plant = [](const Trajectory& t) {
      return Trajectory(cartesian_channels({"hand_x", "hand_y"}),
                        std::vector<double>(t.times().begin(), t.times().end()), t.values().rightCols(2).eval(),
                        t.rate());
    };
    const double lead = m["realign_offset_s"];
    const auto w = m["with_transition"]["window_s"].get<std::vector<double>>();
    EXPECT_NEAR(combined_rms(rms_error(ideal, plant(comp_csv), lead, std::make_pair(w[0], w[1]))),
                m["with_transition"]["compensated"].get<double>(), 1e-9);
    EXPECT_NEAR(combined_rms(rms_error(ideal, plant(del_csv), lead, std::make_pair(w[0], w[1]))),
                m["with_transition"]["delayed"].get<double>(), 1e-9);
    if (!m["post_transition"].is_null()) {
      ++post;
      const auto pw = m["post_transition"]["window_s"].get<std::vector<double>>();
      EXPECT_NEAR(combined_rms(rms_error(ideal, plant(comp_csv), lead, std::make_pair(pw[0], pw[1]))),
                  m["post_transition"]["compensated"].get<double>(), 1e-9);
    }
    EXPECT_EQ(comp_csv.channels()[0].name, "ref_hand_x");
  }
  EXPECT_GT(post, 0);
  fs::remove_all(dir);
}

TEST(Determinism, SameSeedSameBytes) {
  const auto a = scratch_dir("det_a");
  const auto b = scratch_dir("det_b");
  run_compensate(small_config(), 21, a);
  run_compensate(small_config(), 21, b);
  EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
  EXPECT_EQ(slurp(a / "sessions" / "task0_rep0_compensated.csv"), slurp(b / "sessions" / "task0_rep0_compensated.csv"));
  run_predict(small_config(), 21, a);
  run_predict(small_config(), 21, b);
  EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
  const auto c = scratch_dir("det_c");
  run_predict(small_config(), 22, c);
  EXPECT_NE(slurp(a / "report.json"), slurp(c / "report.json"));
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST(Cli, SynthThenFitFromFiles) {
  const auto dir = scratch_dir("synth");
  const auto s = run_synth(small_config(), 4, dir);
  ASSERT_EQ(s["files"]["train"].size(), 12u);
  nlohmann::json fit_cfg = small_config();
  fit_cfg["demos"] = nlohmann::json::array();
  for (int k = 0; k < 2; ++k) {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& f : s["files"]["train"]) {
      if (f["task_id"] == k) files.push_back((dir / f["file"].get<std::string>()).string());
    }
    fit_cfg["demos"].push_back({{"task_id", k}, {"files", files}});
  }
  const auto from_files = run_fit(fit_cfg, 4, dir / "fit_files");
  const auto direct = run_fit(small_config(), 4, dir / "fit_direct");
  EXPECT_EQ(slurp(dir / "fit_files" / "library.json"), slurp(dir / "fit_direct" / "library.json"));
  EXPECT_EQ(from_files["tasks"].size(), 2u);
  fs::remove_all(dir);
}
