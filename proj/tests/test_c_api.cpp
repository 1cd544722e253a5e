#include "prescient.h"

#include <gtest/gtest.h>
#include <json.hpp>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

extern "C" int prs_c_header_check(void);

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("prescient_c_api_" + std::to_string(::getpid())) / name;
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small and fast experiment configuration.
const char* kConfig = R"({"train": 4, "test": 1, "sweep": false})";

TEST(CApi, HeaderCompilesAsC) { EXPECT_EQ(prs_c_header_check(), 2); }

TEST(CApi, StatusStringsAndLastError) {
  EXPECT_STREQ(prs_status_string(PRS_OK), "ok");
  EXPECT_STREQ(prs_status_string(PRS_IO), "i/o error");
  EXPECT_STREQ(prs_status_string(static_cast<prs_status>(99)), "unknown status");
  EXPECT_STRNE(prs_version(), "");

  prs_trajectory* t = nullptr;
  EXPECT_EQ(prs_trajectory_load_csv(nullptr, &t), PRS_INVALID_ARGUMENT);
  EXPECT_STRNE(prs_last_error(), "");
  EXPECT_EQ(prs_trajectory_load_csv("/nonexistent/x.csv", &t), PRS_IO);
  EXPECT_EQ(t, nullptr);
  EXPECT_NE(std::string(prs_last_error()).find("x.csv"), std::string::npos);
  EXPECT_EQ(prs_run_predict("{not json", 1, scratch("bad").c_str(), nullptr), PRS_PARSE);
  EXPECT_EQ(prs_run_predict("[]", 1, scratch("bad").c_str(), nullptr), PRS_PARSE);

  // Free functions accept null.
  prs_trajectory_free(nullptr);
  prs_library_free(nullptr);
  prs_compensator_free(nullptr);
  prs_server_free(nullptr);
  prs_string_free(nullptr);
}

TEST(CApi, TrajectoryRoundTrip) {
  const char* names[] = {"hand_x", "hand_y"};
  const double times[] = {0.0, 0.01, 0.02};
  const double values[] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  prs_trajectory* t = nullptr;
  ASSERT_EQ(prs_trajectory_create(names, 2, times, values, 3, 100.0, &t), PRS_OK);
  const auto path = scratch("traj") / "t.csv";
  ASSERT_EQ(prs_trajectory_save_csv(t, path.c_str()), PRS_OK);
  prs_trajectory* back = nullptr;
  ASSERT_EQ(prs_trajectory_load_csv(path.c_str(), &back), PRS_OK);
  ASSERT_EQ(prs_trajectory_samples(back), 3u);
  ASSERT_EQ(prs_trajectory_channels(back), 2u);
  for (size_t i = 0; i < 3; ++i) {
    double tt = 0.0;
    ASSERT_EQ(prs_trajectory_time(back, i, &tt), PRS_OK);
    EXPECT_DOUBLE_EQ(tt, times[i]);
    for (size_t c = 0; c < 2; ++c) {
      double v = 0.0;
      ASSERT_EQ(prs_trajectory_value(back, i, c, &v), PRS_OK);
      EXPECT_DOUBLE_EQ(v, values[i * 2 + c]);
    }
  }
  double v = 0.0;
  EXPECT_EQ(prs_trajectory_value(back, 3, 0, &v), PRS_INVALID_ARGUMENT);
  prs_trajectory* bad = nullptr;
  const double backwards[] = {0.0, -0.01, 0.02};
  EXPECT_NE(prs_trajectory_create(names, 2, backwards, values, 3, 100.0, &bad), PRS_OK);
  prs_trajectory_free(t);
  prs_trajectory_free(back);
}

// synth -> fit through handles -> save/load -> compensator.
TEST(CApi, FitLibraryAndCompensate) {
  const auto dir = scratch("synth");
  char* report = nullptr;
  ASSERT_EQ(prs_run_synth(kConfig, 5, dir.c_str(), &report), PRS_OK) << prs_last_error();
  const auto r = json::parse(report);
  prs_string_free(report);
  std::vector<prs_trajectory*> demos;
  std::vector<int> ids;
  for (const auto& f : r["files"]["train"]) {
    prs_trajectory* t = nullptr;
    ASSERT_EQ(prs_trajectory_load_csv((dir / f["file"].get<std::string>()).c_str(), &t), PRS_OK);
    demos.push_back(t);
    ids.push_back(f["task_id"].get<int>());
  }
  prs_library* lib = nullptr;
  ASSERT_EQ(prs_library_fit(kConfig, demos.data(), ids.data(), demos.size(), &lib), PRS_OK) << prs_last_error();
  ASSERT_EQ(prs_library_tasks(lib), 2u);
  int id = -1;
  ASSERT_EQ(prs_library_task_id(lib, 1, &id), PRS_OK);
  EXPECT_EQ(id, 1);

  // One demonstration per task is not enough.
  prs_library* thin = nullptr;
  const prs_trajectory* one[] = {demos[0]};
  EXPECT_EQ(prs_library_fit(kConfig, one, ids.data(), 1, &thin), PRS_INSUFFICIENT_DEMONSTRATIONS);

  const auto lib_path = scratch("lib") / "library.json";
  ASSERT_EQ(prs_library_save_json(lib, lib_path.c_str()), PRS_OK);
  prs_library* loaded = nullptr;
  ASSERT_EQ(prs_library_load_json(lib_path.c_str(), &loaded), PRS_OK);
  for (double phase : {0.0, 0.3, 1.0}) {
    double a = 0.0, b = 0.0;
    ASSERT_EQ(prs_library_mean(lib, 0, 0, phase, &a), PRS_OK);
    ASSERT_EQ(prs_library_mean(loaded, 0, 0, phase, &b), PRS_OK);
    EXPECT_DOUBLE_EQ(a, b);
  }

  // A still operator stays in Delayed and is passed through.
  prs_compensator* comp = nullptr;
  ASSERT_EQ(prs_compensator_create(loaded, R"({"backward_delay_ms": 200})", &comp), PRS_OK) << prs_last_error();
  ASSERT_EQ(prs_compensator_channels(comp), 2u);
  const double hold[] = {0.3, 0.1};
  double out[2] = {0, 0};
  prs_mode mode = PRS_MODE_COMPENSATING;
  for (int k = 0; k < 100; ++k) {
    const double now = k * 0.01;
    ASSERT_EQ(prs_compensator_ingest(comp, now, now + 0.2, hold, 2, static_cast<uint64_t>(k)), PRS_OK);
    ASSERT_EQ(prs_compensator_tick(comp, now + 0.2, out, 2, &mode), PRS_OK);
  }
  EXPECT_EQ(mode, PRS_MODE_DELAYED);
  EXPECT_DOUBLE_EQ(out[0], 0.3);
  EXPECT_DOUBLE_EQ(out[1], 0.1);
  EXPECT_EQ(prs_compensator_tick(comp, 2.0, out, 1, &mode), PRS_INVALID_ARGUMENT);
  char* log = nullptr;
  ASSERT_EQ(prs_compensator_transitions(comp, &log), PRS_OK);
  EXPECT_EQ(json::parse(log), json::array());
  prs_string_free(log);

  prs_compensator_free(comp);
  prs_library_free(lib);
  prs_library_free(loaded);
  for (auto* t : demos) prs_trajectory_free(t);
}

TEST(CApi, ExperimentsAreDeterministic) {
  for (auto runner : {&prs_run_predict, &prs_run_compensate}) {
    const auto a = scratch("det_a"), b = scratch("det_b");
    ASSERT_EQ(runner(kConfig, 11, a.c_str(), nullptr), PRS_OK) << prs_last_error();
    ASSERT_EQ(runner(kConfig, 11, b.c_str(), nullptr), PRS_OK) << prs_last_error();
    EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
    EXPECT_FALSE(slurp(a / "report.json").empty());
  }
}

TEST(CApi, ServerLifecycle) {
  const auto dir = scratch("serve_fit");
  ASSERT_EQ(prs_run_fit(kConfig, 2, dir.c_str(), nullptr), PRS_OK);
  const json config{{"library", (dir / "library.json").string()},
                    {"service", {{"network", {{"tau_f_ms", 100.0}, {"tau_b_ms", 100.0}}}}}};
  prs_server* server = nullptr;
  ASSERT_EQ(prs_server_create(config.dump().c_str(), 1, &server), PRS_OK) << prs_last_error();
  uint16_t port = 0;
  ASSERT_EQ(prs_server_start(server, 0, &port), PRS_OK);
  ASSERT_GT(port, 0);
  EXPECT_EQ(prs_server_start(server, 0, &port), PRS_INVALID_ARGUMENT);

  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
  ASSERT_EQ(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
  const std::string bad = "hello\n";
  ::send(fd, bad.data(), bad.size(), MSG_NOSIGNAL);
  // The first line back is the error reply; feedback frames follow.
  std::string got;
  char c = 0;
  while (::recv(fd, &c, 1, 0) == 1 && c != '\n') got.push_back(c);
  EXPECT_TRUE(json::parse(got).contains("error")) << got;
  ::close(fd);

  ASSERT_EQ(prs_server_stop(server), PRS_OK);
  ASSERT_EQ(prs_server_wait(server), PRS_OK);
  char* sessions = nullptr;
  ASSERT_EQ(prs_server_sessions(server, &sessions), PRS_OK);
  const auto s = json::parse(sessions);
  prs_string_free(sessions);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0]["errors"], 1);
  prs_server_free(server);

  prs_server* bad_server = nullptr;
  EXPECT_EQ(prs_server_create(R"({"library": "/nonexistent.json"})", 1, &bad_server), PRS_IO);
  EXPECT_EQ(prs_server_create(R"({"library": "x", "service": {"feedback_rate_hz": -1}})", 1, &bad_server),
            PRS_CONFIGURATION);
}

}  // namespace
