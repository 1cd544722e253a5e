// Command-line front end. Uses the C interface only.

#include "prescient.h"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <string>
#include <thread>

namespace {

std::string read_config(const std::string& path) {
  if (path.empty()) return "{}";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int report_failure(prs_status status) {
  std::cerr << "error: " << prs_status_string(status) << ": " << prs_last_error() << "\n";
  return static_cast<int>(status);
}

using Runner = prs_status (*)(const char*, uint64_t, const char*, char**);

int run_experiment(Runner runner, const std::string& config_path, uint64_t seed, const std::string& out) {
  const std::string config = read_config(config_path);
  char* report = nullptr;
  const prs_status status = runner(config.c_str(), seed, out.c_str(), &report);
  if (status != PRS_OK) return report_failure(status);
  std::cout << report;
  prs_string_free(report);
  return 0;
}

int serve(const std::string& config_path, uint64_t seed, uint16_t port) {
  const std::string config = read_config(config_path);
  // Block the stop signals before any thread starts so only the waiter below
  // receives them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  prs_server* server = nullptr;
  prs_status status = prs_server_create(config.c_str(), seed, &server);
  if (status != PRS_OK) return report_failure(status);
  uint16_t bound = 0;
  status = prs_server_start(server, port, &bound);
  if (status != PRS_OK) {
    prs_server_free(server);
    return report_failure(status);
  }
  std::cout << "listening on port " << bound << std::endl;

  std::thread stopper([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    prs_server_stop(server);
  });
  prs_server_wait(server);
  char* sessions = nullptr;
  if (prs_server_sessions(server, &sessions) == PRS_OK) {
    std::cout << sessions << std::endl;
    prs_string_free(sessions);
  }
  stopper.join();
  prs_server_free(server);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delay-compensating teleoperation toolkit"};
  app.require_subcommand(1);
  std::string config;
  uint64_t seed = 1;
  std::string out = "out";
  uint16_t port = 7700;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Random seed");
  };
  struct Experiment {
    const char* name;
    const char* help;
    Runner runner;
  };
  const Experiment experiments[] = {
      {"synth", "Generate the synthetic demonstration dataset", &prs_run_synth},
      {"fit", "Fit the task library from demonstrations", &prs_run_fit},
      {"predict", "Prediction accuracy against observed fraction", &prs_run_predict},
      {"compensate", "Compensated and delayed sessions plus the round-trip sweep", &prs_run_compensate},
  };
  for (const auto& e : experiments) {
    auto* sub = app.add_subcommand(e.name, e.help);
    add_common(sub);
    sub->add_option("--out", out, "Output directory");
    sub->callback([&, runner = e.runner] { throw CLI::RuntimeError(run_experiment(runner, config, seed, out)); });
  }
  auto* srv = app.add_subcommand("serve", "Run the teleoperation service until SIGINT or SIGTERM");
  add_common(srv);
  srv->add_option("--port", port, "TCP port, 0 picks a free one");
  srv->callback([&] { throw CLI::RuntimeError(serve(config, seed, port)); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
