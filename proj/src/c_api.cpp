#include "prescient.h"

#include "prescient/compensator.hpp"
#include "prescient/error.hpp"
#include "prescient/harness.hpp"
#include "prescient/teleop.hpp"
#include "prescient/trajectory_io.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>

struct prs_trajectory {
  prescient::Trajectory traj;
};

struct prs_library {
  std::vector<prescient::TaskModel> tasks;
};

struct prs_compensator {
  prescient::Compensator comp;
};

struct prs_server {
  std::unique_ptr<prescient::TeleopServer> server;
};

namespace {

using prescient::ErrorCode;
using nlohmann::json;

thread_local std::string g_last_error;

prs_status set_error(prs_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

// Runs `f`, mapping every exception onto a status.
template <typename F>
prs_status guard(F&& f) {
  try {
    f();
    return PRS_OK;
  } catch (const prescient::Error& e) {
    return set_error(static_cast<prs_status>(e.code()), e.what());
  } catch (const json::exception& e) {
    return set_error(PRS_PARSE, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(PRS_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(PRS_INTERNAL, e.what());
  } catch (...) {
    return set_error(PRS_INTERNAL, "unknown exception");
  }
}

void require(bool ok, const char* what) {
  if (!ok) prescient::fail(ErrorCode::kInvalidArgument, what);
}

json parse_config(const char* text) {
  if (text == nullptr || *text == '\0') return json::object();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    prescient::fail(ErrorCode::kParse, std::string("config: ") + e.what());
  }
  if (!j.is_object()) prescient::fail(ErrorCode::kParse, "config: expected a JSON object");
  return j;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json stats_json(const prescient::SessionStats& s) {
  json transitions = json::array();
  for (const auto& t : s.transitions) {
    transitions.push_back({{"time", t.time}, {"from", to_string(t.from)}, {"to", to_string(t.to)}, {"reason", t.reason}});
  }
  return {{"commands", s.commands},
          {"errors", s.errors},
          {"ticks", s.ticks},
          {"frames_sent", s.frames_sent},
          {"frames_dropped", s.frames_dropped},
          {"forward_lost", s.forward_lost},
          {"max_blend_excess", s.max_blend_excess},
          {"transitions", transitions}};
}

using Runner = json (*)(const json&, std::uint64_t, const std::filesystem::path&);

prs_status run(Runner runner, const char* config_json, uint64_t seed, const char* out_dir, char** report_out) {
  return guard([&] {
    require(out_dir != nullptr, "out_dir is null");
    const auto report = runner(parse_config(config_json), seed, out_dir);
    if (report_out != nullptr) *report_out = copy_string(report.dump(2) + "\n");
  });
}

}  // namespace

extern "C" {

const char* prs_version(void) { return "0.1.0"; }

const char* prs_status_string(prs_status status) {
  if (status == PRS_OK) return "ok";
  if (status < PRS_INVALID_ARGUMENT || status > PRS_INTERNAL) return "unknown status";
  return prescient::to_string(static_cast<ErrorCode>(status));
}

const char* prs_last_error(void) { return g_last_error.c_str(); }

void prs_string_free(char* s) { std::free(s); }

prs_status prs_trajectory_load_csv(const char* path, prs_trajectory** out) {
  return guard([&] {
    require(path != nullptr && out != nullptr, "null argument");
    *out = new prs_trajectory{prescient::load_csv(path)};
  });
}

prs_status prs_trajectory_save_csv(const prs_trajectory* traj, const char* path) {
  return guard([&] {
    require(traj != nullptr && path != nullptr, "null argument");
    prescient::save_csv(traj->traj, path);
  });
}

prs_status prs_trajectory_create(const char* const* channel_names, size_t channels, const double* times,
                                 const double* values, size_t samples, double rate, prs_trajectory** out) {
  return guard([&] {
    require(channel_names != nullptr && times != nullptr && values != nullptr && out != nullptr, "null argument");
    std::vector<std::string> names;
    for (size_t c = 0; c < channels; ++c) {
      require(channel_names[c] != nullptr, "null channel name");
      names.emplace_back(channel_names[c]);
    }
    Eigen::MatrixXd v(static_cast<Eigen::Index>(samples), static_cast<Eigen::Index>(channels));
    for (size_t i = 0; i < samples; ++i) {
      for (size_t c = 0; c < channels; ++c) v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = values[i * channels + c];
    }
    *out = new prs_trajectory{prescient::Trajectory(prescient::cartesian_channels(names),
                                                    std::vector<double>(times, times + samples), std::move(v), rate)};
  });
}

size_t prs_trajectory_samples(const prs_trajectory* traj) { return traj ? traj->traj.size() : 0; }

size_t prs_trajectory_channels(const prs_trajectory* traj) { return traj ? traj->traj.channel_count() : 0; }

prs_status prs_trajectory_value(const prs_trajectory* traj, size_t sample, size_t channel, double* out) {
  return guard([&] {
    require(traj != nullptr && out != nullptr, "null argument");
    require(sample < traj->traj.size() && channel < traj->traj.channel_count(), "index out of range");
    *out = traj->traj.values()(static_cast<Eigen::Index>(sample), static_cast<Eigen::Index>(channel));
  });
}

prs_status prs_trajectory_time(const prs_trajectory* traj, size_t sample, double* out) {
  return guard([&] {
    require(traj != nullptr && out != nullptr, "null argument");
    require(sample < traj->traj.size(), "index out of range");
    *out = traj->traj.times()[sample];
  });
}

void prs_trajectory_free(prs_trajectory* traj) { delete traj; }

prs_status prs_library_fit(const char* config_json, const prs_trajectory* const* demos, const int* task_ids,
                           size_t count, prs_library** out) {
  return guard([&] {
    require(demos != nullptr && task_ids != nullptr && out != nullptr, "null argument");
    auto hc = prescient::harness_config_from_json(parse_config(config_json));
    std::map<int, std::vector<prescient::Trajectory>> by_task;
    for (size_t i = 0; i < count; ++i) {
      require(demos[i] != nullptr, "null demonstration");
      by_task[task_ids[i]].push_back(demos[i]->traj);
    }
    hc.tasks.clear();
    std::vector<std::vector<prescient::Trajectory>> train;
    for (auto& [id, set] : by_task) {
      prescient::TaskSpec t;
      t.task_id = id;
      hc.tasks.push_back(t);
      train.push_back(std::move(set));
    }
    *out = new prs_library{prescient::fit_library(hc, train)};
  });
}

prs_status prs_library_load_json(const char* path, prs_library** out) {
  return guard([&] {
    require(path != nullptr && out != nullptr, "null argument");
    std::ifstream in(path);
    if (!in) prescient::fail(ErrorCode::kIo, std::string("cannot open library '") + path + "'");
    *out = new prs_library{prescient::library_from_json(json::parse(in))};
  });
}

prs_status prs_library_save_json(const prs_library* lib, const char* path) {
  return guard([&] {
    require(lib != nullptr && path != nullptr, "null argument");
    prescient::write_report(prescient::library_to_json(lib->tasks), path);
  });
}

size_t prs_library_tasks(const prs_library* lib) { return lib ? lib->tasks.size() : 0; }

prs_status prs_library_task_id(const prs_library* lib, size_t index, int* out) {
  return guard([&] {
    require(lib != nullptr && out != nullptr, "null argument");
    require(index < lib->tasks.size(), "index out of range");
    *out = lib->tasks[index].task_id;
  });
}

prs_status prs_library_mean(const prs_library* lib, size_t index, size_t channel, double phase, double* out) {
  return guard([&] {
    require(lib != nullptr && out != nullptr, "null argument");
    require(index < lib->tasks.size() && channel < lib->tasks[index].channel_count(), "index out of range");
    *out = lib->tasks[index].channels[channel].promp.mean_at(phase);
  });
}

void prs_library_free(prs_library* lib) { delete lib; }

prs_status prs_compensator_create(const prs_library* lib, const char* config_json, prs_compensator** out) {
  return guard([&] {
    require(lib != nullptr && out != nullptr, "null argument");
    auto cfg = prescient::compensator_config_from_json(parse_config(config_json));
    *out = new prs_compensator{prescient::Compensator(lib->tasks, std::move(cfg))};
  });
}

size_t prs_compensator_channels(const prs_compensator* comp) { return comp ? comp->comp.channel_count() : 0; }

prs_status prs_compensator_ingest(prs_compensator* comp, double sent, double arrival, const double* values,
                                  size_t count, uint64_t seq) {
  return guard([&] {
    require(comp != nullptr && values != nullptr, "null argument");
    require(count == comp->comp.channel_count(), "value count does not match the channel count");
    comp->comp.ingest(sent, arrival, Eigen::Map<const Eigen::VectorXd>(values, static_cast<Eigen::Index>(count)), seq);
  });
}

prs_status prs_compensator_tick(prs_compensator* comp, double now, double* values, size_t count, prs_mode* mode) {
  return guard([&] {
    require(comp != nullptr && values != nullptr, "null argument");
    require(count == comp->comp.channel_count(), "value count does not match the channel count");
    const auto ref = comp->comp.tick(now);
    for (size_t i = 0; i < count; ++i) values[i] = ref.values(static_cast<Eigen::Index>(i));
    if (mode != nullptr) *mode = static_cast<prs_mode>(comp->comp.mode());
  });
}

prs_status prs_compensator_set_enabled(prs_compensator* comp, int enabled) {
  return guard([&] {
    require(comp != nullptr, "null argument");
    comp->comp.set_enabled(enabled != 0);
  });
}

prs_status prs_compensator_transitions(const prs_compensator* comp, char** json_out) {
  return guard([&] {
    require(comp != nullptr && json_out != nullptr, "null argument");
    json out = json::array();
    for (const auto& t : comp->comp.transitions()) {
      out.push_back({{"time", t.time}, {"from", to_string(t.from)}, {"to", to_string(t.to)}, {"reason", t.reason}});
    }
    *json_out = copy_string(out.dump());
  });
}

void prs_compensator_free(prs_compensator* comp) { delete comp; }

prs_status prs_run_synth(const char* config_json, uint64_t seed, const char* out_dir, char** report_out) {
  return run(&prescient::run_synth, config_json, seed, out_dir, report_out);
}

prs_status prs_run_fit(const char* config_json, uint64_t seed, const char* out_dir, char** report_out) {
  return run(&prescient::run_fit, config_json, seed, out_dir, report_out);
}

prs_status prs_run_predict(const char* config_json, uint64_t seed, const char* out_dir, char** report_out) {
  return run(&prescient::run_predict, config_json, seed, out_dir, report_out);
}

prs_status prs_run_compensate(const char* config_json, uint64_t seed, const char* out_dir, char** report_out) {
  return run(&prescient::run_compensate, config_json, seed, out_dir, report_out);
}

prs_status prs_server_create(const char* config_json, uint64_t seed, prs_server** out) {
  return guard([&] {
    require(out != nullptr, "null argument");
    const auto config = parse_config(config_json);
    const auto hc = prescient::harness_config_from_json(config);
    // Sessions run with the experiment's compensator and controller unless
    // the service section overrides them.
    prescient::ServiceConfig base;
    base.network = hc.network;
    base.compensator = hc.compensator;
    base.controller = hc.controller;
    base.seed = seed;
    const auto sc = prescient::service_config_from_json(config.value("service", json::object()), base);
    *out = new prs_server{std::make_unique<prescient::TeleopServer>(prescient::library_for(config, seed), sc)};
  });
}

prs_status prs_server_start(prs_server* server, uint16_t port, uint16_t* bound_port) {
  return guard([&] {
    require(server != nullptr, "null argument");
    const auto p = server->server->start(port);
    if (bound_port != nullptr) *bound_port = p;
  });
}

prs_status prs_server_wait(prs_server* server) {
  return guard([&] {
    require(server != nullptr, "null argument");
    server->server->wait();
  });
}

prs_status prs_server_stop(prs_server* server) {
  return guard([&] {
    require(server != nullptr, "null argument");
    server->server->stop();
  });
}

prs_status prs_server_sessions(const prs_server* server, char** json_out) {
  return guard([&] {
    require(server != nullptr && json_out != nullptr, "null argument");
    json out = json::array();
    for (const auto& s : server->server->sessions()) out.push_back(stats_json(s));
    *json_out = copy_string(out.dump());
  });
}

void prs_server_free(prs_server* server) { delete server; }

}  // extern "C"
