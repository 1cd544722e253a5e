/* Delay-compensating teleoperation toolkit: C interface.
 *
 * Every function returns a prs_status. On failure the message is available
 * from prs_last_error() on the same thread until the next failing call.
 * Handles are opaque and owned by the caller; free them with the matching
 * *_free function (NULL is accepted). Strings returned through char** are
 * freed with prs_string_free. JSON arguments are UTF-8 text; NULL means "{}".
 */
#ifndef PRESCIENT_H
#define PRESCIENT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PRS_API __declspec(dllexport)
#else
#define PRS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum prs_status {
  PRS_OK = 0,
  PRS_INVALID_ARGUMENT = 1,
  PRS_MALFORMED_INPUT = 2,
  PRS_UNDERDETERMINED_FIT = 3,
  PRS_INSUFFICIENT_DEMONSTRATIONS = 4,
  PRS_SINGULAR_CONDITIONING = 5,
  PRS_CONFIGURATION = 6,
  PRS_MAPPING = 7,
  PRS_DEGENERATE_SUPPORT = 8,
  PRS_INFEASIBLE = 9,
  PRS_PARSE = 10,
  PRS_IO = 11,
  PRS_ALIGNMENT = 12,
  PRS_MODEL = 13,
  PRS_INTERNAL = 14
} prs_status;

typedef enum prs_mode {
  PRS_MODE_DELAYED = 0,
  PRS_MODE_RECOGNIZING = 1,
  PRS_MODE_BLENDING = 2,
  PRS_MODE_COMPENSATING = 3,
  PRS_MODE_REVERTING = 4
} prs_mode;

typedef struct prs_trajectory prs_trajectory;
typedef struct prs_library prs_library;
typedef struct prs_compensator prs_compensator;
typedef struct prs_server prs_server;

PRS_API const char* prs_version(void);
PRS_API const char* prs_status_string(prs_status status);
/* Message of the last failure on this thread; "" when none. */
PRS_API const char* prs_last_error(void);
PRS_API void prs_string_free(char* s);

/* ---- trajectories ---- */

/* CSV with a header row "t,<channel>,..."; every channel loads as Cartesian. */
PRS_API prs_status prs_trajectory_load_csv(const char* path, prs_trajectory** out);
PRS_API prs_status prs_trajectory_save_csv(const prs_trajectory* traj, const char* path);
/* Row-major samples x channels values; all channels Cartesian. */
PRS_API prs_status prs_trajectory_create(const char* const* channel_names, size_t channels, const double* times,
                                         const double* values, size_t samples, double rate, prs_trajectory** out);
PRS_API size_t prs_trajectory_samples(const prs_trajectory* traj);
PRS_API size_t prs_trajectory_channels(const prs_trajectory* traj);
PRS_API prs_status prs_trajectory_value(const prs_trajectory* traj, size_t sample, size_t channel, double* out);
PRS_API prs_status prs_trajectory_time(const prs_trajectory* traj, size_t sample, double* out);
PRS_API void prs_trajectory_free(prs_trajectory* traj);

/* ---- task libraries ---- */

/* Fits one task per distinct id; demos[i] belongs to task_ids[i]. Reads the
 * experiment keys "basis", "phase_samples", "covariance_jitter" and
 * "compensator.velocity_threshold" (demo segmentation). */
PRS_API prs_status prs_library_fit(const char* config_json, const prs_trajectory* const* demos, const int* task_ids,
                                   size_t count, prs_library** out);
PRS_API prs_status prs_library_load_json(const char* path, prs_library** out);
PRS_API prs_status prs_library_save_json(const prs_library* lib, const char* path);
PRS_API size_t prs_library_tasks(const prs_library* lib);
PRS_API prs_status prs_library_task_id(const prs_library* lib, size_t index, int* out);
/* Mean trajectory of one task channel at phase in [0, 1]. */
PRS_API prs_status prs_library_mean(const prs_library* lib, size_t index, size_t channel, double phase, double* out);
PRS_API void prs_library_free(prs_library* lib);

/* ---- compensator ---- */

PRS_API prs_status prs_compensator_create(const prs_library* lib, const char* config_json, prs_compensator** out);
PRS_API size_t prs_compensator_channels(const prs_compensator* comp);
/* One operator sample sent at `sent` that arrived at `arrival`. */
PRS_API prs_status prs_compensator_ingest(prs_compensator* comp, double sent, double arrival, const double* values,
                                          size_t count, uint64_t seq);
/* Reference for time `now`; `values` receives `count` entries. */
PRS_API prs_status prs_compensator_tick(prs_compensator* comp, double now, double* values, size_t count,
                                        prs_mode* mode);
PRS_API prs_status prs_compensator_set_enabled(prs_compensator* comp, int enabled);
/* Transition log as a JSON array of {time, from, to, reason}. */
PRS_API prs_status prs_compensator_transitions(const prs_compensator* comp, char** json_out);
PRS_API void prs_compensator_free(prs_compensator* comp);

/* ---- experiments ----
 * Each writes report.json (and data files) under out_dir and returns the
 * report text through report_out when it is non-NULL. */

PRS_API prs_status prs_run_synth(const char* config_json, uint64_t seed, const char* out_dir, char** report_out);
PRS_API prs_status prs_run_fit(const char* config_json, uint64_t seed, const char* out_dir, char** report_out);
PRS_API prs_status prs_run_predict(const char* config_json, uint64_t seed, const char* out_dir, char** report_out);
PRS_API prs_status prs_run_compensate(const char* config_json, uint64_t seed, const char* out_dir, char** report_out);

/* ---- teleop service ----
 * config_json: experiment keys ("tasks", "fit", "library", ...) select the
 * task library, "service" holds the session settings. */

PRS_API prs_status prs_server_create(const char* config_json, uint64_t seed, prs_server** out);
/* Port 0 picks a free port; the bound port is stored in bound_port. */
PRS_API prs_status prs_server_start(prs_server* server, uint16_t port, uint16_t* bound_port);
/* Blocks until prs_server_stop is called from another thread. */
PRS_API prs_status prs_server_wait(prs_server* server);
PRS_API prs_status prs_server_stop(prs_server* server);
/* Statistics of every session so far as a JSON array. */
PRS_API prs_status prs_server_sessions(const prs_server* server, char** json_out);
PRS_API void prs_server_free(prs_server* server);

#ifdef __cplusplus
}
#endif

#endif /* PRESCIENT_H */
