#ifndef CIVICBIN_H
#define CIVICBIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CbStatus {
  CB_STATUS_OK = 0,
  CB_STATUS_NULL_ARGUMENT = 1,
  CB_STATUS_INVALID_UTF8 = 2,
  CB_STATUS_INVALID_JSON = 3,
  CB_STATUS_INVALID_ARGUMENT = 4,
  // The core refused the request; `cb_last_error_code` names the reason.
  CB_STATUS_REJECTED = 5,
  CB_STATUS_PANIC = 6,
} CbStatus;

typedef enum CbLed {
  CB_LED_GREEN = 0,
  CB_LED_YELLOW = 1,
  CB_LED_RED = 2,
} CbLed;

typedef enum CbComplaintState {
  CB_COMPLAINT_STATE_SUBMITTED = 0,
  CB_COMPLAINT_STATE_DISPATCHED = 1,
  CB_COMPLAINT_STATE_RESOLVED = 2,
  CB_COMPLAINT_STATE_ACKNOWLEDGED = 3,
} CbComplaintState;

typedef enum CbComplaintEvent {
  CB_COMPLAINT_EVENT_DISPATCH = 0,
  CB_COMPLAINT_EVENT_RESOLVE = 1,
  CB_COMPLAINT_EVENT_ACKNOWLEDGE = 2,
} CbComplaintEvent;

// Opaque central-service handle.
typedef struct CbCentral CbCentral;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or NULL. The pointer stays
// valid until the next `cb_` call on the same thread.
const char *cb_last_error_message(void);

// Stable machine-readable code for the last failure on this thread (for
// example `duplicate_nid`), or NULL.
const char *cb_last_error_code(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void cb_string_free(char *s);

// Fill fraction in [0, 1] from an ultrasonic distance.
//
// # Safety
// `out` must be a valid pointer to a double.
enum CbStatus cb_fill_fraction(double distance_cm,
                               double depth_cm,
                               double sensor_offset_cm,
                               double *out);

// LED colour for a fill fraction under the default thresholds.
//
// # Safety
// `out` must be a valid pointer to a `CbLed`.
enum CbStatus cb_led_state(double fill, enum CbLed *out);

// `CB_STATUS_OK` if `nid` is 10, 13 or 17 ASCII digits, else `CB_STATUS_REJECTED`
// with code `format_error`.
//
// # Safety
// `nid` must be a NUL-terminated string.
enum CbStatus cb_validate_nid(const char *nid);

// Next complaint state, or `CB_STATUS_REJECTED` with code
// `invalid_transition`.
//
// # Safety
// `out` must be a valid pointer to a `CbComplaintState`.
enum CbStatus cb_complaint_transition(enum CbComplaintState state,
                                      enum CbComplaintEvent event,
                                      enum CbComplaintState *out);

// New in-memory central service with default configuration. Free with
// [`cb_central_free`].
struct CbCentral *cb_central_new(void);

// # Safety
// `handle` must come from [`cb_central_new`] and not be used afterwards.
// NULL is ignored.
void cb_central_free(struct CbCentral *handle);

// Runs one command at time `now_ms`. `op` is one of `provision`,
// `ingest_batch`, `ingest_station_observation`, `register_citizen`,
// `submit_complaint`, `dispatch_complaint`, `resolve_complaint`,
// `sla_sweep`; `args_json` is an object with the same fields the simulator
// logs for that call. On success `*out_json` receives the result as JSON.
//
// # Safety
// `handle` must be live, `op` and `args_json` NUL-terminated, `out_json`
// a valid pointer.
enum CbStatus cb_central_call(struct CbCentral *handle,
                              const char *op,
                              const char *args_json,
                              int64_t now_ms,
                              char **out_json);

// Read-only snapshot as JSON. `selector` is `bins`, `stations`, `alerts`,
// `complaints`, `notifications`, `events` or `events:<seq>`.
//
// # Safety
// `handle` must be live, `selector` NUL-terminated, `out_json` valid.
enum CbStatus cb_central_query(const struct CbCentral *handle,
                               const char *selector,
                               char **out_json);

// Runs a TOML scenario to completion. `*out_log` receives the event log
// text and `*out_metrics_json` the metrics; either may be NULL if unwanted.
//
// # Safety
// `scenario_toml` must be NUL-terminated; non-NULL out pointers must be valid.
enum CbStatus cb_run_scenario(const char *scenario_toml, char **out_log, char **out_metrics_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CIVICBIN_H */
