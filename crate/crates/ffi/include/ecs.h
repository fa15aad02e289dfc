#ifndef ECS_H
#define ECS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Encoded size of one sample message.
 */
#define ECS_SAMPLE_LEN 28

/**
 * Result of every fallible call.
 */
typedef enum EcsStatus {
  ECS_STATUS_OK = 0,
  ECS_STATUS_NULL_POINTER = 1,
  ECS_STATUS_INVALID_ARGUMENT = 2,
  ECS_STATUS_PARSE_ERROR = 3,
  ECS_STATUS_VALIDATION_ERROR = 4,
  ECS_STATUS_RUNTIME_ERROR = 5,
  ECS_STATUS_CODEC_ERROR = 6,
  ECS_STATUS_BUFFER_TOO_SMALL = 7,
  ECS_STATUS_OUT_OF_RANGE = 8,
  ECS_STATUS_PANIC = 9,
} EcsStatus;

/**
 * Parsed, validated experiment description.
 */
typedef struct EcsConfig EcsConfig;

typedef struct EcsPid EcsPid;

typedef struct EcsPlant EcsPlant;

/**
 * Trace of a finished run.
 */
typedef struct EcsTrace EcsTrace;

typedef struct EcsTraceRecord {
  uint64_t t_us;
  uint16_t loop_id;
  bool stale;
  double r;
  double y;
  double u;
} EcsTraceRecord;

typedef struct EcsMetrics {
  /**
   * False when the trace never settles; `settling_time_s` is then NaN.
   */
  bool settled;
  double settling_time_s;
  double overshoot_pct;
  double steady_state_error;
  double iae;
} EcsMetrics;

typedef struct EcsPidGains {
  double kp;
  double ki;
  double kd;
  double u_min;
  double u_max;
  /**
   * Derivative filter coefficient; 0 disables filtering.
   */
  double n;
} EcsPidGains;

typedef struct EcsTankParams {
  double area;
  double inflow_gain;
  double outflow_coeff;
  double level_init;
} EcsTankParams;

typedef struct EcsSample {
  /**
   * 0 sensor sample, 1 actuator command, 2 setpoint.
   */
  uint8_t kind;
  uint16_t loop_id;
  uint32_t seq;
  uint64_t timestamp_us;
  double value;
} EcsSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length excluding the terminator.
 */
size_t ecs_last_error_message(char *buf, size_t len);

/**
 * Parses TOML experiment text.
 */
enum EcsStatus ecs_config_parse(const char *text, struct EcsConfig **out);

void ecs_config_free(struct EcsConfig *cfg);

size_t ecs_config_loop_count(const struct EcsConfig *cfg);

/**
 * Configured run length in microseconds, or 0 for a null handle.
 */
uint64_t ecs_config_duration_us(const struct EcsConfig *cfg);

/**
 * Runs the configuration in virtual time for its configured duration.
 */
enum EcsStatus ecs_simulate(const struct EcsConfig *cfg, struct EcsTrace **out);

void ecs_trace_free(struct EcsTrace *trace);

size_t ecs_trace_len(const struct EcsTrace *trace);

enum EcsStatus ecs_trace_get(const struct EcsTrace *trace,
                             size_t index,
                             struct EcsTraceRecord *out);

enum EcsStatus ecs_trace_write_csv(const struct EcsTrace *trace, const char *path);

/**
 * Step-response metrics of one loop in the trace.
 */
enum EcsStatus ecs_trace_metrics(const struct EcsTrace *trace,
                                 uint16_t loop_id,
                                 double setpoint,
                                 double band_pct,
                                 double tail_pct,
                                 struct EcsMetrics *out);

/**
 * Fills `out` with the default water-tank gains.
 */
enum EcsStatus ecs_pid_default_gains(struct EcsPidGains *out);

enum EcsStatus ecs_pid_new(const struct EcsPidGains *gains, struct EcsPid **out);

/**
 * One controller step with sampling period `h_us`; writes the command to `u`.
 */
enum EcsStatus ecs_pid_step(struct EcsPid *pid, double r, double y, uint64_t h_us, double *u);

enum EcsStatus ecs_pid_reset(struct EcsPid *pid);

void ecs_pid_free(struct EcsPid *pid);

enum EcsStatus ecs_tank_default_params(struct EcsTankParams *out);

enum EcsStatus ecs_tank_new(const struct EcsTankParams *params,
                            uint64_t substep_us,
                            struct EcsPlant **out);

/**
 * Holds `u` for `duration_us`, a multiple of the substep.
 */
enum EcsStatus ecs_plant_advance(struct EcsPlant *plant, double u, uint64_t duration_us);

enum EcsStatus ecs_plant_output(const struct EcsPlant *plant, double *y);

uint64_t ecs_plant_time_us(const struct EcsPlant *plant);

void ecs_plant_free(struct EcsPlant *plant);

/**
 * Writes the 28-byte encoding of `msg` into `out`.
 */
enum EcsStatus ecs_sample_encode(const struct EcsSample *msg, uint8_t *out, size_t cap);

enum EcsStatus ecs_sample_decode(const uint8_t *buf, size_t len, struct EcsSample *out);

/**
 * Frames `payload` for a serial line. `written` receives the frame length.
 */
enum EcsStatus ecs_serial_frame(const uint8_t *payload,
                                size_t len,
                                uint8_t *out,
                                size_t cap,
                                size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECS_H */
