/* C interface for the spherecar toolkit. Generated by cbindgen; do not edit. */

#ifndef SPHERECAR_H
#define SPHERECAR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every API call.
 */
typedef enum ScStatus {
  SC_STATUS_OK = 0,
  SC_STATUS_NULL_POINTER = 1,
  SC_STATUS_INVALID_ARGUMENT = 2,
  SC_STATUS_PARSE_ERROR = 3,
  /*
   Controller evaluated at a configuration its algebra cannot handle.
   */
  SC_STATUS_SINGULAR = 4,
  /*
   No admissible steering solution within the saturation bounds.
   */
  SC_STATUS_INFEASIBLE = 5,
  /*
   Observer error outside the local validity regime.
   */
  SC_STATUS_OUT_OF_REGIME = 6,
  /*
   Tracking error grew beyond recovery.
   */
  SC_STATUS_DIVERGED = 7,
  SC_STATUS_IO_ERROR = 8,
  SC_STATUS_UTF8_ERROR = 9,
  SC_STATUS_INTERNAL_ERROR = 10,
} ScStatus;

/*
 Experiment selector for [`sc_scenario_run`].
 */
typedef enum ScRunMode {
  SC_RUN_MODE_SIMULATE = 0,
  SC_RUN_MODE_TRACK = 1,
  SC_RUN_MODE_OBSERVE = 2,
  SC_RUN_MODE_OUTPUT_FEEDBACK = 3,
} ScRunMode;

/*
 Opaque parsed-and-validated scenario configuration.
 */
typedef struct ScScenario ScScenario;

/*
 Opaque closed-loop tracking session that can be stepped incrementally.
 */
typedef struct ScTracker ScTracker;

/*
 Car dimensions and the sphere radius.
 */
typedef struct ScGeometry {
  double wheelbase;
  double wheel_radius;
  double sphere_radius;
} ScGeometry;

/*
 Observer gain coefficients (the skew pair is scheduled at run time).
 */
typedef struct ScObserverGains {
  double l11;
  double l22;
  double l31;
  double l32;
} ScObserverGains;

/*
 Snapshot of a tracking session.
 */
typedef struct ScTrackerState {
  /*
   Reference arc length.
   */
  double s;
  /*
   Configuration, row-major.
   */
  double g[9];
  /*
   Rear-axle position.
   */
  double y[3];
  double sigma;
  double delta;
  double u;
  double phi;
  double kappa_g;
} ScTrackerState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the most recent failure on this thread. The pointer stays
 valid until the next failing call from the same thread.
 */
const char *sc_last_error_message(void);

/*
 Library version as a static string.
 */
const char *sc_version(void);

/*
 Central angle and effective wheelbase of the car on its sphere.

 # Safety
 All pointers must be valid for the duration of the call.
 */
enum ScStatus sc_effective_wheelbase(const struct ScGeometry *geometry,
                                     double *central_angle,
                                     double *effective_wheelbase);

/*
 Geodesic curvature commanded by a steering angle.

 # Safety
 All pointers must be valid for the duration of the call.
 */
enum ScStatus sc_geodesic_curvature(const struct ScGeometry *geometry,
                                    double steering,
                                    double *kappa_g);

/*
 Steering angle realizing a geodesic curvature.

 # Safety
 All pointers must be valid for the duration of the call.
 */
enum ScStatus sc_steering_for_curvature(const struct ScGeometry *geometry,
                                        double kappa_g,
                                        double *steering);

/*
 Assign the observer poles (given as parallel real/imaginary arrays of
 length three; conjugate pairs, negative real parts, at least one real).

 # Safety
 `pole_re`, `pole_im` must point to three readable doubles and `gains`
 to writable storage.
 */
enum ScStatus sc_place_poles(double sphere_radius,
                             const double *pole_re,
                             const double *pole_im,
                             struct ScObserverGains *gains);

/*
 Invariant tracking-error angles between two configurations, passed as
 row-major 3x3 rotation matrices.

 # Safety
 `config` and `reference` must point to nine readable doubles each;
 `sigma` and `delta` to writable storage.
 */
enum ScStatus sc_error_angles(const double *config,
                              const double *reference,
                              double *sigma,
                              double *delta);

/*
 Load a scenario configuration file.

 # Safety
 `path` must be a NUL-terminated string and `out` writable; a returned
 handle must be released with [`sc_scenario_free`].
 */
enum ScStatus sc_scenario_load(const char *path, struct ScScenario **out);

/*
 Parse a scenario configuration from TOML text.

 # Safety
 `text` must be a NUL-terminated string and `out` writable; a returned
 handle must be released with [`sc_scenario_free`].
 */
enum ScStatus sc_scenario_parse(const char *text, struct ScScenario **out);

/*
 Release a scenario handle. Accepts NULL.

 # Safety
 `scenario` must come from `sc_scenario_load`/`sc_scenario_parse` and
 must not be used afterwards.
 */
void sc_scenario_free(struct ScScenario *scenario);

/*
 Run an experiment and write `run.csv` and `summary.json` (names are
 taken from the configuration) into `out_dir`. A run that terminates
 early still writes its partial records; the returned status reflects
 the terminal state.

 # Safety
 `scenario` must be a live handle and `out_dir` a NUL-terminated string.
 */
enum ScStatus sc_scenario_run(const struct ScScenario *scenario,
                              enum ScRunMode mode,
                              const char *out_dir);

/*
 Create a tracking session from a scenario (controller block required).

 # Safety
 `scenario` must be a live handle and `out` writable; a returned handle
 must be released with [`sc_tracker_free`].
 */
enum ScStatus sc_tracker_new(const struct ScScenario *scenario, struct ScTracker **out);

/*
 Advance the session by `steps` integrator steps.

 # Safety
 `tracker` must be a live handle.
 */
enum ScStatus sc_tracker_step(struct ScTracker *tracker, size_t steps);

/*
 Read the current state and control diagnostics of a session.

 # Safety
 `tracker` must be a live handle and `state` writable.
 */
enum ScStatus sc_tracker_state(const struct ScTracker *tracker, struct ScTrackerState *state);

/*
 Release a tracking session. Accepts NULL.

 # Safety
 `tracker` must come from `sc_tracker_new` and must not be used
 afterwards.
 */
void sc_tracker_free(struct ScTracker *tracker);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPHERECAR_H */
