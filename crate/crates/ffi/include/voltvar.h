#ifndef VOLTVAR_H
#define VOLTVAR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VvStatus {
  VV_STATUS_OK = 0,
  VV_STATUS_NULL_POINTER = 1,
  VV_STATUS_INVALID_ARGUMENT = 2,
  VV_STATUS_INVALID_NETWORK = 3,
  VV_STATUS_INFEASIBLE = 4,
  VV_STATUS_SOLVER_FAILURE = 5,
  VV_STATUS_POWER_FLOW_FAILURE = 6,
  VV_STATUS_PANIC = 7,
} VvStatus;

typedef enum VvScheduleKind {
  // `param` is the horizon.
  VV_SCHEDULE_KIND_CONSTANT_HORIZON = 0,
  VV_SCHEDULE_KIND_DECAYING = 1,
  // `param` is the scale factor.
  VV_SCHEDULE_KIND_SCALED_DECAYING = 2,
  // `param` is the step size.
  VV_SCHEDULE_KIND_FIXED = 3,
} VvScheduleKind;

// Controller state plus the prices it optimizes against.
typedef struct VvController VvController;

// A validated feeder with its precomputed affine maps.
typedef struct VvNetwork VvNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer stays
// valid until the next call into this library from the same thread.
const char *vv_last_error_message(void);

// Parses a feeder from a NUL-terminated JSON document.
//
// # Safety
// `json` must be a valid C string and `out` a valid pointer.
enum VvStatus vv_network_from_json(const char *json, struct VvNetwork **out);

// # Safety
// `net` must come from [`vv_network_from_json`] and not be freed twice.
void vv_network_free(struct VvNetwork *net);

// Number of non-root buses, or 0 for a null handle.
//
// # Safety
// `net` must be null or a live handle.
size_t vv_network_num_buses(const struct VvNetwork *net);

// Power loss (pu) of the power flow solution at injections `(p, q)`.
//
// # Safety
// `p` and `q` must hold `len` values; `out_loss` must be valid.
enum VvStatus vv_sweep_loss(const struct VvNetwork *net,
                            const double *p,
                            const double *q,
                            size_t len,
                            double *out_loss);

// Minimum relaxed loss at injections `(p, q)`. When `out_lambda` is not
// null it receives the `len` multipliers of the reactive balance; their
// negation is a subgradient of the loss in `q`.
//
// # Safety
// `p` and `q` must hold `len` values, `out_loss` must be valid, and
// `out_lambda` must be null or hold `len` values.
enum VvStatus vv_solve_primal(const struct VvNetwork *net,
                              const double *p,
                              const double *q,
                              size_t len,
                              double *out_loss,
                              double *out_lambda);

// Elementwise minimizer of `(q - y)^2 / 2 + eta_c |q|` over `[lo, hi]`.
//
// # Safety
// All five arrays must hold `len` values.
enum VvStatus vv_threshold_update(const double *y,
                                  const double *eta_c,
                                  const double *lo,
                                  const double *hi,
                                  size_t len,
                                  double *out);

// Creates a stochastic controller starting from a zero setpoint.
//
// `d <= 0` selects the diameter of the feasible box and `l <= 0` a bound
// learned from the observed multipliers. Prices are the loss price and one
// reactive price shared by every controllable bus.
//
// # Safety
// `net` must be a live handle and `out` a valid pointer.
enum VvStatus vv_controller_new(const struct VvNetwork *net,
                                enum VvScheduleKind kind,
                                double param,
                                double d,
                                double l,
                                double c0_tilde,
                                double c_tilde,
                                struct VvController **out);

// One control interval from observed injections. Writes the new setpoint to
// `out_setpoint`. When the relaxation cannot be solved the previous setpoint
// is kept, `*out_flagged` is set to 1 and the call still returns `Ok`.
//
// # Safety
// Handles must be live; `obs_p`, `obs_qc` and `out_setpoint` must hold `len`
// values; `out_flagged` must be null or valid.
enum VvStatus vv_controller_step(struct VvController *ctrl,
                                 const struct VvNetwork *net,
                                 const double *obs_p,
                                 const double *obs_qc,
                                 size_t len,
                                 double *out_setpoint,
                                 int32_t *out_flagged);

// # Safety
// `ctrl` must come from [`vv_controller_new`] and not be freed twice.
void vv_controller_free(struct VvController *ctrl);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOLTVAR_H */
