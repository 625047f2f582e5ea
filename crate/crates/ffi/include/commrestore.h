#ifndef COMMRESTORE_H
#define COMMRESTORE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CrStatus {
  CR_STATUS_OK = 0,
  CR_STATUS_NULL_POINTER = 1,
  CR_STATUS_INVALID_ARGUMENT = 2,
  CR_STATUS_IO = 3,
  CR_STATUS_PARSE = 4,
  CR_STATUS_VALIDATION = 5,
  CR_STATUS_SOLVER = 6,
  CR_STATUS_INTERNAL = 7,
} CrStatus;

typedef enum CrTauSource {
  CR_TAU_SOURCE_INCOME = 0,
  CR_TAU_SOURCE_RACE = 1,
  CR_TAU_SOURCE_EDUCATION = 2,
} CrTauSource;

// An allocation plan for the scenario that produced it.
typedef struct CrPlan CrPlan;

// A validated set of households grouped into areas.
typedef struct CrScenario CrScenario;

// Scenario parameters; obtain defaults from [`cr_params_default`].
typedef struct CrParams {
  size_t horizon;
  double smax_mbps;
  size_t delta;
  double theta;
  enum CrTauSource tau_source;
} CrParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *cr_last_error_message(void);

struct CrParams cr_params_default(void);

// Loads a household CSV. `params` may be null for defaults.
//
// # Safety
// `path` must be a NUL-terminated string; `params` null or valid; `out`
// valid for writes.
enum CrStatus cr_scenario_load(const char *path,
                               const struct CrParams *params,
                               struct CrScenario **out);

// Synthetic scenario with survey-like marginals and `min_users..=max_users`
// households per area.
//
// # Safety
// `params` null or valid; `out` valid for writes.
enum CrStatus cr_scenario_generate(uint64_t seed,
                                   size_t n_areas,
                                   size_t min_users,
                                   size_t max_users,
                                   const struct CrParams *params,
                                   struct CrScenario **out);

// # Safety
// `scenario` null or valid; `out` valid for writes.
enum CrStatus cr_scenario_num_users(const struct CrScenario *scenario, size_t *out);

// # Safety
// `scenario` must be null or a handle not yet freed.
void cr_scenario_free(struct CrScenario *scenario);

// Runs the rounding heuristic.
//
// # Safety
// `scenario` null or valid; `out` valid for writes.
enum CrStatus cr_solve_heuristic(const struct CrScenario *scenario, struct CrPlan **out);

// Total utility of `plan` under `scenario`.
//
// # Safety
// Handles null or valid; `out` valid for writes.
enum CrStatus cr_plan_true_objective(const struct CrScenario *scenario,
                                     const struct CrPlan *plan,
                                     double *out);

// # Safety
// `scenario` null or valid; `out` valid for writes.
enum CrStatus cr_relaxation_upper_bound(const struct CrScenario *scenario, double *out);

// Writes `plan` in the plan CSV format.
//
// # Safety
// Handles null or valid; `path` a NUL-terminated string.
enum CrStatus cr_plan_write_csv(const struct CrScenario *scenario,
                                const struct CrPlan *plan,
                                const char *path);

// # Safety
// `plan` must be null or a handle not yet freed.
void cr_plan_free(struct CrPlan *plan);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMMRESTORE_H */
