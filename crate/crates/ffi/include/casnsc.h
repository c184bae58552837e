#ifndef CASNSC_H
#define CASNSC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes shared by all entry points.
 */
typedef enum CasnscStatus {
  CASNSC_STATUS_OK = 0,
  CASNSC_STATUS_NULL_POINTER = 1,
  CASNSC_STATUS_INVALID_ARGUMENT = 2,
  CASNSC_STATUS_IO = 3,
  CASNSC_STATUS_FORMAT = 4,
  CASNSC_STATUS_MODEL = 5,
  CASNSC_STATUS_NUMERICAL = 6,
  CASNSC_STATUS_PANIC = 7,
} CasnscStatus;

/*
 A trained model loaded from disk.
 */
typedef struct CasnscModel CasnscModel;

/*
 Weighted rollout hypotheses for one observed prefix.
 */
typedef struct CasnscPrediction CasnscPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread, or an empty string.
 The pointer stays valid until the next call on the same thread.
 */
const char *casnsc_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *casnsc_version(void);

/*
 Loads a model file written by `casnsc train`.

 # Safety
 `path` must be a valid NUL-terminated string and `out` a writable pointer.
 */
enum CasnscStatus casnsc_model_load(const char *path, struct CasnscModel **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must come from [`casnsc_model_load`] and not be freed twice.
 */
void casnsc_model_free(struct CasnscModel *model);

/*
 Number of dictionary atoms (motion primitives).

 # Safety
 `model` must be a live handle and `out` writable.
 */
enum CasnscStatus casnsc_model_num_atoms(const struct CasnscModel *model, size_t *out);

/*
 Whether the model conditions on the traffic lights (1) or not (0).

 # Safety
 `model` must be a live handle and `out` writable.
 */
enum CasnscStatus casnsc_model_uses_lights(const struct CasnscModel *model, int *out);

/*
 Predicts the continuation of an observed prefix.

 `t`, `x`, `y` hold `n` samples in time order. `t1` is nonzero when the
 crossing light T1 is green; it is ignored by models without context.

 # Safety
 The arrays must hold `n` readable values and `out` must be writable.
 */
enum CasnscStatus casnsc_predict(const struct CasnscModel *model,
                                 const double *t,
                                 const double *x,
                                 const double *y,
                                 size_t n,
                                 int t1,
                                 double horizon,
                                 double dt,
                                 struct CasnscPrediction **out);

/*
 Releases a prediction. Null is ignored.

 # Safety
 `pred` must come from [`casnsc_predict`] and not be freed twice.
 */
void casnsc_prediction_free(struct CasnscPrediction *pred);

/*
 Number of hypotheses, ordered as the model's outgoing transitions.

 # Safety
 `pred` must be a live handle and `out` writable.
 */
enum CasnscStatus casnsc_prediction_num_hypotheses(const struct CasnscPrediction *pred,
                                                   size_t *out);

/*
 Target atom, posterior weight and rollout length (start point included)
 of hypothesis `i`. Any output pointer may be null.

 # Safety
 `pred` must be a live handle; non-null outputs must be writable.
 */
enum CasnscStatus casnsc_prediction_hypothesis(const struct CasnscPrediction *pred,
                                               size_t i,
                                               size_t *atom,
                                               double *weight,
                                               size_t *num_points);

/*
 Copies the rollout of hypothesis `i` into `xy` as interleaved x, y pairs.
 `capacity` counts points, so `xy` must hold `2 * capacity` doubles.

 # Safety
 `pred` must be a live handle and `xy` must hold `2 * capacity` doubles.
 */
enum CasnscStatus casnsc_prediction_points(const struct CasnscPrediction *pred,
                                           size_t i,
                                           double *xy,
                                           size_t capacity);

/*
 Modified Hausdorff distance between two interleaved x, y point sets.

 # Safety
 `a` must hold `2 * na` doubles, `b` `2 * nb`, and `out` must be writable.
 */
enum CasnscStatus casnsc_mhd(const double *a, size_t na, const double *b, size_t nb, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CASNSC_H */
