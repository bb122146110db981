#ifndef LATENTEDIT_H
#define LATENTEDIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum LeStatus {
  LE_STATUS_OK = 0,
  LE_STATUS_NULL_POINTER = 1,
  LE_STATUS_INVALID_ARGUMENT = 2,
  LE_STATUS_NOT_FOUND = 3,
  LE_STATUS_IO = 4,
  LE_STATUS_FORMAT = 5,
  LE_STATUS_REJECTED = 6,
  LE_STATUS_PRECONDITION = 7,
  LE_STATUS_NOTHING_TO_DO = 8,
  LE_STATUS_DIVERGED = 9,
  LE_STATUS_BUFFER_TOO_SMALL = 10,
  LE_STATUS_PANIC = 11,
} LeStatus;

// Opaque session handle.
typedef struct LeSession LeSession;

// Retrain parameters. Start from `le_retrain_params_default`.
typedef struct LeRetrainParams {
  uintptr_t epochs;
  uintptr_t k;
  double delta;
  double w_cls;
  double w_dis;
  double learning_rate;
  uintptr_t batch_size;
  uint64_t seed;
  // Nonzero keeps anchors fixed at their pre-training values.
  uint8_t frozen_anchors;
  // Nonzero allows retraining without pending edits.
  uint8_t allow_empty;
} LeRetrainParams;

typedef struct LeMetrics {
  double accuracy_before;
  // NaN until a retrain has run.
  double accuracy_after;
  double auc;
  // Epochs recorded by the last training job.
  uintptr_t epochs;
  // Validation micro-F1 after the last epoch, NaN when none.
  double last_micro_f1;
} LeMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *le_version(void);

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *le_last_error(void);

struct LeRetrainParams le_retrain_params_default(void);

// Opens a session directory.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum LeStatus le_session_load(const char *path, struct LeSession **out);

// Generates a synthetic dataset (4 classes, 16 features) and pretrains a
// session on it.
//
// # Safety
// `out` must be a writable pointer.
enum LeStatus le_session_pretrain_synthetic(uintptr_t n,
                                            uintptr_t epochs,
                                            uint64_t seed,
                                            struct LeSession **out);

// Releases a handle. NULL is ignored.
//
// # Safety
// `session` must come from this library and not be used afterwards.
void le_session_free(struct LeSession *session);

// # Safety
// `session` must be a valid handle and `path` a NUL-terminated string.
enum LeStatus le_session_save(struct LeSession *session, const char *path);

// Number of items, or 0 for a NULL handle.
//
// # Safety
// `session` must be a valid handle or NULL.
uintptr_t le_session_len(const struct LeSession *session);

// Writes the current layout as `x0, y0, x1, y1, ...` into `xy`, which must
// hold at least `2 * le_session_len` values.
//
// # Safety
// `xy` must point to `len` writable doubles.
enum LeStatus le_session_layout(struct LeSession *session, double *xy, uintptr_t len);

// Writes the predicted class of every item into `classes`.
//
// # Safety
// `classes` must point to `len` writable values.
enum LeStatus le_session_predictions(struct LeSession *session, uint32_t *classes, uintptr_t len);

// Moves `count` items in one undoable transaction. `xy` holds the new
// positions as `x, y` pairs.
//
// # Safety
// `ids` must point to `count` values and `xy` to `2 * count` values.
enum LeStatus le_session_move(struct LeSession *session,
                              const uintptr_t *ids,
                              const double *xy,
                              uintptr_t count);

// # Safety
// `session` must be a valid handle.
enum LeStatus le_session_undo(struct LeSession *session);

// # Safety
// `session` must be a valid handle.
enum LeStatus le_session_redo(struct LeSession *session);

// Drops edits made since the last retrain.
//
// # Safety
// `session` must be a valid handle.
enum LeStatus le_session_reset(struct LeSession *session);

// Retrains on the pending edits, blocking until done. `params` may be NULL
// for the defaults.
//
// # Safety
// `session` must be a valid handle; `params` NULL or valid.
enum LeStatus le_session_retrain(struct LeSession *session, const struct LeRetrainParams *params);

// # Safety
// `session` must be a valid handle and `out` writable.
enum LeStatus le_session_metrics(struct LeSession *session, struct LeMetrics *out);

// Isomap of `n` row-major points of dimension `dim` into 2D, written to
// `out` as `n` pairs.
//
// # Safety
// `points` must hold `n * dim` values and `out` room for `out_len >= 2 * n`.
enum LeStatus le_isomap(const double *points,
                        uintptr_t n,
                        uintptr_t dim,
                        uintptr_t k,
                        double *out,
                        uintptr_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATENTEDIT_H */
