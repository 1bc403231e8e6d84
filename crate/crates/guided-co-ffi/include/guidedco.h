#ifndef GUIDEDCO_H
#define GUIDEDCO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of the C API.
 */
typedef enum GcoStatus {
  /**
   * Success.
   */
  GCO_STATUS_OK = 0,
  /**
   * A pointer argument was null or otherwise unusable.
   */
  GCO_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Input could not be parsed (instance JSON, decoder name).
   */
  GCO_STATUS_PARSE_ERROR = 2,
  /**
   * Files or contents were missing or inconsistent.
   */
  GCO_STATUS_DATA_ERROR = 3,
  /**
   * The solver or model failed.
   */
  GCO_STATUS_SOLVE_ERROR = 4,
} GcoStatus;

/**
 * Opaque model checkpoint.
 */
typedef struct GcoCheckpoint GcoCheckpoint;

/**
 * Opaque problem instance.
 */
typedef struct GcoInstance GcoInstance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread. Never null.
 */
const char *gco_last_error(void);

/**
 * Parses one dataset JSON line into an instance handle.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 * A returned handle must be released with [`gco_instance_free`].
 */
enum GcoStatus gco_instance_parse_json(const char *json, struct GcoInstance **out);

/**
 * # Safety
 * `inst` must be a handle from [`gco_instance_parse_json`] not yet freed,
 * or null (a no-op).
 */
void gco_instance_free(struct GcoInstance *inst);

/**
 * Number of edges (length of indicator buffers). Returns 0 on null.
 *
 * # Safety
 * `inst` must be a live handle or null.
 */
uintptr_t gco_instance_edge_count(const struct GcoInstance *inst);

/**
 * Number of nodes. Returns 0 on null.
 *
 * # Safety
 * `inst` must be a live handle or null.
 */
uintptr_t gco_instance_node_count(const struct GcoInstance *inst);

/**
 * Loads a checkpoint file written by `guidedco train`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 * A returned handle must be released with [`gco_checkpoint_free`].
 */
enum GcoStatus gco_checkpoint_load(const char *path, struct GcoCheckpoint **out);

/**
 * # Safety
 * `ckpt` must be a handle from [`gco_checkpoint_load`] not yet freed, or
 * null (a no-op).
 */
void gco_checkpoint_free(struct GcoCheckpoint *ckpt);

/**
 * Solves an instance with the named decoder (`unguided`,
 * `unguided-best-of-N`, `guided-single`, `guided-best-of-N`, `greedy`,
 * `beam-N`, optionally suffixed `+2opt`). `ckpt` may be null for unguided
 * decoders. Writes the objective to `out_objective` and, when
 * `out_selected` is non-null, one 0/1 byte per edge (canonical order,
 * buffer length `gco_instance_edge_count`).
 *
 * # Safety
 * `inst` must be a live instance handle; `ckpt` a live checkpoint handle
 * or null; `decoder` a valid NUL-terminated string; `out_objective` a
 * valid pointer; `out_selected` null or valid for `edge_count` bytes.
 */
enum GcoStatus gco_solve(const struct GcoInstance *inst,
                         const struct GcoCheckpoint *ckpt,
                         const char *decoder,
                         uint64_t seed,
                         double *out_objective,
                         uint8_t *out_selected);

/**
 * Library version as a static string.
 */
const char *gco_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GUIDEDCO_H */
