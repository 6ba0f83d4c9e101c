#ifndef VCLOS_H
#define VCLOS_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VclosStatus {
  VCLOS_STATUS_OK = 0,
  VCLOS_STATUS_NULL_POINTER = 1,
  VCLOS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * No placement exists for the request right now.
   */
  VCLOS_STATUS_INFEASIBLE = 3,
  /**
   * The library panicked; the handle should be discarded.
   */
  VCLOS_STATUS_INTERNAL = 4,
} VclosStatus;

/**
 * Opaque cluster state.
 */
typedef struct VclosCluster VclosCluster;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy of the last error message on this thread, or NULL if none. Free it
 * with [`vclos_string_free`].
 */
char *vclos_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void vclos_string_free(char *s);

/**
 * Library version, static storage.
 */
const char *vclos_version(void);

/**
 * Build an idle cluster. `ocs_count` 0 means plain static wiring.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum VclosStatus vclos_cluster_new(size_t leaves,
                                   size_t spines,
                                   size_t gpus_per_server,
                                   size_t ocs_count,
                                   struct VclosCluster **out);

/**
 * # Safety
 * `cluster` must be NULL or a handle from [`vclos_cluster_new`], not yet freed.
 */
void vclos_cluster_free(struct VclosCluster *cluster);

/**
 * # Safety
 * `cluster` must be a live handle and `out` writable.
 */
enum VclosStatus vclos_cluster_idle_gpus(const struct VclosCluster *cluster, size_t *out);

/**
 * Cluster state as JSON. Free the string with [`vclos_string_free`].
 *
 * # Safety
 * `cluster` must be a live handle and `out_json` writable.
 */
enum VclosStatus vclos_cluster_snapshot(const struct VclosCluster *cluster, char **out_json);

/**
 * Place `gpus` GPUs for `job_id` with `strategy` (e.g. "vclos",
 * "ocs-vclos", "ecmp") and reserve them. On success `out_json`, if not
 * NULL, receives the allocation as JSON.
 *
 * # Safety
 * `cluster` must be a live handle, `strategy` a NUL-terminated string and
 * `out_json` NULL or writable.
 */
enum VclosStatus vclos_place(struct VclosCluster *cluster,
                             const char *strategy,
                             uint64_t job_id,
                             size_t gpus,
                             char **out_json);

/**
 * Free everything `job_id` holds.
 *
 * # Safety
 * `cluster` must be a live handle.
 */
enum VclosStatus vclos_release(struct VclosCluster *cluster, uint64_t job_id);

/**
 * Route `collective` ("ring", "hd", ...) on `ranks` GPUs over `leaves`
 * leaves and write the largest flow count on any fabric link.
 *
 * # Safety
 * `collective` must be a NUL-terminated string and `out_max` writable.
 */
enum VclosStatus vclos_verify(const char *collective, size_t ranks, size_t leaves, size_t *out_max);

/**
 * Simulate a JSON-lines trace on the shape of `cluster` (its current
 * occupancy is ignored) and return the summary as JSON.
 *
 * # Safety
 * `cluster` must be a live handle, the strings NUL-terminated and
 * `out_json` writable.
 */
enum VclosStatus vclos_simulate(const struct VclosCluster *cluster,
                                const char *trace_jsonl,
                                const char *strategy,
                                const char *scheduler,
                                uint64_t seed,
                                char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VCLOS_H */
