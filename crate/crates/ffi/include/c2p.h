#ifndef C2P_H
#define C2P_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call.
 */
typedef enum C2pStatus {
  C2P_STATUS_OK = 0,
  C2P_STATUS_NULL_POINTER = 1,
  C2P_STATUS_INVALID_ARGUMENT = 2,
  C2P_STATUS_IO = 3,
  C2P_STATUS_PARSE = 4,
  C2P_STATUS_REGISTRATION_FAILED = 5,
  C2P_STATUS_NUMERICAL = 6,
  C2P_STATUS_BUFFER_TOO_SMALL = 7,
  C2P_STATUS_INTERNAL = 8,
} C2pStatus;

/**
 * Registration method.
 */
typedef enum C2pMethod {
  C2P_METHOD_ICP = 0,
  C2P_METHOD_NICP = 1,
  C2P_METHOD_CPD = 2,
  C2P_METHOD_C2P = 3,
} C2pMethod;

/**
 * Opaque point cloud.
 */
typedef struct C2pCloud C2pCloud;

/**
 * Opaque registration result.
 */
typedef struct C2pResult C2pResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *c2p_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len - 1` bytes) and returns the full message
 * length in bytes. Pass a null `buf` to query the length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t c2p_last_error(char *buf, size_t len);

/**
 * Builds an unlabelled cloud from `n` points stored as `x y z` triples.
 *
 * # Safety
 * `xyz` must point to `3 * n` readable doubles; `out` must be writable.
 */
enum C2pStatus c2p_cloud_from_points(const double *xyz, size_t n, struct C2pCloud **out);

/**
 * Loads a labelled cloud file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum C2pStatus c2p_cloud_load(const char *path, struct C2pCloud **out);

/**
 * Number of points; 0 for a null handle.
 *
 * # Safety
 * `cloud` must be null or a live handle.
 */
size_t c2p_cloud_len(const struct C2pCloud *cloud);

/**
 * Releases a cloud; null is ignored.
 *
 * # Safety
 * `cloud` must be null or a handle not yet freed.
 */
void c2p_cloud_free(struct C2pCloud *cloud);

/**
 * Registers `source` to `target` with default settings and the given
 * seed.
 *
 * # Safety
 * `source` and `target` must be live handles; `out` must be writable.
 */
enum C2pStatus c2p_register(const struct C2pCloud *source,
                            const struct C2pCloud *target,
                            enum C2pMethod method,
                            uint64_t seed,
                            struct C2pResult **out);

/**
 * Number of displacement vectors (one per source point); 0 for null.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t c2p_result_len(const struct C2pResult *result);

/**
 * Copies the displacement field as `x y z` triples into `out`, which must
 * hold `3 * c2p_result_len(result)` doubles (`capacity` counts doubles).
 *
 * # Safety
 * `result` must be a live handle; `out` must point to `capacity` writable
 * doubles.
 */
enum C2pStatus c2p_result_field(const struct C2pResult *result, double *out, size_t capacity);

/**
 * Writes the rigid part as a row-major 3x4 matrix `[R | t]`.
 *
 * # Safety
 * `result` must be a live handle; `out` must point to 12 writable doubles.
 */
enum C2pStatus c2p_result_transform(const struct C2pResult *result, double *out);

/**
 * Releases a result; null is ignored.
 *
 * # Safety
 * `result` must be null or a handle not yet freed.
 */
void c2p_result_free(struct C2pResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* C2P_H */
