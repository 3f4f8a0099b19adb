#ifndef NAPOOL_H
#define NAPOOL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define NAPOOL_OK 0

/**
 * Invalid configuration or arguments.
 */
#define NAPOOL_CONFIG_ERROR 1

/**
 * The operation failed while running.
 */
#define NAPOOL_RUNTIME_ERROR 2

#define NAPOOL_NULL_POINTER 3

/**
 * An output buffer is too small; the required length was written back.
 */
#define NAPOOL_BUFFER_TOO_SMALL 4

/**
 * A Rust panic was caught at the boundary.
 */
#define NAPOOL_PANIC 5

/**
 * Opaque model handle.
 */
typedef struct NapoolModel NapoolModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread; empty after a
 * successful call. Valid until the next call on the same thread.
 */
const char *napool_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *napool_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void napool_string_free(char *s);

/**
 * Frees a byte buffer returned by this library. Null is ignored.
 *
 * # Safety
 * `data`/`len` must be exactly a pair returned by this library.
 */
void napool_bytes_free(uint8_t *data, size_t len);

/**
 * Builds a freshly initialized model from a JSON model config, e.g.
 * `{"arch":"nap","d":128,"n_max":128,"vocab":100,"head":"per_token"}`.
 * `precision` is 32 or 64.
 *
 * # Safety
 * `config_json` must be a valid C string; `out` a valid pointer.
 */
int32_t napool_model_new(const char *config_json,
                         uint64_t seed,
                         uint32_t precision,
                         struct NapoolModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from `napool_model_new` and not be freed twice.
 */
void napool_model_free(struct NapoolModel *model);

/**
 * Number of trainable scalars.
 *
 * # Safety
 * `model` must be a live handle; `out` a valid pointer.
 */
int32_t napool_model_param_count(const struct NapoolModel *model, size_t *out);

/**
 * Eval-mode logits for `batch` sequences of `n` tokens (row-major).
 * Writes `*written` values to `out`; if `capacity` is too small, returns
 * `NAPOOL_BUFFER_TOO_SMALL` with the required length in `*written`.
 *
 * # Safety
 * `tokens` must hold `batch * n` values and `out` `capacity` values.
 */
int32_t napool_model_forward(const struct NapoolModel *model,
                             const uint32_t *tokens,
                             size_t batch,
                             size_t n,
                             double *out,
                             size_t capacity,
                             size_t *written);

/**
 * Trains one run from a JSON run config and returns the metric record as
 * a JSON string (free with `napool_string_free`).
 *
 * # Safety
 * `config_json` must be a valid C string; `out_json` a valid pointer.
 */
int32_t napool_train_run(const char *config_json, char **out_json);

/**
 * Probabilities of the argmin, first and argmax cases for vocabulary `s`
 * and length `n`, written to `out[0..3]`.
 *
 * # Safety
 * `out` must hold three doubles.
 */
int32_t napool_case_probabilities(size_t s, size_t n, double *out);

/**
 * Normalized two-token weighting of binary inputs; equals XOR.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
int32_t napool_xor_normalized(uint8_t x1, uint8_t x2, double *out);

/**
 * Output-scale probe as CSV (`aggregator,N,sigma,mean_norm` with header).
 * `aggregator` is one of attention, mean, sum, max, normalized.
 *
 * # Safety
 * `aggregator` must be a valid C string, `ns` hold `ns_len` values and
 * `out_csv` be a valid pointer.
 */
int32_t napool_scaling_probe_csv(const char *aggregator,
                                 const size_t *ns,
                                 size_t ns_len,
                                 size_t d_h,
                                 size_t samples,
                                 uint64_t seed,
                                 char **out_csv);

/**
 * Renders the summaries of a JSONL results file onto the grid described
 * by `spec_json` (`{"mode":"min_mean_max","metric":"train","upscale":8,
 * "lrs":[...],"xs":[...]}`). The records must hold one architecture.
 * `png` selects PNG over binary PPM. Free the result with
 * `napool_bytes_free`.
 *
 * # Safety
 * String arguments must be valid C strings; out-pointers valid.
 */
int32_t napool_render_grid(const char *results_path,
                           const char *spec_json,
                           bool png,
                           uint8_t **out_data,
                           size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NAPOOL_H */
