#ifndef SEMIFLOW_H
#define SEMIFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_ARGUMENT = 1,
  SF_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad configuration, checkpoint or parameter value.
   */
  SF_STATUS_CONFIG = 3,
  /**
   * Malformed or mis-shaped graph.
   */
  SF_STATUS_INVALID_GRAPH = 4,
  /**
   * Solver failure or non-finite values.
   */
  SF_STATUS_NUMERIC = 5,
  SF_STATUS_IO = 6,
  /**
   * `out_len` too small; `written` holds the required length.
   */
  SF_STATUS_BUFFER_TOO_SMALL = 7,
  SF_STATUS_PANIC = 8,
} SfStatus;

/**
 * A 3D graph with vertex features, edges and global properties.
 */
typedef struct SfGraph SfGraph;

/**
 * Trained or randomly initialized model.
 */
typedef struct SfModel SfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint file written by training.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
SfStatus sf_model_load(const char *path, SfModel **out);

/**
 * Builds a model with fresh parameters. `config_toml` may be null for the
 * default configuration; only its `[model]` section is used.
 *
 * # Safety
 * `config_toml` must be null or NUL-terminated; `out` must be valid.
 */
SfStatus sf_model_random(const char *config_toml, uint64_t seed, SfModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library, freed at most once.
 */
void sf_model_free(SfModel *model);

/**
 * Parses a graph from its JSON form.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must be valid.
 */
SfStatus sf_graph_from_json(const char *json, SfGraph **out);

/**
 * Serializes a graph; free the result with [`sf_string_free`].
 *
 * # Safety
 * `graph` must be a live handle; `out` must be valid.
 */
SfStatus sf_graph_to_json(const SfGraph *graph, char **out);

/**
 * Vertex count of a graph, or 0 for a null handle.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t sf_graph_vertex_count(const SfGraph *graph);

/**
 * # Safety
 * `graph` must be null or a handle from this library, freed at most once.
 */
void sf_graph_free(SfGraph *graph);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed at most once.
 */
void sf_string_free(char *s);

/**
 * `log p(complement | base)`. See [`solver`] for the tolerance arguments.
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
SfStatus sf_log_likelihood(const SfModel *model,
                           const SfGraph *complement,
                           const SfGraph *base,
                           double rtol,
                           double atol,
                           uint32_t rk4_steps,
                           double *out);

/**
 * Samples a complement for `base`. `n = 0` takes the most probable size
 * from the number head. Features are rounded down to integers.
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
SfStatus sf_sample(const SfModel *model,
                   const SfGraph *base,
                   uint32_t n,
                   uint64_t seed,
                   double rtol,
                   double atol,
                   uint32_t rk4_steps,
                   SfGraph **out);

/**
 * Writes `p(N = k + 1 | base)` for `k < n_max` into `out`. `written`
 * receives `n_max` even when the buffer is too small.
 *
 * # Safety
 * Handles must be live; `out` must hold `out_len` doubles; `written` must be valid.
 */
SfStatus sf_number_distribution(const SfModel *model,
                                const SfGraph *base,
                                double *out,
                                size_t out_len,
                                size_t *written);

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread; do not free.
 */
const char *sf_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMIFLOW_H */
