#ifndef MAPF_EGT_H
#define MAPF_EGT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MapfStatus {
  MAPF_STATUS_OK = 0,
  MAPF_STATUS_NULL_POINTER = 1,
  MAPF_STATUS_INVALID_ARGUMENT = 2,
  MAPF_STATUS_PARSE_ERROR = 3,
  MAPF_STATUS_IO_ERROR = 4,
  MAPF_STATUS_TRAIN_ERROR = 5,
  MAPF_STATUS_DIMENSION_MISMATCH = 6,
  MAPF_STATUS_UNREACHABLE = 7,
  MAPF_STATUS_PANIC = 8,
} MapfStatus;

/**
 * Opaque grid map.
 */
typedef struct MapfMap MapfMap;

/**
 * Opaque tabular policy.
 */
typedef struct MapfPolicy MapfPolicy;

/**
 * Training options; zero horizon means `2 * (width + height)`.
 */
typedef struct MapfTrainOptions {
  uint32_t num_agents;
  uint32_t horizon;
  uint32_t batch_size;
  uint32_t max_iterations;
  uint32_t patience;
  double learning_rate;
  uint64_t seed;
} MapfTrainOptions;

/**
 * Evaluation summary. Undefined averages are NaN.
 */
typedef struct MapfMetrics {
  double success_rate;
  double mean_timesteps;
  double obstacle_distance;
  double collisions_per_episode;
  double eval_seconds;
} MapfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *mapf_last_error_message(void);

const char *mapf_version(void);

/**
 * Parses a map from its text form (`.` free, `#` obstacle, `G` goal,
 * `S` start).
 *
 * # Safety
 * `text` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum MapfStatus mapf_map_parse(const char *text, struct MapfMap **out);

/**
 * Random connected map with the given obstacle density.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MapfStatus mapf_map_generate(uint32_t width,
                                  uint32_t height,
                                  double density,
                                  uint64_t seed,
                                  struct MapfMap **out);

/**
 * # Safety
 * `map` must come from this library and not be used afterwards.
 */
void mapf_map_free(struct MapfMap *map);

/**
 * # Safety
 * `map` must be null or a live handle.
 */
uint32_t mapf_map_width(const struct MapfMap *map);

/**
 * # Safety
 * `map` must be null or a live handle.
 */
uint32_t mapf_map_height(const struct MapfMap *map);

/**
 * Length in moves of the A* path from `(x, y)` to the nearest goal.
 *
 * # Safety
 * `map` must be a live handle and `out_len` a valid pointer.
 */
enum MapfStatus mapf_astar_length(const struct MapfMap *map,
                                  uint32_t x,
                                  uint32_t y,
                                  uint32_t *out_len);

struct MapfTrainOptions mapf_train_options_default(void);

/**
 * Trains a shared policy and returns it without the exploration mixture.
 *
 * # Safety
 * `map` must be a live handle; `options` and `out` valid pointers.
 */
enum MapfStatus mapf_train_egt(const struct MapfMap *map,
                               const struct MapfTrainOptions *options,
                               struct MapfPolicy **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MapfStatus mapf_policy_load(const char *path, struct MapfPolicy **out);

/**
 * # Safety
 * `policy` must be a live handle and `path` a NUL-terminated string.
 */
enum MapfStatus mapf_policy_save(const struct MapfPolicy *policy, const char *path);

/**
 * # Safety
 * `policy` must come from this library and not be used afterwards.
 */
void mapf_policy_free(struct MapfPolicy *policy);

/**
 * Writes the action distribution at `(x, y)` in the order up, down, left,
 * right, stay.
 *
 * # Safety
 * `policy` must be a live handle and `out` point to 5 writable doubles.
 */
enum MapfStatus mapf_policy_probabilities(const struct MapfPolicy *policy,
                                          uint32_t x,
                                          uint32_t y,
                                          double *out);

/**
 * Evaluates `policy`, or the A* planner when `policy` is null.
 *
 * # Safety
 * `map` must be a live handle, `policy` null or a live handle, `out` valid.
 */
enum MapfStatus mapf_evaluate(const struct MapfMap *map,
                              const struct MapfPolicy *policy,
                              uint32_t num_agents,
                              uint32_t horizon,
                              uint32_t episodes,
                              uint64_t seed,
                              struct MapfMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAPF_EGT_H */
