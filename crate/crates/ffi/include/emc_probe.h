#ifndef EMC_PROBE_H
#define EMC_PROBE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EmcStatus {
  EMC_STATUS_OK = 0,
  EMC_STATUS_NULL_POINTER = 1,
  EMC_STATUS_INVALID_UTF8 = 2,
  EMC_STATUS_INVALID_ARGUMENT = 3,
  EMC_STATUS_CONFIG = 4,
  EMC_STATUS_IO = 5,
  EMC_STATUS_NUMERIC = 6,
  EMC_STATUS_OUT_OF_RANGE = 7,
  EMC_STATUS_PANIC = 8,
} EmcStatus;

/**
 * A loaded dataset.
 */
typedef struct EmcDataset EmcDataset;

/**
 * Result of one EMC search with the thresholds it used.
 */
typedef struct EmcMeasurement EmcMeasurement;

/**
 * Records of a completed sweep.
 */
typedef struct EmcSweep EmcSweep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call into this library from the same thread.
 */
const char *emc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *emc_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void emc_string_free(char *s);

/**
 * Gaussian class clusters.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum EmcStatus emc_dataset_synth_clusters(size_t classes,
                                          size_t dim,
                                          size_t n,
                                          double separation,
                                          uint64_t seed,
                                          struct EmcDataset **out);

/**
 * Numeric CSV with a label column.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be valid.
 */
enum EmcStatus emc_dataset_load_csv(const char *path,
                                    const char *label_column,
                                    size_t num_classes,
                                    struct EmcDataset **out);

/**
 * # Safety
 * `ds` must be a live dataset handle; `out` must be valid.
 */
enum EmcStatus emc_dataset_len(const struct EmcDataset *ds, size_t *out);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void emc_dataset_free(struct EmcDataset *ds);

/**
 * Parameter count of a JSON model spec.
 *
 * # Safety
 * `model_json` must be NUL-terminated; `out` must be valid.
 */
enum EmcStatus emc_param_count(const char *model_json, size_t *out);

/**
 * Measures the EMC of a model on `ds`. The model, training and search
 * configs are JSON documents in the run-config format; `reparam_json` may
 * be null for the plain parameterization.
 *
 * # Safety
 * Handles must be live, strings NUL-terminated, `out` valid.
 */
enum EmcStatus emc_measure(const struct EmcDataset *ds,
                           const char *model_json,
                           const char *train_json,
                           const char *emc_json,
                           const char *reparam_json,
                           struct EmcMeasurement **out);

/**
 * # Safety
 * `m` must be a live measurement; `out` must be valid.
 */
enum EmcStatus emc_measurement_emc(const struct EmcMeasurement *m, size_t *out);

/**
 * Writes whether the search hit `max_n` and whether it failed at `start_n`.
 *
 * # Safety
 * `m` must be a live measurement; out-pointers must be valid.
 */
enum EmcStatus emc_measurement_flags(const struct EmcMeasurement *m,
                                     bool *saturated,
                                     bool *below_start);

/**
 * Full result with trace and resolved thresholds as JSON.
 *
 * # Safety
 * `m` must be a live measurement; `out` must be valid. Free the string
 * with `emc_string_free`.
 */
enum EmcStatus emc_measurement_to_json(const struct EmcMeasurement *m, char **out);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void emc_measurement_free(struct EmcMeasurement *m);

/**
 * Runs the sweep described by a config file, writing its outputs.
 *
 * # Safety
 * `config_path` must be NUL-terminated; `out` must be valid.
 */
enum EmcStatus emc_sweep_run(const char *config_path, bool resume, struct EmcSweep **out);

/**
 * # Safety
 * `s` must be a live sweep; out-pointers must be valid.
 */
enum EmcStatus emc_sweep_counts(const struct EmcSweep *s, size_t *records, size_t *failed);

/**
 * Record `index` as JSON.
 *
 * # Safety
 * `s` must be a live sweep; `out` must be valid. Free the string with
 * `emc_string_free`.
 */
enum EmcStatus emc_sweep_record_json(const struct EmcSweep *s, size_t index, char **out);

/**
 * # Safety
 * `s` must be null or a handle not yet freed.
 */
void emc_sweep_free(struct EmcSweep *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMC_PROBE_H */
