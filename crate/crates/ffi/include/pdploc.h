#ifndef PDPLOC_H
#define PDPLOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by all functions.
 */
typedef enum PdpStatus {
  PDP_STATUS_OK = 0,
  PDP_STATUS_NULL_POINTER = 1,
  PDP_STATUS_INVALID_ARGUMENT = 2,
  PDP_STATUS_SHAPE = 3,
  PDP_STATUS_FORMAT = 4,
  PDP_STATUS_IO = 5,
  PDP_STATUS_DIVERGED = 6,
  PDP_STATUS_UNSUPPORTED = 7,
  PDP_STATUS_NON_FINITE = 8,
  PDP_STATUS_EMPTY_DATASET = 9,
  PDP_STATUS_BUFFER_TOO_SMALL = 10,
  PDP_STATUS_PANIC = 11,
} PdpStatus;

/**
 * Trained weights together with their model and compression settings.
 */
typedef struct PdpCheckpoint PdpCheckpoint;

/**
 * A set of PDP samples with their labels.
 */
typedef struct PdpDataset PdpDataset;

/**
 * Localization error statistics in meters.
 */
typedef struct PdpErrorSummary {
  double mean;
  double std_dev;
  double p50;
  double p67;
  double p80;
  double p90;
} PdpErrorSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *pdploc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pdploc_version(void);

/**
 * Synthesizes `samples` PDPs on the first `sensors` sensors of the default
 * grid (0 selects all of them).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum PdpStatus pdploc_dataset_generate(size_t samples,
                                       uint64_t seed,
                                       size_t sensors,
                                       struct PdpDataset **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum PdpStatus pdploc_dataset_read(const char *path, struct PdpDataset **out);

/**
 * # Safety
 * `dataset` must come from this library and `path` be NUL-terminated.
 */
enum PdpStatus pdploc_dataset_write(const struct PdpDataset *dataset, const char *path);

/**
 * Number of samples, 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or come from this library.
 */
size_t pdploc_dataset_len(const struct PdpDataset *dataset);

/**
 * Sensor and delay-bin count of the samples.
 *
 * # Safety
 * `dataset` must come from this library; the outputs must be writable.
 */
enum PdpStatus pdploc_dataset_shape(const struct PdpDataset *dataset,
                                    size_t *sensors,
                                    size_t *time_samples);

/**
 * Copies the (x, y) label of sample `index` into `xy[0..2]`.
 *
 * # Safety
 * `xy` must point to two writable doubles.
 */
enum PdpStatus pdploc_dataset_label(const struct PdpDataset *dataset, size_t index, double *xy);

/**
 * Copies the row-major sensor x delay powers of sample `index`.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum PdpStatus pdploc_dataset_powers(const struct PdpDataset *dataset,
                                     size_t index,
                                     double *buf,
                                     size_t len);

/**
 * # Safety
 * `dataset` must be null or an unreleased handle from this library.
 */
void pdploc_dataset_free(struct PdpDataset *dataset);

/**
 * Forward FLOPs of one sample for a preset such as `sst-small`. A null
 * `family` selects lswiglu for sst tokens and vanilla otherwise.
 *
 * # Safety
 * String arguments must be NUL-terminated; `flops` must be writable.
 */
enum PdpStatus pdploc_flops(const char *preset, const char *family, size_t sensors, double *flops);

/**
 * Trains a preset on `dataset` with default hyper-parameters except the
 * given epoch count, seed and augmentation list (`all`, `none` or a comma
 * list of `drop`, `shift`, `mixup`; null keeps all three).
 *
 * # Safety
 * `dataset` must come from this library, strings be NUL-terminated or
 * null where allowed, and `out` writable.
 */
enum PdpStatus pdploc_train(const struct PdpDataset *dataset,
                            const char *preset,
                            const char *family,
                            size_t epochs,
                            uint64_t seed,
                            const char *augment,
                            struct PdpCheckpoint **out);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum PdpStatus pdploc_checkpoint_load(const char *path, struct PdpCheckpoint **out);

/**
 * # Safety
 * `checkpoint` must come from this library and `path` be NUL-terminated.
 */
enum PdpStatus pdploc_checkpoint_save(const struct PdpCheckpoint *checkpoint, const char *path);

/**
 * Predicted (x, y) positions of every sample, written as `x0 y0 x1 y1 ...`
 * into `xy`, which must hold `2 * pdploc_dataset_len(dataset)` doubles.
 *
 * # Safety
 * Handles must come from this library; `xy` must point to `len` doubles.
 */
enum PdpStatus pdploc_checkpoint_predict(const struct PdpCheckpoint *checkpoint,
                                         const struct PdpDataset *dataset,
                                         double *xy,
                                         size_t len);

/**
 * Euclidean error statistics of the checkpoint on a labelled dataset.
 *
 * # Safety
 * Handles must come from this library; `summary` must be writable.
 */
enum PdpStatus pdploc_checkpoint_evaluate(const struct PdpCheckpoint *checkpoint,
                                          const struct PdpDataset *dataset,
                                          struct PdpErrorSummary *summary);

/**
 * # Safety
 * `checkpoint` must be null or an unreleased handle from this library.
 */
void pdploc_checkpoint_free(struct PdpCheckpoint *checkpoint);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDPLOC_H */
