#ifndef DANCE_H
#define DANCE_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Pass as `lambda` to select it from the default grid on the calibration set.
#define DANCE_LAMBDA_GRID -1.0

// Offset added to row numbers in batch prediction, matching the CLI.
#define DANCE_QUERY_ID_OFFSET 9223372036854775808ull

typedef enum DanceStatus {
  DANCE_STATUS_OK = 0,
  DANCE_STATUS_NULL_POINTER = 1,
  DANCE_STATUS_INVALID_ARGUMENT = 2,
  DANCE_STATUS_NUMERICAL = 3,
  DANCE_STATUS_IO = 4,
  DANCE_STATUS_FORMAT = 5,
  DANCE_STATUS_BUFFER_TOO_SMALL = 6,
  DANCE_STATUS_PANIC = 7,
} DanceStatus;

typedef struct DanceDataset DanceDataset;

typedef struct DanceModel DanceModel;

typedef struct DancePredictor DancePredictor;

typedef struct DanceScoreConfig {
  size_t m_knn;
  size_t m_clr;
  double temperature;
  double noise_epsilon;
  // Non-zero adds the Uniform(0, ε) tie-breaking noise to rank scores.
  uint8_t smoothed;
  uint64_t seed;
} DanceScoreConfig;

typedef struct DanceRfmConfig {
  size_t iterations;
  size_t tuning_budget;
  uint64_t seed;
} DanceRfmConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *dance_last_error_message(void);

const char *dance_version(void);

struct DanceScoreConfig dance_score_config_default(void);

struct DanceRfmConfig dance_rfm_config_default(void);

// Copies `n × d` row-major embeddings and `n` labels into a new dataset.
//
// # Safety
// `rows` must point to `n * d` doubles, `labels` to `n` values, and `out`
// must be writable.
enum DanceStatus dance_dataset_new(const double *rows,
                                   const uint32_t *labels,
                                   size_t n,
                                   size_t d,
                                   size_t class_count,
                                   struct DanceDataset **out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum DanceStatus dance_dataset_read(const char *path, struct DanceDataset **out);

// # Safety
// `data` must be a live handle and `path` a NUL-terminated string.
enum DanceStatus dance_dataset_write(const struct DanceDataset *data, const char *path);

// Row count, dimension and class count; any output pointer may be NULL.
//
// # Safety
// `data` must be a live handle; non-null outputs must be writable.
enum DanceStatus dance_dataset_shape(const struct DanceDataset *data,
                                     size_t *n,
                                     size_t *d,
                                     size_t *class_count);

// # Safety
// `data` must be NULL or a handle not yet freed.
void dance_dataset_free(struct DanceDataset *data);

// Tunes and trains the kernel adapter on `support`. `config` may be NULL
// for defaults.
//
// # Safety
// `support` must be a live handle, `config` NULL or valid, `out` writable.
enum DanceStatus dance_model_fit(const struct DanceDataset *support,
                                 const struct DanceRfmConfig *config,
                                 struct DanceModel **out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum DanceStatus dance_model_read(const char *path, struct DanceModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum DanceStatus dance_model_write(const struct DanceModel *model, const char *path);

// Kernel bandwidth, shape and validation accuracy; any output may be NULL.
//
// # Safety
// `model` must be a live handle; non-null outputs must be writable.
enum DanceStatus dance_model_info(const struct DanceModel *model,
                                  double *bandwidth,
                                  double *shape,
                                  double *validation_accuracy);

// # Safety
// `model` must be NULL or a handle not yet freed.
void dance_model_free(struct DanceModel *model);

// Calibrates a predictor. A NULL `reference` reuses `cal` as the neighbor
// reference (leave-one-out calibration); otherwise `reference` must be
// disjoint from `cal`. Pass [`DANCE_LAMBDA_GRID`] to select `lambda`.
//
// # Safety
// `model` and `cal` must be live handles, `reference` NULL or live,
// `config` NULL or valid, `out` writable.
enum DanceStatus dance_predictor_calibrate(const struct DanceModel *model,
                                           const struct DanceDataset *cal,
                                           const struct DanceDataset *reference,
                                           double alpha,
                                           double lambda,
                                           const struct DanceScoreConfig *config,
                                           struct DancePredictor **out);

// Selected λ and the two branch thresholds (`+∞` when a branch is off);
// any output may be NULL.
//
// # Safety
// `predictor` must be a live handle; non-null outputs must be writable.
enum DanceStatus dance_predictor_thresholds(const struct DancePredictor *predictor,
                                            double *lambda,
                                            double *q_knn,
                                            double *q_clr);

// Writes the calibration artifact as JSON.
//
// # Safety
// `predictor` must be a live handle and `path` a NUL-terminated string.
enum DanceStatus dance_predictor_write_artifact(const struct DancePredictor *predictor,
                                                const char *path);

// Prediction set for one embedding as a 0/1 membership mask of length
// `class_count`. `point_id` keys the smoothing noise.
//
// # Safety
// `predictor` must be a live handle, `z` must point to `d` doubles and
// `mask` to `class_count` writable bytes.
enum DanceStatus dance_predictor_predict(const struct DancePredictor *predictor,
                                         const double *z,
                                         size_t d,
                                         uint64_t point_id,
                                         uint8_t *mask,
                                         size_t class_count);

// Prediction sets for every row of `queries` as an `n × class_count`
// row-major membership mask. Row `i` uses point id
// `DANCE_QUERY_ID_OFFSET + i`.
//
// # Safety
// `predictor` and `queries` must be live handles and `masks` must point to
// `mask_len` writable bytes.
enum DanceStatus dance_predictor_predict_dataset(const struct DancePredictor *predictor,
                                                 const struct DanceDataset *queries,
                                                 uint8_t *masks,
                                                 size_t mask_len);

// # Safety
// `predictor` must be NULL or a handle not yet freed.
void dance_predictor_free(struct DancePredictor *predictor);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DANCE_H */
