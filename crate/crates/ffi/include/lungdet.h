#ifndef LUNGDET_H
#define LUNGDET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LdComparator {
  LD_COMPARATOR_STRICTLY_GREATER = 0,
  LD_COMPARATOR_GREATER_OR_EQUAL = 1,
} LdComparator;

typedef enum LdEmptyPolicy {
  // Images with neither truth nor predictions do not count.
  LD_EMPTY_POLICY_EXCLUDE = 0,
  // Such images score 1.
  LD_EMPTY_POLICY_COUNT_AS_ONE = 1,
} LdEmptyPolicy;

typedef enum LdShrinkMode {
  LD_SHRINK_MODE_PERCENTILE = 0,
  LD_SHRINK_MODE_FIXED_RESCALE = 1,
} LdShrinkMode;

typedef enum LdStatus {
  LD_STATUS_OK = 0,
  LD_STATUS_NULL_POINTER = 1,
  LD_STATUS_INVALID_ARGUMENT = 2,
  LD_STATUS_NO_CONTRIBUTING_IMAGES = 3,
  LD_STATUS_BUFFER_TOO_SMALL = 4,
  LD_STATUS_PANIC = 5,
} LdStatus;

// Scoring input built up image by image.
typedef struct LdDataset LdDataset;

// Per-source detections for one image, fused on demand.
typedef struct LdEnsemble LdEnsemble;

// Axis-aligned box, top-left corner plus size, in pixels.
typedef struct LdBox {
  double x;
  double y;
  double w;
  double h;
} LdBox;

typedef struct LdDetection {
  double confidence;
  double x;
  double y;
  double w;
  double h;
} LdDetection;

typedef struct LdShrinkParams {
  enum LdShrinkMode mode;
  double low_percentile;
  double high_percentile;
  double scale;
  double rescale_factor;
  double min_size;
} LdShrinkParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `cap`). Returns the full message length plus one, or 0 when
// the last call succeeded.
//
// # Safety
// `buf` must be valid for `cap` writes or null with `cap` 0.
size_t ld_last_error_message(char *buf, size_t cap);

// Library version as a static NUL-terminated string.
const char *ld_version(void);

struct LdDataset *ld_dataset_new(void);

// # Safety
// `ds` must come from [`ld_dataset_new`] and not be used afterwards.
void ld_dataset_free(struct LdDataset *ds);

// Appends one image. `truth` and `predictions` may be null when their count is 0.
//
// # Safety
// `ds` must be a live dataset, `image_id` a NUL-terminated UTF-8 string, and
// the arrays valid for their counts.
enum LdStatus ld_dataset_add_image(struct LdDataset *ds,
                                   const char *image_id,
                                   const struct LdBox *truth,
                                   size_t n_truth,
                                   const struct LdDetection *predictions,
                                   size_t n_predictions);

// Number of images added so far, or 0 for a null handle.
//
// # Safety
// `ds` must be a live dataset or null.
size_t ld_dataset_len(const struct LdDataset *ds);

// Mean average precision over the dataset. Pass `n_thresholds` 0 for the
// default ladder 0.40, 0.45, …, 0.75.
//
// # Safety
// `ds` must be a live dataset, `thresholds` valid for `n_thresholds` reads,
// `out_map` valid for one write.
enum LdStatus ld_dataset_evaluate(const struct LdDataset *ds,
                                  const double *thresholds,
                                  size_t n_thresholds,
                                  enum LdComparator comparator,
                                  enum LdEmptyPolicy empty_policy,
                                  double *out_map);

// Greedy NMS. `out` needs room for up to `n` detections; the kept count is
// written to `out_len` even when it returns `BufferTooSmall`.
//
// # Safety
// `dets` valid for `n` reads, `out` for `out_cap` writes, `out_len` for one write.
enum LdStatus ld_nms(const struct LdDetection *dets,
                     size_t n,
                     double iou_threshold,
                     struct LdDetection *out,
                     size_t out_cap,
                     size_t *out_len);

// Defaults: percentile mode, 20th/80th percentiles, scale 1.6, rescale 0.875,
// minimum size 1.
struct LdShrinkParams ld_shrink_params_default(void);

struct LdEnsemble *ld_ensemble_new(void);

// # Safety
// `en` must come from [`ld_ensemble_new`] and not be used afterwards.
void ld_ensemble_free(struct LdEnsemble *en);

// Adds one source's detections (one fold or checkpoint) for the image.
//
// # Safety
// `en` must be a live ensemble and `dets` valid for `n` reads.
enum LdStatus ld_ensemble_add_source(struct LdEnsemble *en,
                                     const struct LdDetection *dets,
                                     size_t n);

// Clusters the sources, fuses each cluster, then applies NMS. `params` may be
// null for the defaults. Output capacity equal to the total number of input
// detections always suffices.
//
// # Safety
// `en` must be a live ensemble, `params` null or valid, `out` valid for
// `out_cap` writes and `out_len` for one write.
enum LdStatus ld_ensemble_run(const struct LdEnsemble *en,
                              double cluster_iou,
                              const struct LdShrinkParams *params,
                              double nms_threshold,
                              struct LdDetection *out,
                              size_t out_cap,
                              size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LUNGDET_H */
