/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef VIPPIPE_H
#define VIPPIPE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum VipStatus {
  VIP_STATUS_OK = 0,
  VIP_STATUS_NULL_ARGUMENT = 1,
  VIP_STATUS_INVALID_UTF8 = 2,
  VIP_STATUS_IO = 3,
  VIP_STATUS_PARSE = 4,
  VIP_STATUS_SCHEMA = 5,
  VIP_STATUS_INVALID_CONFIG = 6,
  VIP_STATUS_INFEASIBLE = 7,
  VIP_STATUS_OUT_OF_RANGE = 8,
  VIP_STATUS_BUFFER_TOO_SMALL = 9,
  VIP_STATUS_FRAME = 10,
  VIP_STATUS_METRIC = 11,
  VIP_STATUS_UNKNOWN_METRIC = 12,
  VIP_STATUS_DEGENERATE_MAP = 13,
  VIP_STATUS_PANIC = 14,
  VIP_STATUS_INTERNAL = 15,
} VipStatus;

// A manifest plus run config, iterated item by item.
typedef struct VipDataset VipDataset;

// A loaded manifest.
typedef struct VipManifest VipManifest;

// Clip planning parameters. `mode` is 0 for contiguous, 1 for uniform.
typedef struct VipClipConfig {
  int64_t clip_length;
  int64_t num_clips;
  int64_t clip_stride;
  size_t clip_offset;
  bool random_offset;
  uint32_t mode;
} VipClipConfig;

// Axis-aligned box in pixel coordinates.
typedef struct VipBox {
  double xmin;
  double ymin;
  double xmax;
  double ymax;
} VipBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, matching the `vippipe` crate. Static; do not free.
const char *vip_version(void);

// Message for the last failed call on this thread, or null. Valid until the
// next call into the library from this thread; do not free.
const char *vip_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string returned through a `char **` out parameter
// of this library, not yet freed.
void vip_string_free(char *s);

// Loads a manifest file or dataset directory.
//
// # Safety
// `path` must be a NUL-terminated string and `out` valid for writes.
enum VipStatus vip_manifest_load(const char *path, struct VipManifest **out);

// Number of videos in the manifest.
//
// # Safety
// `m` must be a live handle and `out` valid for writes.
enum VipStatus vip_manifest_video_count(const struct VipManifest *m, size_t *out);

// Validates the manifest. Writes the violation count to `out_violations`
// and, when `out_json` is not null, the report as a JSON string.
//
// # Safety
// `m` must be a live handle; out pointers must be null or valid for writes.
enum VipStatus vip_manifest_validate(const struct VipManifest *m,
                                     bool check_files,
                                     size_t *out_violations,
                                     char **out_json);

// # Safety
// `m` must be null or a handle from [`vip_manifest_load`], not yet freed.
void vip_manifest_free(struct VipManifest *m);

// Plans clips for a video of `video_length` frames.
//
// Indices are written clip after clip into `buf`; `out_len` receives the
// total index count, `out_clips` the number of clips (all clips have the
// same length). Returns `BufferTooSmall` with the lengths filled in when
// `buf` is null or shorter than needed.
//
// # Safety
// `cfg` must be valid; `buf` null or valid for `cap` writes; `out_len` and
// `out_clips` valid for writes.
enum VipStatus vip_plan_clips(size_t video_length,
                              const struct VipClipConfig *cfg,
                              uint64_t seed,
                              size_t *buf,
                              size_t cap,
                              size_t *out_len,
                              size_t *out_clips);

// Opens the dataset described by a run config over a manifest. Overrides
// are `key=value` strings applied on top of the config file.
//
// # Safety
// Paths must be NUL-terminated; `overrides` must hold `n_overrides` valid
// strings (or be null when `n_overrides` is 0); `out` valid for writes.
enum VipStatus vip_dataset_open(const char *manifest_path,
                                const char *config_path,
                                const char *const *overrides,
                                size_t n_overrides,
                                struct VipDataset **out);

// # Safety
// `ds` must be a live handle and `out` valid for writes.
enum VipStatus vip_dataset_len(const struct VipDataset *ds, size_t *out);

// Shape of item `index` as {length, height, width, channels}; `out_is_float`
// tells whether samples are f32 (after mean subtraction) or u8.
//
// # Safety
// `ds` must be a live handle; `out_shape` valid for 4 writes; `out_is_float`
// null or valid for writes.
enum VipStatus vip_dataset_item_shape(struct VipDataset *ds,
                                      size_t index,
                                      size_t *out_shape,
                                      bool *out_is_float);

// Copies item `index` in the VIPC dump format, byte-identical to the
// `.vipc` file `vippipe dump` writes for the same inputs.
//
// # Safety
// `ds` must be a live handle; `buf` null or valid for `cap` writes;
// `out_len` valid for writes.
enum VipStatus vip_dataset_item_vipc(struct VipDataset *ds,
                                     size_t index,
                                     uint8_t *buf,
                                     size_t cap,
                                     size_t *out_len);

// Annotation JSON of item `index`, identical to the sidecar `vippipe dump` writes.
//
// # Safety
// `ds` must be a live handle and `out_json` valid for writes.
enum VipStatus vip_dataset_item_annotations(struct VipDataset *ds, size_t index, char **out_json);

// # Safety
// `ds` must be null or a handle from [`vip_dataset_open`], not yet freed.
void vip_dataset_free(struct VipDataset *ds);

// Checks a metric name (`Accuracy`, `IoU`, `AP`, `mAP`, `NSS`, `CC`, any
// case). Returns `UnknownMetric` for anything else.
//
// # Safety
// `name` must be a NUL-terminated string.
enum VipStatus vip_metric_check(const char *name);

// Intersection over union of two boxes.
//
// # Safety
// `a`, `b` and `out` must be valid.
enum VipStatus vip_metric_iou(const struct VipBox *a, const struct VipBox *b, double *out);

// Fraction of `n` predictions equal to their labels.
//
// # Safety
// `pred` and `labels` must hold `n` values; `out` valid for writes.
enum VipStatus vip_metric_accuracy(const uint32_t *pred,
                                   const uint32_t *labels,
                                   size_t n,
                                   double *out);

// NSS of a predicted map against a fixation map (values > 0 are fixations).
//
// # Safety
// `pred` and `fixations` must hold `n` values; `out` valid for writes.
enum VipStatus vip_metric_nss(const double *pred, const double *fixations, size_t n, double *out);

// Pearson correlation of two maps of `n` values.
//
// # Safety
// `a` and `b` must hold `n` values; `out` valid for writes.
enum VipStatus vip_metric_cc(const double *a, const double *b, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VIPPIPE_H */
