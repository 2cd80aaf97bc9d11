#ifndef FCRO_H
#define FCRO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Pass as `grouping` to evaluate over joint subgroups.
 */
#define FCRO_JOINT -1

typedef enum {
  FCRO_STATUS_OK = 0,
  FCRO_STATUS_NULL_POINTER = 1,
  FCRO_STATUS_INVALID_ARGUMENT = 2,
  FCRO_STATUS_SHAPE_MISMATCH = 3,
  FCRO_STATUS_UNDEFINED = 4,
  FCRO_STATUS_INFEASIBLE = 5,
  FCRO_STATUS_NUMERIC = 6,
  FCRO_STATUS_PANIC = 7,
} FcroStatus;

typedef enum {
  FCRO_ED_MODE_MAX = 0,
  FCRO_ED_MODE_MEAN_GAP = 1,
} FcroEdMode;

typedef struct FcroBasis FcroBasis;

typedef struct FcroDataset FcroDataset;

typedef struct FcroMatrix FcroMatrix;

typedef struct FcroTable FcroTable;

/**
 * Parameters of the synthetic generator. Fill with [`fcro_gen_spec_default`]
 * and override fields as needed.
 */
typedef struct {
  size_t n;
  size_t p;
  size_t m;
  double target_signal_strength;
  double attribute_signal_strength;
  double noise_sigma;
  double base_positive_rate;
  uint64_t seed;
  double label_sharpness;
  double attribute_label_coupling;
} FcroGenSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or "" after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *fcro_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fcro_version(void);

/**
 * Copies `rows * cols` row-major values into a new matrix.
 *
 * # Safety
 * `data` must point to `rows * cols` readable doubles; `out` must be writable.
 */
FcroStatus fcro_matrix_new(size_t rows, size_t cols, const double *data, FcroMatrix **out);

/**
 * # Safety
 * `m` must be null or a live matrix handle.
 */
size_t fcro_matrix_rows(const FcroMatrix *m);

/**
 * # Safety
 * `m` must be null or a live matrix handle.
 */
size_t fcro_matrix_cols(const FcroMatrix *m);

/**
 * Copies the row-major contents into `out`, which must hold exactly
 * `rows * cols` doubles.
 *
 * # Safety
 * `m` must be a live handle and `out` must point to `len` writable doubles.
 */
FcroStatus fcro_matrix_copy(const FcroMatrix *m, double *out, size_t len);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void fcro_matrix_free(FcroMatrix *m);

/**
 * Thin SVD. `singular_values` receives `min(rows, cols)` values in
 * non-increasing order; `u` and `v` may be null when not wanted.
 *
 * # Safety
 * `m` must be a live handle, `singular_values` must hold `len` doubles, and
 * non-null `u`/`v` must be writable.
 */
FcroStatus fcro_svd(const FcroMatrix *m,
                    double *singular_values,
                    size_t len,
                    FcroMatrix **u,
                    FcroMatrix **v);

/**
 * Top-`k` left singular directions of `z_a` (d×n, columns are samples).
 *
 * # Safety
 * `z_a` must be a live handle and `out` writable.
 */
FcroStatus fcro_build_space(const FcroMatrix *z_a, size_t k, FcroBasis **out);

/**
 * Number of basis vectors, or 0 for null.
 *
 * # Safety
 * `b` must be null or a live basis handle.
 */
size_t fcro_basis_rank(const FcroBasis *b);

/**
 * Ambient dimension, or 0 for null.
 *
 * # Safety
 * `b` must be null or a live basis handle.
 */
size_t fcro_basis_dim(const FcroBasis *b);

/**
 * The d×k orthonormal basis as a new matrix.
 *
 * # Safety
 * `b` must be a live handle and `out` writable.
 */
FcroStatus fcro_basis_matrix(const FcroBasis *b, FcroMatrix **out);

/**
 * Per-direction importance (squared singular values), `rank` entries.
 *
 * # Safety
 * `b` must be a live handle and `out` must hold `len` doubles.
 */
FcroStatus fcro_basis_importance(const FcroBasis *b, double *out, size_t len);

/**
 * # Safety
 * `b` must be null or a handle not yet freed.
 */
void fcro_basis_free(FcroBasis *b);

/**
 * Fraction of the squared Frobenius norm of `z_a` inside the basis span.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
FcroStatus fcro_captured_variance(const FcroMatrix *z_a, const FcroBasis *b, double *out);

/**
 * Column-space loss of `z_t` (d×B) against the basis. When `grad` is
 * non-null it receives the gradient with respect to `z_t`.
 *
 * # Safety
 * Handles must be live, `value` writable, `grad` null or writable.
 */
FcroStatus fcro_corth_loss(const FcroMatrix *z_t,
                           const FcroBasis *b,
                           double *value,
                           FcroMatrix **grad);

/**
 * Row-space loss between `z_t` and `z_a` (both d×B). When `grad` is non-null
 * it receives the gradient with respect to `z_t`.
 *
 * # Safety
 * Handles must be live, `value` writable, `grad` null or writable.
 */
FcroStatus fcro_rorth_loss(const FcroMatrix *z_t,
                           const FcroMatrix *z_a,
                           double *value,
                           FcroMatrix **grad);

/**
 * ROC AUC of `n` scores against 0/1 labels. Returns
 * `FCRO_STATUS_UNDEFINED` when only one class is present.
 *
 * # Safety
 * `scores` and `labels` must hold `n` entries; `out` must be writable.
 */
FcroStatus fcro_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Prediction table of `n` samples with `m` binary attributes.
 * `attributes` is row-major n×m.
 *
 * # Safety
 * `scores`/`labels` must hold `n` entries, `attributes` `n * m`; `out` writable.
 */
FcroStatus fcro_table_new(size_t n,
                          const double *scores,
                          const uint8_t *labels,
                          size_t m,
                          const uint8_t *attributes,
                          FcroTable **out);

/**
 * # Safety
 * `t` must be null or a handle not yet freed.
 */
void fcro_table_free(FcroTable *t);

/**
 * Equalized-odds disparity over `grouping` (an attribute index or
 * `FCRO_JOINT`). Groups with fewer than `min_count` samples of a label are
 * skipped.
 *
 * # Safety
 * `t` must be a live handle and `out` writable.
 */
FcroStatus fcro_ed_disparity(const FcroTable *t,
                             int32_t grouping,
                             size_t min_count,
                             FcroEdMode mode,
                             double *out);

/**
 * Largest AUC gap between groups of `grouping`.
 *
 * # Safety
 * `t` must be a live handle and `out` writable.
 */
FcroStatus fcro_auc_disparity(const FcroTable *t, int32_t grouping, double *out);

FcroGenSpec fcro_gen_spec_default(void);

/**
 * # Safety
 * `spec` must be readable and `out` writable.
 */
FcroStatus fcro_generate(const FcroGenSpec *spec, FcroDataset **out);

/**
 * Subsamples `data` until every attribute's positive-rate gap is near
 * `target_gap`. Returns `FCRO_STATUS_INFEASIBLE` when the gap is out of reach.
 *
 * # Safety
 * `data` must be a live handle and `out` writable.
 */
FcroStatus fcro_amplify(const FcroDataset *data,
                        double target_gap,
                        uint64_t seed,
                        FcroDataset **out);

/**
 * # Safety
 * `d` must be null or a live dataset handle.
 */
size_t fcro_dataset_len(const FcroDataset *d);

/**
 * # Safety
 * `d` must be null or a live dataset handle.
 */
size_t fcro_dataset_num_features(const FcroDataset *d);

/**
 * # Safety
 * `d` must be null or a live dataset handle.
 */
size_t fcro_dataset_num_attributes(const FcroDataset *d);

/**
 * Features as a new n×p matrix (rows are samples).
 *
 * # Safety
 * `d` must be a live handle and `out` writable.
 */
FcroStatus fcro_dataset_features(const FcroDataset *d, FcroMatrix **out);

/**
 * # Safety
 * `d` must be a live handle and `out` must hold `len` bytes.
 */
FcroStatus fcro_dataset_labels(const FcroDataset *d, uint8_t *out, size_t len);

/**
 * Attributes as row-major n×m bytes.
 *
 * # Safety
 * `d` must be a live handle and `out` must hold `len` bytes.
 */
FcroStatus fcro_dataset_attributes(const FcroDataset *d, uint8_t *out, size_t len);

/**
 * Absolute positive-rate gap between the two values of attribute `i`.
 *
 * # Safety
 * `d` must be a live handle and `out` writable.
 */
FcroStatus fcro_dataset_positive_rate_gap(const FcroDataset *d, size_t i, double *out);

/**
 * # Safety
 * `d` must be null or a handle not yet freed.
 */
void fcro_dataset_free(FcroDataset *d);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FCRO_H */
