#ifndef CTSCREEN_H
#define CTSCREEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum {
  CTS_STATUS_OK = 0,
  CTS_STATUS_NULL_POINTER = 1,
  CTS_STATUS_INVALID_ARGUMENT = 2,
  CTS_STATUS_DATA = 3,
  CTS_STATUS_NUMERIC = 4,
  CTS_STATUS_GRID_TOO_SMALL = 5,
  CTS_STATUS_NON_CONVERGENCE = 6,
  CTS_STATUS_IO = 7,
  CTS_STATUS_PANIC = 8,
} CtsStatus;

typedef enum {
  CTS_ALGORITHM_HDR = 0,
  CTS_ALGORITHM_BRANCH = 1,
} CtsAlgorithm;

typedef enum {
  CTS_MEMBERSHIP_INSIDE = 0,
  CTS_MEMBERSHIP_OUTSIDE = 1,
  CTS_MEMBERSHIP_OFF_GRID = 2,
} CtsMembership;

typedef struct CtsCellField CtsCellField;

typedef struct CtsDrawStore CtsDrawStore;

typedef struct CtsRegion CtsRegion;

/**
 * A subject to predict for. History arrays may be null when their length is 0.
 */
typedef struct {
  double baseline_x;
  double baseline_y;
  const double *x_times;
  const double *x_values;
  size_t n_x;
  const double *y_times;
  const double *y_values;
  size_t n_y;
} CtsRequest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failing call on this thread; empty if none. Owned by the library.
 */
const char *cts_last_error(void);

/**
 * Loads a draw store written by `ctscreen fit`.
 */
CtsStatus cts_draw_store_open(const char *path, CtsDrawStore **out);

/**
 * Fits the model to a dataset CSV. Zero for `classes`, `burn_in` or `keep` selects the default.
 */
CtsStatus cts_fit_file(const char *data_path,
                       size_t classes,
                       size_t burn_in,
                       size_t keep,
                       uint64_t seed,
                       CtsDrawStore **out);

/**
 * Writes the store as NDJSON.
 */
CtsStatus cts_draw_store_save(const CtsDrawStore *store, const char *path);

/**
 * Number of retained draws, or 0 for a null handle.
 */
size_t cts_draw_store_n_draws(const CtsDrawStore *store);

void cts_draw_store_free(CtsDrawStore *store);

/**
 * Log joint predictive density of `k` future points (times strictly increasing).
 */
CtsStatus cts_log_predictive(const CtsDrawStore *store,
                             const CtsRequest *req,
                             const double *times,
                             const double *xs,
                             const double *ys,
                             size_t k,
                             double *out);

/**
 * Predictive cell masses at `future_time` over `grid` (`lo:hi:width,lo:hi:width`).
 */
CtsStatus cts_cell_field_new(const CtsDrawStore *store,
                             const CtsRequest *req,
                             double future_time,
                             const char *grid,
                             CtsCellField **out);

/**
 * Grid size in cells along x and y.
 */
CtsStatus cts_cell_field_dims(const CtsCellField *field, size_t *n_x, size_t *n_y);

/**
 * Copies the masses, x-major (`mass[ix * n_y + iy]`), into `buf` of length `len = n_x * n_y`.
 */
CtsStatus cts_cell_field_mass(const CtsCellField *field,
                              double *buf,
                              size_t len,
                              double *outside_mass);

void cts_cell_field_free(CtsCellField *field);

/**
 * Credible region at level `target`. For the branching search, `c_quick <= 0` picks 0.9 × target.
 */
CtsStatus cts_region_new(const CtsCellField *field,
                         double target,
                         CtsAlgorithm algorithm,
                         double c_quick,
                         CtsRegion **out);

/**
 * Accumulated mass of the selected cells.
 */
double cts_region_p_sum(const CtsRegion *region);

size_t cts_region_n_cells(const CtsRegion *region);

/**
 * Copies up to `len` selected cells as (x index, y index) pairs; writes the count copied to `n_out`.
 */
CtsStatus cts_region_cells(const CtsRegion *region,
                           size_t *ix,
                           size_t *iy,
                           size_t len,
                           size_t *n_out);

/**
 * Whether `(x, y)` falls in a selected cell, an unselected cell, or off the grid.
 */
CtsStatus cts_region_contains(const CtsRegion *region, double x, double y, CtsMembership *out);

void cts_region_free(CtsRegion *region);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTSCREEN_H */
