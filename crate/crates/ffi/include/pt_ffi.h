#ifndef PT_FFI_H
#define PT_FFI_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Network architecture for `pt_model_new`.
typedef enum PtModelKind {
  PT_MODEL_KIND_TRANSFORMER = 0,
  PT_MODEL_KIND_LSTM = 1,
  PT_MODEL_KIND_MLP = 2,
} PtModelKind;

// Result code of every fallible call.
typedef enum PtStatus {
  PT_STATUS_OK = 0,
  PT_STATUS_NULL_POINTER = 1,
  PT_STATUS_INVALID_ARGUMENT = 2,
  PT_STATUS_SHAPE = 3,
  PT_STATUS_NUMERIC = 4,
  PT_STATUS_DATA = 5,
  PT_STATUS_IO = 6,
  PT_STATUS_CHECKPOINT = 7,
  PT_STATUS_PANIC = 8,
} PtStatus;

// Opaque handle to a trained or freshly initialized allocation network.
typedef struct PtModel PtModel;

// Annualized performance statistics of a daily return series.
typedef struct PtMetrics {
  double returns;
  double vol;
  double sharpe;
  double sortino;
  double mdd;
  double calmar;
  double pct_positive;
} PtMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version string. The pointer is static and must not be freed.
const char *pt_version(void);

// Message of the last failed call on this thread, or null if none. The
// pointer stays valid until the next failing call on the same thread.
const char *pt_last_error_message(void);

// Negative Sharpe ratio of the cost-adjusted portfolio returns.
//
// `weights` and `returns` are row-major `rows x n_assets` matrices; row `t`
// of `weights` earns row `t` of `returns`. `prev_weights` holds the book
// before the first row (`n_assets` values) or is null for an empty book.
//
// # Safety
// Non-null pointers must reference buffers of the stated lengths.
enum PtStatus pt_sharpe_loss(const double *weights,
                             const double *returns,
                             size_t rows,
                             size_t n_assets,
                             const double *prev_weights,
                             double cost_rate,
                             double *out_loss);

// Performance statistics of `len` daily simple returns.
//
// # Safety
// `daily_returns` must reference `len` values and `out` one `PtMetrics`.
enum PtStatus pt_compute_metrics(const double *daily_returns, size_t len, struct PtMetrics *out);

// Tangency weights with unit gross exposure, estimated from the last
// `lookback` rows of a row-major `rows x n_assets` return history. `ridge`
// is relative to the average asset variance.
//
// # Safety
// `history` must reference `rows * n_assets` values and `out_weights`
// `out_len` writable values.
enum PtStatus pt_mv_weights(const double *history,
                            size_t rows,
                            size_t n_assets,
                            size_t lookback,
                            double ridge,
                            double *out_weights,
                            size_t out_len);

// Creates a randomly initialized network. Attention settings (`n_heads`,
// `t2v_k`) are ignored by the LSTM and MLP; `d_model` is their hidden width.
//
// # Safety
// `out_model` must be a valid pointer; on success it receives a handle that
// must be released with `pt_model_free`.
enum PtStatus pt_model_new(enum PtModelKind kind,
                           size_t n_assets,
                           size_t window,
                           size_t d_model,
                           size_t n_heads,
                           size_t t2v_k,
                           size_t n_layers,
                           uint64_t seed,
                           struct PtModel **out_model);

// Loads a network from a checkpoint file.
//
// # Safety
// `path` must be a nul-terminated string and `out_model` a valid pointer.
enum PtStatus pt_model_load(const char *path, struct PtModel **out_model);

// Writes the network to a checkpoint file.
//
// # Safety
// `model` must be a live handle and `path` a nul-terminated string.
enum PtStatus pt_model_save(const struct PtModel *model, const char *path);

// Number of assets the network allocates over, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t pt_model_n_assets(const struct PtModel *model);

// Lookback window of the network, or 0 for a null handle. Predictions need
// `2 * window` rows of history.
//
// # Safety
// `model` must be null or a live handle.
size_t pt_model_window(const struct PtModel *model);

// Allocation for the day after the last history row. `history` is a
// row-major `rows x n_assets` matrix of daily returns with
// `rows == 2 * window`.
//
// # Safety
// `model` must be a live handle, `history` must reference
// `rows * n_assets` values and `out_weights` `out_len` writable values.
enum PtStatus pt_model_predict(const struct PtModel *model,
                               const double *history,
                               size_t rows,
                               size_t n_assets,
                               double *out_weights,
                               size_t out_len);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void pt_model_free(struct PtModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PT_FFI_H */
