/* SPDX-License-Identifier: Apache-2.0 */
#ifndef NEWSRET_NEWSRET_H
#define NEWSRET_NEWSRET_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define NR_API __declspec(dllexport)
#else
#define NR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. NR_OK is zero; every failure sets a thread-local message. */
typedef enum nr_status {
  NR_OK = 0,
  NR_ERR_USAGE = 1,
  NR_ERR_CONFIG = 2,
  NR_ERR_DATA = 3,
  NR_ERR_DEPENDENCY = 4,
  NR_ERR_DIMENSION = 5,
  NR_ERR_NUMERIC = 6,
  NR_ERR_CONTRACT = 7,
  NR_ERR_LENGTH = 8,
  NR_ERR_PRECONDITION = 9,
  NR_ERR_IO = 10,
  NR_ERR_PARSE = 11,
  NR_ERR_LOOKUP = 12,
  NR_ERR_INSUFFICIENT_UNIVERSE = 13,
  NR_ERR_UNDEFINED_SHARPE = 14,
  NR_ERR_BANKRUPT = 15,
  NR_ERR_DOMAIN = 16,
  NR_ERR_INVALID_ARGUMENT = 17,
  NR_ERR_INTERNAL = 18
} nr_status;

typedef struct nr_forecaster nr_forecaster;

/* Message for the last failure on this thread; empty after success. */
NR_API const char* nr_last_error(void);
NR_API const char* nr_status_name(nr_status status);

/* Process exit status the CLI uses for `status`. */
NR_API int nr_exit_code(nr_status status);

/* Runs one pipeline stage. `out_dir` may be NULL; `seed` is used when `has_seed` is non-zero. */
NR_API nr_status nr_run_command(const char* command, const char* config_path, const char* out_dir, int has_seed,
                                uint64_t seed);

/* Loads `<stem>.ckpt.json` and `<stem>.config.json`. */
NR_API nr_status nr_forecaster_load(const char* stem, nr_forecaster** out);
NR_API void nr_forecaster_free(nr_forecaster* forecaster);
NR_API nr_status nr_forecaster_predict(const nr_forecaster* forecaster, const int32_t* token_ids, size_t n_tokens,
                                       double* out);
NR_API size_t nr_forecaster_max_len(const nr_forecaster* forecaster);

/* Monthly-series statistics. */
NR_API nr_status nr_cumulative_curve(const double* monthly, size_t n, double* out_curve);
NR_API nr_status nr_annualized_return(const double* monthly, size_t n, double* out);
NR_API nr_status nr_sharpe_ratio(const double* monthly, size_t n, double* out);

/* Decile of each value: rank ascending by value, ties by `keys` order (strcmp). */
NR_API nr_status nr_assign_deciles(const double* values, const char* const* keys, size_t n, int32_t* out_deciles);

#ifdef __cplusplus
}
#endif

#endif
