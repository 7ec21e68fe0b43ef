/* C interface to the muvit segmentation library.
 *
 * Every fallible call returns a muvit_status. On failure the message is
 * available from muvit_last_error() until the next call on the same thread.
 * Strings returned through char** out-parameters are JSON documents owned by
 * the caller and released with muvit_string_free().
 */
#ifndef MUVIT_H
#define MUVIT_H

#include <stddef.h>
#include <stdint.h>

#if defined(MUVIT_BUILDING_LIBRARY)
#define MUVIT_API __attribute__((visibility("default")))
#else
#define MUVIT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum muvit_status {
  MUVIT_OK = 0,
  MUVIT_ERR_USAGE = 1,        /* API misuse, bad arguments, wrong shapes */
  MUVIT_ERR_CONFIG = 2,       /* invalid configuration or mismatched state */
  MUVIT_ERR_PARSE = 3,        /* malformed file or document */
  MUVIT_ERR_IO = 4,
  MUVIT_ERR_NUMERIC = 5,      /* NaN/Inf encountered */
  MUVIT_ERR_VERIFICATION = 6, /* a self-check failed */
  MUVIT_ERR_INTERNAL = 7
} muvit_status;

typedef struct muvit_model muvit_model;
typedef struct muvit_dataset muvit_dataset;

MUVIT_API const char* muvit_version(void);
MUVIT_API const char* muvit_status_name(muvit_status status);
MUVIT_API const char* muvit_last_error(void);
MUVIT_API void muvit_string_free(char* s);

/* ---- models ---------------------------------------------------------- */

/* config_json: run configuration document (variant, input_size, ...). The
 * model is initialized from its "seed" key. */
MUVIT_API muvit_status muvit_model_create(const char* config_json, muvit_model** out);
MUVIT_API muvit_status muvit_model_load(const char* path, muvit_model** out);
/* Writes parameters, running statistics and, after training, optimizer
 * state. */
MUVIT_API muvit_status muvit_model_save(const muvit_model* model, const char* path);
/* Writes the best-by-validation-IoU state of the last training run. */
MUVIT_API muvit_status muvit_model_save_best(const muvit_model* model, const char* path);
MUVIT_API void muvit_model_free(muvit_model* model);

MUVIT_API muvit_status muvit_model_config(const muvit_model* model, char** json_out);

/* images: n*3*S*S floats, NCHW. logits: n*classes*S*S floats. Eval mode. */
MUVIT_API muvit_status muvit_model_forward(muvit_model* model, const float* images, int64_t n,
                                           float* logits, size_t logits_len);

/* Per-layer parameter and MAC report for a configuration, with the
 * analytic/enumerated/instrumented cross-checks. */
MUVIT_API muvit_status muvit_count(const char* config_json, char** report_json);

/* ---- datasets -------------------------------------------------------- */

MUVIT_API muvit_status muvit_dataset_synth(uint64_t seed, int64_t n, int size, double difficulty,
                                           muvit_dataset** out);
MUVIT_API muvit_status muvit_dataset_load_dir(const char* dir, muvit_dataset** out);
MUVIT_API muvit_status muvit_dataset_save_dir(const muvit_dataset* data, const char* dir);
/* Copies samples [first, first + count). */
MUVIT_API muvit_status muvit_dataset_slice(const muvit_dataset* data, int64_t first, int64_t count,
                                           muvit_dataset** out);
MUVIT_API int64_t muvit_dataset_size(const muvit_dataset* data);
MUVIT_API void muvit_dataset_free(muvit_dataset* data);

/* ---- training and evaluation ----------------------------------------- */

/* Trains with the model's run configuration. val may be NULL; log_path may
 * be NULL or empty. history_json receives per-epoch records. */
MUVIT_API muvit_status muvit_train(muvit_model* model, const muvit_dataset* train, const muvit_dataset* val,
                                   const char* log_path, char** history_json);

MUVIT_API muvit_status muvit_evaluate(muvit_model* model, const muvit_dataset* data, double threshold,
                                      char** report_json);

/* Forward latency on this machine (mean/p50/p95 in milliseconds). */
MUVIT_API muvit_status muvit_bench(muvit_model* model, int iters, int batch, char** report_json);

/* scope: "ops", "blocks" or "model". Returns MUVIT_ERR_VERIFICATION (with the
 * report still filled in) when any case exceeds the threshold. */
MUVIT_API muvit_status muvit_gradcheck(const char* scope, double threshold, char** report_json);

#ifdef __cplusplus
}
#endif

#endif /* MUVIT_H */
