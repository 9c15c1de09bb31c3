/* C interface to the ldreg library. Every function returns a status code;
 * on failure ldreg_last_error() describes the problem (thread-local, valid
 * until the next call on the same thread). Points are passed point-major:
 * x[i * dim + j] is coordinate j of point i. */
#ifndef LDREG_H
#define LDREG_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define LDREG_API __declspec(dllexport)
#else
#define LDREG_API __attribute__((visibility("default")))
#endif

typedef enum ldreg_status {
  LDREG_OK = 0,
  LDREG_ERR_CONFIG = 1,
  LDREG_ERR_TRAINING = 2,
  LDREG_ERR_DEGENERATE = 3,
  LDREG_ERR_CONTRACT = 4,
  LDREG_ERR_IO = 5,
  LDREG_ERR_ARGUMENT = 6, /* null pointer or bad handle */
  LDREG_ERR_INTERNAL = 7
} ldreg_status;

typedef struct ldreg_flow ldreg_flow;
typedef struct ldreg_target ldreg_target;

LDREG_API const char* ldreg_last_error(void);
LDREG_API const char* ldreg_version(void);
LDREG_API const char* ldreg_status_name(ldreg_status status);

/* Flows */
LDREG_API ldreg_status ldreg_flow_create(size_t dim, size_t layers, size_t hidden, uint64_t seed, ldreg_flow** out);
LDREG_API ldreg_status ldreg_flow_load(const char* path, ldreg_flow** out);
LDREG_API ldreg_status ldreg_flow_save(const ldreg_flow* flow, const char* path);
LDREG_API void ldreg_flow_free(ldreg_flow* flow);
LDREG_API size_t ldreg_flow_dim(const ldreg_flow* flow);
LDREG_API size_t ldreg_flow_num_params(const ldreg_flow* flow);
LDREG_API ldreg_status ldreg_flow_log_density(const ldreg_flow* flow, const double* x, size_t n, double* out);
/* x_out holds n * dim values, log_q_out n values (may be NULL). */
LDREG_API ldreg_status ldreg_flow_sample(const ldreg_flow* flow, size_t n, uint64_t seed, double* x_out,
                                         double* log_q_out);

/* Targets, by registry name ("gmm2", "gmm2-biased", "gmm2-T4", ...). */
LDREG_API ldreg_status ldreg_target_create(const char* name, ldreg_target** out);
LDREG_API void ldreg_target_free(ldreg_target* target);
LDREG_API size_t ldreg_target_dim(const ldreg_target* target);
LDREG_API ldreg_status ldreg_target_log_density(const ldreg_target* target, const double* x, size_t n, double* out);
LDREG_API uint64_t ldreg_target_evaluations(const ldreg_target* target);

/* Reverse ESS of log importance weights after clipping the top fraction. */
LDREG_API ldreg_status ldreg_ess(const double* log_weights, size_t n, double clip_fraction, double* out);

/* Workflows driven by a JSON config string. Each writes a run directory
 * (or a CSV file for the dataset workflow). */
LDREG_API ldreg_status ldreg_run_dataset(const char* config_json, const char* csv_path);
LDREG_API ldreg_status ldreg_run_train(const char* config_json, const char* run_dir);
LDREG_API ldreg_status ldreg_run_anneal(const char* config_json, const char* run_dir);
LDREG_API ldreg_status ldreg_run_refine(const char* config_json, const char* run_dir);
LDREG_API ldreg_status ldreg_run_eval(const char* config_json, const char* run_dir);
LDREG_API ldreg_status ldreg_run_demo_ldr_only(const char* config_json, const char* run_dir);

/* Markdown summary of run directories; free the result with ldreg_string_free. */
LDREG_API ldreg_status ldreg_report(const char* const* run_dirs, size_t n, char** markdown_out);
LDREG_API void ldreg_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif
