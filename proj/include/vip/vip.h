/* C interface to the rollout allocation library.
 *
 * Every fallible call returns a vip_status; on failure a message for the
 * calling thread is available from vip_last_error() until the next call.
 * Handles are opaque and released with the matching *_free function.
 * Strings returned through char** are owned by the caller and released with
 * vip_string_free(). Indices are 0-based.
 */
#ifndef VIP_VIP_H
#define VIP_VIP_H

#include <stddef.h>
#include <stdint.h>

#if defined(VIP_BUILDING_LIBRARY)
#define VIP_API __attribute__((visibility("default")))
#else
#define VIP_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vip_status {
  VIP_OK = 0,
  VIP_ERR_INVALID_INPUT = 1,
  VIP_ERR_DEGENERATE = 2,
  VIP_ERR_INFEASIBLE = 3,
  VIP_ERR_NUMERICAL = 4,
  VIP_ERR_NOT_FOUND = 5,
  VIP_ERR_CONFLICT = 6,
  VIP_ERR_VERSION = 7,
  VIP_ERR_INTEGRITY = 8,
  VIP_ERR_IO = 9,
  VIP_ERR_INTERNAL = 10
} vip_status;

typedef enum vip_family { VIP_FAMILY_DR_GRPO = 0, VIP_FAMILY_RLOO = 1 } vip_family;
typedef enum vip_link { VIP_LINK_SIGMOID = 0, VIP_LINK_SOFTPLUS = 1 } vip_link;
typedef enum vip_baseline {
  VIP_BASELINE_UNIFORM = 0,
  VIP_BASELINE_INVERSE_ACCURACY = 1,
  VIP_BASELINE_INVERSE_VARIANCE = 2
} vip_baseline;

VIP_API const char* vip_version(void);
VIP_API const char* vip_last_error(void);
VIP_API const char* vip_status_name(vip_status status);
VIP_API void vip_string_free(char* s);

/* ---- prompt space ------------------------------------------------------ */

typedef struct vip_prompt_set vip_prompt_set;
typedef struct vip_kernel vip_kernel;

/* embeddings: row-major count x dim. */
VIP_API vip_status vip_prompt_set_create(const char* const* ids, const double* embeddings, size_t count,
                                         size_t dim, vip_prompt_set** out);
/* One {"id", "embedding"} record per line. */
VIP_API vip_status vip_prompt_set_load_jsonl(const char* path, vip_prompt_set** out);
VIP_API size_t vip_prompt_set_size(const vip_prompt_set* set);
VIP_API size_t vip_prompt_set_dim(const vip_prompt_set* set);
VIP_API vip_status vip_prompt_set_index(const vip_prompt_set* set, const char* id, size_t* out);
/* Borrowed pointer, valid while the set lives. */
VIP_API const char* vip_prompt_set_id(const vip_prompt_set* set, size_t index);
VIP_API void vip_prompt_set_free(vip_prompt_set* set);

VIP_API vip_status vip_median_bandwidth(const vip_prompt_set* set, double* out);
/* bandwidth <= 0 selects the median heuristic. */
VIP_API vip_status vip_kernel_create(const vip_prompt_set* set, double bandwidth, vip_kernel** out);
VIP_API vip_status vip_kernel_save_cache(const vip_kernel* kernel, const char* path);
VIP_API vip_status vip_kernel_load_cache(const char* path, vip_kernel** out);
VIP_API size_t vip_kernel_size(const vip_kernel* kernel);
VIP_API double vip_kernel_bandwidth(const vip_kernel* kernel);
VIP_API uint64_t vip_kernel_fingerprint(const vip_kernel* kernel);
VIP_API vip_status vip_kernel_value(const vip_kernel* kernel, size_t i, size_t j, double* out);
VIP_API void vip_kernel_free(vip_kernel* kernel);

/* ---- belief ------------------------------------------------------------ */

typedef struct vip_belief vip_belief;

VIP_API vip_status vip_belief_create(const vip_kernel* kernel, vip_link link, double clip_eps, vip_belief** out);
VIP_API vip_status vip_belief_create_with_mean(const vip_kernel* kernel, vip_link link, double clip_eps,
                                               const double* mean, size_t n, vip_belief** out);
/* Conditions on one batch: rewards[i] holds counts[i] rewards of prompt
 * batch[i]. The input belief is unchanged; the result is a new handle. */
VIP_API vip_status vip_belief_update(const vip_belief* belief, const size_t* batch, const double* const* rewards,
                                     const size_t* counts, size_t batch_len, vip_belief** out);
/* Same, reading {"id", "rewards"} lines resolved against `set`. */
VIP_API vip_status vip_belief_update_jsonl(const vip_belief* belief, const vip_prompt_set* set,
                                           const char* rewards_jsonl, vip_belief** out);
VIP_API size_t vip_belief_size(const vip_belief* belief);
VIP_API vip_status vip_belief_mean(const vip_belief* belief, double* out, size_t n);
VIP_API vip_status vip_belief_predict(const vip_belief* belief, const size_t* indices, size_t n, double* out);
/* {"iteration", "link", "clip_eps", "mean", "kernel_ref"}. */
VIP_API vip_status vip_belief_to_json(const vip_belief* belief, int64_t iteration, char** out);
/* Rejects snapshots whose kernel_ref does not match `kernel`. */
VIP_API vip_status vip_belief_from_json(const vip_kernel* kernel, const char* json, vip_belief** out,
                                        int64_t* iteration);
VIP_API void vip_belief_free(vip_belief* belief);

/* ---- variance model ---------------------------------------------------- */

/* continuous == 0: value is p_hat; otherwise the predicted reward variance. */
VIP_API vip_status vip_allocation_coefficient(int continuous, double value, double sigma_z2, double* out);
VIP_API vip_status vip_gradient_variance(vip_family family, int continuous, double value, double sigma_z2,
                                         int n, double* out);

typedef struct vip_mc_config {
  vip_family family;
  int uniform_rewards; /* 0: +-1 Bernoulli(p); 1: uniform[lo, hi] */
  double p;
  double lo;
  double hi;
  double sigma_z2;
  double z_mean;
  int n;
  uint64_t trials;
  uint64_t seed;
} vip_mc_config;

VIP_API vip_status vip_monte_carlo_variance(const vip_mc_config* cfg, double* out);

/* ---- allocator --------------------------------------------------------- */

/* Any output pointer may be NULL. */
VIP_API vip_status vip_allocate(vip_family family, const double* a, size_t count, int64_t budget, int64_t min,
                                int64_t max, double* n_cont, int64_t* n_int, double* lambda, double* objective_cont,
                                double* objective_int);
VIP_API vip_status vip_allocate_json(const char* problem_json, char** plan_json);
/* Builds a problem document from {"id", "a"} / {"id", "p_hat", "sigma_z2"} lines. */
VIP_API vip_status vip_problem_from_coefficients(const char* coefficients_jsonl, vip_family family, int64_t budget,
                                                 int64_t min, int64_t max, char** problem_json);
/* Independent certificate of a plan; *ok is 1 when every check passes. */
VIP_API vip_status vip_check_plan_json(const char* problem_json, const char* plan_json, int* ok, char** report_json);
VIP_API vip_status vip_baseline_allocation(vip_baseline kind, const double* stats, size_t count, int64_t budget,
                                           int64_t min, int64_t max, int64_t* out);

/* ---- assumption tests -------------------------------------------------- */

/* test: "fisher", "edgington", "levene" or "obrien". Either output may be NULL. */
VIP_API vip_status vip_assumption_test(const char* samples_jsonl, const char* test, char** report_json,
                                       char** report_text);
/* dist: "chi_square", "f", "normal" or "student_t". */
VIP_API vip_status vip_survival(const char* dist, const double* params, size_t nparams, double x, double* out);

/* ---- simulator --------------------------------------------------------- */

/* threads == 0: hardware concurrency. Either output may be NULL. */
VIP_API vip_status vip_simulate(const char* experiment_json, unsigned threads, char** records_jsonl,
                                char** summary_csv);

/* ---- service ----------------------------------------------------------- */

typedef struct vip_service vip_service;

VIP_API vip_status vip_service_create(const char* snapshot_dir, vip_service** out);
/* Transport-neutral request; *http_status and *response mirror what the HTTP
 * front end would send. */
VIP_API vip_status vip_service_handle(vip_service* service, const char* method, const char* path, const char* body,
                                      int* http_status, char** response);
VIP_API void vip_service_free(vip_service* service);
/* Blocks serving HTTP. NULL / empty overrides keep the config-file and
 * environment values. */
VIP_API vip_status vip_serve(const char* config_path, const char* bind, const char* snapshot_dir);

#ifdef __cplusplus
}
#endif

#endif
