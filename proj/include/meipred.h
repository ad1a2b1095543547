/* meipred: prediction intervals for regression with a mismeasured covariate.
 *
 * C interface to the meipred shared library. All objects are opaque handles;
 * every call that can fail returns a mep_status and leaves a human-readable
 * message in mep_last_error() (thread-local).
 *
 * Configuration is a flat key=value store; the same keys appear in config
 * files and as CLI flags. See README.md for the key reference.
 */
#ifndef MEIPRED_H
#define MEIPRED_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#ifndef MEP_API
#define MEP_API __attribute__((visibility("default")))
#endif

typedef enum mep_status {
    MEP_OK = 0,
    MEP_ERR_INVALID = 1,        /* bad argument or configuration value */
    MEP_ERR_IO = 2,             /* file could not be opened or written */
    MEP_ERR_PARSE = 3,          /* malformed CSV/JSON input */
    MEP_ERR_NONCONVERGENCE = 4, /* an iterative solver gave up */
    MEP_ERR_NUMERIC = 5,        /* other numeric failure */
    MEP_ERR_PARTIAL = 6         /* more than 5% of bench replications failed */
} mep_status;

typedef struct mep_config mep_config;
typedef struct mep_dataset mep_dataset;
typedef struct mep_fit mep_fit;

MEP_API const char* mep_version(void);
MEP_API const char* mep_status_name(mep_status status);
/* Message from the most recent failing call on this thread. */
MEP_API const char* mep_last_error(void);
/* Frees strings returned by mep_config_dump / mep_fit_summary_json. */
MEP_API void mep_string_free(char* s);

/* --- configuration ------------------------------------------------------ */
MEP_API mep_config* mep_config_new(void);
MEP_API void mep_config_free(mep_config* cfg);
MEP_API mep_status mep_config_set(mep_config* cfg, const char* key, const char* value);
/* Returns NULL when the key is unset. The pointer stays valid until the next
 * mep_config_set/load on the same object. */
MEP_API const char* mep_config_get(const mep_config* cfg, const char* key);
/* key = value lines; '#' starts a comment. Existing keys are overwritten. */
MEP_API mep_status mep_config_load_file(mep_config* cfg, const char* path);
/* Canonical serialized form: sorted key = value lines. Caller frees. */
MEP_API char* mep_config_dump(const mep_config* cfg);

/* --- datasets ------------------------------------------------------------ */
/* CSV schema: header y,w,z1,...,zk; the intercept is synthesized. */
MEP_API mep_status mep_dataset_read_csv(const char* path, mep_dataset** out);
/* z_rowmajor is n x zcols WITHOUT the intercept column. */
MEP_API mep_status mep_dataset_new(int n, int zcols, const double* y, const double* w,
                                   const double* z_rowmajor, mep_dataset** out);
MEP_API void mep_dataset_free(mep_dataset* data);
MEP_API int mep_dataset_rows(const mep_dataset* data);
/* Includes the intercept column. */
MEP_API int mep_dataset_zdim(const mep_dataset* data);

/* --- fitting ------------------------------------------------------------- */
/* Keys: alpha, mean_family (poly2|sin_poly2|exp_neg_sq), sigma_eps, sigma_u
 * (both required), prior_mode (moment_uniform|beta_grid), prior_points,
 * prior_lo, prior_hi, prior_span, beta_init (comma list), method
 * (m1s|m1c|m2s|m2c|m3s|m3c|all or comma list), split_frac, seed,
 * quad_w, quad_y, with_variance (0|1). */
MEP_API mep_status mep_fit_run(const mep_config* cfg, const mep_dataset* data, mep_fit** out);
MEP_API mep_status mep_fit_save(const mep_fit* fit, const char* path);
MEP_API mep_status mep_fit_load(const char* path, mep_fit** out);
MEP_API void mep_fit_free(mep_fit* fit);
/* The full fit artifact as JSON; caller frees. */
MEP_API char* mep_fit_summary_json(const mep_fit* fit);

/* --- prediction ---------------------------------------------------------- */
/* in_csv schema: w,z1,...,zk (a leading y column is ignored). Output columns:
 * w,z...,center,lower,upper with lower/upper = center -+ zeta_hat. use_hdw
 * routes centers through the highest-density window (posterior-mean fits
 * only). */
MEP_API mep_status mep_predict_csv(const mep_fit* fit, const char* method, int use_hdw,
                                   const char* in_csv, const char* out_csv);
/* Array variant; center/lower/upper must hold n doubles. z_rowmajor is
 * n x zcols without the intercept. */
MEP_API mep_status mep_predict_rows(const mep_fit* fit, const char* method, int use_hdw, int n,
                                    int zcols, const double* w, const double* z_rowmajor,
                                    double* center, double* lower, double* upper);

/* --- benchmark ----------------------------------------------------------- */
/* Keys: sim (1|2|a1|a2|a3), model (1|2|3), n, reps, seed, alpha, methods,
 * threads, split_frac, m_grid, quad_w, quad_y, oos_cp (0|1). Writes the
 * per-replication CSV and the aggregate JSON table. */
MEP_API mep_status mep_bench_run(const mep_config* cfg, const char* out_csv, const char* out_json);

#ifdef __cplusplus
}
#endif

#endif /* MEIPRED_H */
