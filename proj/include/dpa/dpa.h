/* C interface to the DPA prospecting library.
 *
 * Every function returns a dpa_status. On failure, dpa_last_error() returns a
 * message for the calling thread that stays valid until the next call into
 * the library from that thread. Strings returned through char** out
 * parameters are owned by the caller and released with dpa_string_free().
 * Verb functions accept NULL for out_json when the summary is not wanted.
 */
#ifndef DPA_DPA_H
#define DPA_DPA_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(DPA_BUILDING_LIBRARY)
#define DPA_API __declspec(dllexport)
#else
#define DPA_API __declspec(dllimport)
#endif
#else
#define DPA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dpa_status {
  DPA_OK = 0,
  DPA_ERR_INVALID_SCHEMA = 1,
  DPA_ERR_INVALID_EVENT = 2,
  DPA_ERR_INCOMPLETE_EVENT = 3,
  DPA_ERR_INVALID_INPUT = 4,
  DPA_ERR_UNDEFINED_METRIC = 5,
  DPA_ERR_EMPTY_CURVE = 6,
  DPA_ERR_NOT_SCORABLE = 7,
  DPA_ERR_IO = 8,
  DPA_ERR_PARSE = 9,
  DPA_ERR_CONFIG = 10,
  DPA_ERR_STAGE_FAILED = 11,
  DPA_ERR_NULL_ARGUMENT = 12,
  DPA_ERR_INTERNAL = 13
} dpa_status;

typedef struct dpa_config dpa_config; /* run configuration */
typedef struct dpa_model dpa_model;   /* trained event predictor */

DPA_API const char* dpa_version(void);
DPA_API const char* dpa_last_error(void);
DPA_API const char* dpa_status_name(dpa_status status);
DPA_API void dpa_string_free(char* s);

/* ---- configuration ---- */

/* path may be NULL for built-in defaults. */
DPA_API dpa_status dpa_config_create(const char* path, uint64_t seed, dpa_config** out);
/* "section.key=value"; value is parsed as JSON when possible. */
DPA_API dpa_status dpa_config_set(dpa_config* config, const char* assignment);
DPA_API dpa_status dpa_config_json(const dpa_config* config, char** out_json);
DPA_API void dpa_config_destroy(dpa_config* config);

/* ---- models and metrics ---- */

DPA_API dpa_status dpa_derive_dims(size_t features, size_t pair_width, size_t solo_width, size_t* d, size_t* full);
DPA_API dpa_status dpa_model_load(const char* path, dpa_model** out);
DPA_API dpa_status dpa_model_dims(const dpa_model* model, size_t* d, size_t* full);
/* event_line: one row of an event feed (without the header). */
DPA_API dpa_status dpa_model_predict(const dpa_model* model, const char* event_line, double* out);
DPA_API void dpa_model_destroy(dpa_model* model);

DPA_API dpa_status dpa_auc(const double* scores, const int* labels, size_t n, double* out);
DPA_API dpa_status dpa_logloss(const double* predictions, const int* labels, size_t n, double* out);
DPA_API dpa_status dpa_bid_final(double pconv, double tcpa, double bid_pg, double* out);

/* ---- workbench verbs ---- */

DPA_API dpa_status dpa_gen_world(const dpa_config* c, const char* out_dir, char** out_json);
DPA_API dpa_status dpa_gen_feeds(const dpa_config* c, const char* world_dir, const char* out_dir, char** out_json);
DPA_API dpa_status dpa_train_click(const dpa_config* c, const char* world_dir, const char* feeds_dir,
                                   const char* out_dir, char** out_json);
DPA_API dpa_status dpa_train_conv(const dpa_config* c, const char* world_dir, const char* feeds_dir,
                                  const char* out_dir, char** out_json);
/* k / min_conv < 0 take the configured values. */
DPA_API dpa_status dpa_publish_conv(const dpa_config* c, const char* model_path, const char* stats_path,
                                    const char* perf_path, const char* campaigns_path, int64_t k, int64_t min_conv,
                                    const char* out_path, char** out_json);
/* n / m == 0 take the configured values. */
DPA_API dpa_status dpa_train_lookalike(const dpa_config* c, const char* world_dir, const char* pixel,
                                       const char* impressions, size_t n, size_t m, const char* out_path,
                                       char** out_json);
/* t / r == 0 and pct <= 0 take the configured values. */
DPA_API dpa_status dpa_publish_trendy(const dpa_config* c, const char* world_dir, const char* feeds_dir,
                                      const char* lookalike_path, size_t t, double pct, size_t r,
                                      const char* out_path, char** out_json);
DPA_API dpa_status dpa_threshold_curve(const dpa_config* c, const char* world_dir, const char* feeds_dir,
                                       const char* published_path, const char* advertiser, double pct, size_t r,
                                       const char* out_prefix, char** out_json);
DPA_API dpa_status dpa_build_snapshots(const dpa_config* c, const char* world_dir, const char* feeds_dir,
                                       const char* snapshot_dir, char** out_json);
/* bucket_dir / world_dir may be NULL to skip outcome simulation. */
DPA_API dpa_status dpa_simulate_serve(const dpa_config* c, const char* requests_path, const char* snapshot_dir,
                                      const char* out_path, int control, const char* bucket_dir,
                                      const char* world_dir, char** out_json);
/* out_prefix may be NULL. */
DPA_API dpa_status dpa_eval(const char* model_path, const char* test_path, const char* out_prefix, char** out_json);
/* candidates: comma-separated feature names; NULL or "" takes the configured list. */
DPA_API dpa_status dpa_forward_select(const dpa_config* c, const char* world_dir, const char* feeds_dir,
                                      const char* candidates, const char* out_prefix, char** out_json);
/* mode: "conv" or "trendy"; error < 0 takes the configured margin. */
DPA_API dpa_status dpa_happiness(const dpa_config* c, const char* mode, double error, const char* test_bucket,
                                 const char* control_bucket, const char* out_prefix, char** out_json);
DPA_API dpa_status dpa_report(const char* test_bucket, const char* control_bucket, const char* out_prefix,
                              char** out_json);
DPA_API dpa_status dpa_run(const dpa_config* c, const char* out_dir, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* DPA_DPA_H */
