/* C interface to the shelab simulator. All strings returned through `char**`
 * out-parameters are owned by the caller and released with shelab_string_free.
 * Handles are released with their matching *_free function. On a non-OK
 * status, shelab_last_error() describes the failure (per thread). */
#ifndef SHELAB_SHELAB_H
#define SHELAB_SHELAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SHELAB_API __declspec(dllexport)
#else
#define SHELAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum shelab_status {
  SHELAB_OK = 0,
  SHELAB_ERR_INVALID_ARGUMENT = 1,
  SHELAB_ERR_CONFIG = 2,
  SHELAB_ERR_NUMERICAL = 3,
  SHELAB_ERR_IO = 4,
  SHELAB_ERR_INTERNAL = 5
} shelab_status;

typedef struct shelab_config shelab_config;
typedef struct shelab_ensemble shelab_ensemble;

SHELAB_API const char* shelab_version(void);
SHELAB_API const char* shelab_last_error(void);
SHELAB_API void shelab_string_free(char* s);

/* Configuration keys (domain.*, noise.*, sigma.*, run.*). */
SHELAB_API size_t shelab_config_key_count(void);
SHELAB_API const char* shelab_config_key_name(size_t index);
SHELAB_API const char* shelab_config_key_default(size_t index);
SHELAB_API const char* shelab_config_key_help(size_t index);

SHELAB_API shelab_status shelab_config_default(shelab_config** out);
SHELAB_API shelab_status shelab_config_load(const char* path, shelab_config** out);
/* Sets one key and revalidates; the handle is unchanged on error. */
SHELAB_API shelab_status shelab_config_set(shelab_config* config, const char* key, const char* value);
/* Normalized value of one key (empty when the key does not apply). */
SHELAB_API shelab_status shelab_config_get(const shelab_config* config, const char* key, char** out);
SHELAB_API shelab_status shelab_config_canonical(const shelab_config* config, char** out);
SHELAB_API shelab_status shelab_config_hash(const shelab_config* config, char** out);
/* "paper regime", "conjectured explosive regime" or "unclassified ...". */
SHELAB_API shelab_status shelab_config_regime(const shelab_config* config, char** out);
SHELAB_API void shelab_config_free(shelab_config* config);

/* One trajectory as CSV (step,t,sup_norm,l1_norm,I,Q,clamped_mass,stop_flag). */
SHELAB_API shelab_status shelab_trajectory_csv(const shelab_config* config, uint64_t seed, char** out);

SHELAB_API shelab_status shelab_ensemble_run(const shelab_config* config, shelab_ensemble** out);
SHELAB_API size_t shelab_ensemble_paths(const shelab_ensemble* ensemble);
SHELAB_API size_t shelab_ensemble_failures(const shelab_ensemble* ensemble);
SHELAB_API shelab_status shelab_ensemble_rows_csv(const shelab_ensemble* ensemble, char** out);
SHELAB_API shelab_status shelab_ensemble_json(const shelab_ensemble* ensemble, char** out);
SHELAB_API shelab_status shelab_ensemble_metrics_json(const shelab_ensemble* ensemble, char** out);
/* Writes rows.csv, ensemble.json and metrics.json into run.output. */
SHELAB_API shelab_status shelab_ensemble_write(const shelab_ensemble* ensemble);
SHELAB_API void shelab_ensemble_free(shelab_ensemble* ensemble);

/* Reloads an output directory and recomputes aggregates from rows. */
SHELAB_API shelab_status shelab_report(const char* dir, char** json_out, int* consistent);

/* Exit fractions per gamma and threshold level (threshold 2^level). */
SHELAB_API shelab_status shelab_sweep_gamma(const shelab_config* config, const double* gammas,
                                            size_t gamma_count, const int* levels, size_t level_count,
                                            char** json_out, char** csv_out);

SHELAB_API shelab_status shelab_verify_assumptions(const shelab_config* config, char** json_out,
                                                   int* all_pass);

typedef struct shelab_probe_options {
  double p;
  const double* T_grid;
  size_t T_count;
  size_t paths;
  size_t batches;
  double dt;
  uint64_t seed;
  size_t workers; /* 0: hardware concurrency */
} shelab_probe_options;

SHELAB_API void shelab_probe_options_default(shelab_probe_options* options);

/* Stochastic convolution probe with phi = 1 on the configured domain and noise. */
SHELAB_API shelab_status shelab_probe_convolution(const shelab_config* config,
                                                  const shelab_probe_options* options,
                                                  char** json_out, int* pass);

#ifdef __cplusplus
}
#endif

#endif
