#ifndef DSCM_DSCM_H
#define DSCM_DSCM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DSCM_API __declspec(dllexport)
#else
#define DSCM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. Nonzero means failure; details via dscm_last_error(). */
typedef enum {
  DSCM_OK = 0,
  DSCM_E_INVALID_ARGUMENT = 1,
  DSCM_E_GRAPH_INVALID = 2,
  DSCM_E_UNKNOWN_VARIABLE = 3,
  DSCM_E_UNSUPPORTED_INTERVENTION = 4,
  DSCM_E_ABDUCTION_RANGE = 5,
  DSCM_E_DOMAIN = 6,
  DSCM_E_UNINITIALIZED_MODEL = 7,
  DSCM_E_TRAINING_DIVERGENCE = 8,
  DSCM_E_IO = 9,
  DSCM_E_CONFIG = 10,
  DSCM_E_ESTIMATION = 11,
  DSCM_E_RENDER = 12,
  DSCM_E_INTERNAL = 99
} dscm_status;

typedef struct dscm_dataset dscm_dataset;
typedef struct dscm_model dscm_model;

/* Message and offending variable ("" if none) of the last failure on this
   thread. Valid until the next call on the same thread. */
DSCM_API const char* dscm_last_error(void);
DSCM_API const char* dscm_last_error_variable(void);
DSCM_API const char* dscm_status_name(int status);
DSCM_API const char* dscm_version(void);

/* Strings returned through char** out-parameters are owned by the caller. */
DSCM_API void dscm_string_free(char* s);

/* Phantom datasets. config_json may be NULL for the 64x64 defaults. */
DSCM_API int dscm_phantoms_generate(int count, uint64_t seed, const char* config_json, dscm_dataset** out);
DSCM_API int dscm_dataset_load(const char* dir, dscm_dataset** out);
DSCM_API int dscm_dataset_save(const dscm_dataset* data, const char* dir);
DSCM_API int dscm_dataset_size(const dscm_dataset* data, size_t* out);
/* Records [begin, end) as a new dataset. */
DSCM_API int dscm_dataset_slice(const dscm_dataset* data, size_t begin, size_t end, dscm_dataset** out);
DSCM_API void dscm_dataset_free(dscm_dataset* data);

/* Fresh model with bases fit to `data`. graph_json NULL selects the default
   multiple-sclerosis graph; preset is "desk", "small128" or "large224". */
DSCM_API int dscm_model_create(const dscm_dataset* data, const char* graph_json, const char* preset, uint64_t seed,
                               dscm_model** out);
DSCM_API int dscm_model_load(const char* checkpoint_path, dscm_model** out);
DSCM_API int dscm_model_save(const dscm_model* model, const char* checkpoint_path);
DSCM_API int dscm_model_info(const dscm_model* model, char** json_out);
DSCM_API void dscm_model_free(dscm_model* model);

/* Trains until the configured epoch count. A model loaded from a checkpoint
   resumes from its saved epoch and optimizer state. config_json NULL uses the
   model's preset; output_dir NULL writes nothing. The callback, if given,
   receives each epoch's metrics as JSON. */
typedef void (*dscm_epoch_callback)(const char* metrics_json, void* user);
DSCM_API int dscm_train(dscm_model* model, const dscm_dataset* data, const char* config_json, const char* output_dir,
                        dscm_epoch_callback callback, void* user, char** summary_json);

/* Ancestral samples: out_dir/sample_NNN.png plus samples.json. */
DSCM_API int dscm_sample(const dscm_model* model, int count, uint64_t seed, const char* out_dir, char** json_out);

/* Counterfactual for one dataset record. interventions_json is an object of
   name: value. Writes original.png, counterfactual.png, diff.png and
   covariates.json into out_dir (if not NULL). */
DSCM_API int dscm_counterfactual(const dscm_model* model, const dscm_dataset* data, const char* record_id,
                                 const char* interventions_json, const char* out_dir, char** json_out);

/* Lesion-volume shift, oracle fidelity and covariate fit; report files go to
   report_dir. */
DSCM_API int dscm_evaluate(const dscm_model* model, const dscm_dataset* data, const char* report_dir,
                           char** json_out);

/* Blocking HTTP service. port 0 takes DSCM_PORT or 8080. */
DSCM_API int dscm_serve(const dscm_model* model, const dscm_dataset* data, const char* host, int port);

#ifdef __cplusplus
}
#endif

#endif
