/* C interface to the tcaq post-training quantization engine.
 *
 * All entry points return a tcaq_status; on failure tcaq_last_error() gives
 * a human-readable message for the current thread. Objects are opaque and
 * owned by the caller through the matching *_free function.
 */
#ifndef TCAQ_H
#define TCAQ_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tcaq_status {
  TCAQ_OK = 0,
  TCAQ_ERR_ARGUMENT = 1,         /* null pointer, bad handle, bad value */
  TCAQ_ERR_CONFIG = 2,           /* invalid configuration */
  TCAQ_ERR_NUMERIC = 3,          /* NaN/Inf or numeric-domain failure */
  TCAQ_ERR_MISSING_ARTIFACT = 4, /* required input file not found */
  TCAQ_ERR_IO = 5,               /* read/write failure */
  TCAQ_ERR_INTERNAL = 6
} tcaq_status;

typedef struct tcaq_config tcaq_config; /* run configuration */
typedef struct tcaq_model tcaq_model;   /* FP or quantized checkpoint */

const char* tcaq_version(void);
const char* tcaq_status_name(tcaq_status s);
/* message of the most recent failure on this thread; never NULL */
const char* tcaq_last_error(void);

/* ---- configuration ---- */
tcaq_config* tcaq_config_new(void);
void tcaq_config_free(tcaq_config* cfg);
tcaq_status tcaq_config_load(tcaq_config* cfg, const char* path);
tcaq_status tcaq_config_save(const tcaq_config* cfg, const char* path);
/* keys are dotted names, e.g. "bits.w", "tcr.enabled", "run.seed" */
tcaq_status tcaq_config_set(tcaq_config* cfg, const char* key, const char* value);
tcaq_status tcaq_config_get(const tcaq_config* cfg, const char* key, char* buf, size_t buf_len);
/* number of keys / key at index, for schema discovery */
size_t tcaq_config_key_count(void);
const char* tcaq_config_key(size_t index);

/* ---- models ---- */
tcaq_status tcaq_model_load(const char* path, tcaq_model** out);
tcaq_status tcaq_model_save(const tcaq_model* model, const char* path);
void tcaq_model_free(tcaq_model* model);
int tcaq_model_is_quantized(const tcaq_model* model);

/* ---- pipeline commands ----
 * Each writes its artifacts under the configured output directory and, where
 * noted, returns a handle to the produced model. */
tcaq_status tcaq_train(const tcaq_config* cfg, tcaq_model** out_model);
tcaq_status tcaq_quantize(const tcaq_config* cfg, const char* fp_checkpoint,
                          tcaq_model** out_model);
tcaq_status tcaq_sample(const tcaq_config* cfg, const char* checkpoint);
tcaq_status tcaq_evaluate(const tcaq_config* cfg, const char* checkpoint);
tcaq_status tcaq_ablate(const tcaq_config* cfg, const char* fp_checkpoint);

#ifdef __cplusplus
}
#endif

#endif /* TCAQ_H */
