/* coped: correctness-aware CoT distillation lab, C API.
 *
 * Every entry point returns a coped_status; on failure coped_last_error()
 * holds a thread-local message valid until the next call on that thread.
 * Paths are UTF-8. Config and override arguments are JSON text; NULL means
 * "defaults" (config) or "no overrides".
 */
#ifndef COPED_H
#define COPED_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum coped_status {
    COPED_OK = 0,
    COPED_ERR_CONFIG = 1,   /* invalid configuration or argument value */
    COPED_ERR_IO = 2,       /* filesystem failure */
    COPED_ERR_FORMAT = 3,   /* malformed input file */
    COPED_ERR_NUMERIC = 4,  /* non-finite values during training */
    COPED_ERR_CONTRACT = 5, /* precondition violation */
    COPED_ERR_INTERNAL = 6, /* anything else */
} coped_status;

const char* coped_version(void);
const char* coped_last_error(void);

/* Writes train.jsonl / test_ind.jsonl / test_ood.jsonl / params.json and a
 * manifest.json into out_dir. */
coped_status coped_generate(const char* config_json,
                            const char* overrides_json, const char* out_dir);

/* Trains per config on the corpus in corpus_dir; writes the run directory
 * (config.json, metrics.csv/.json, telemetry.csv, checkpoints/, manifest). */
coped_status coped_train(const char* config_json, const char* overrides_json,
                         const char* corpus_dir, const char* run_dir);

/* Continues a run bit-identically from checkpoints/last.ckpt in run_dir. */
coped_status coped_resume(const char* run_dir, const char* corpus_dir);

/* split: train | test_ind | test_ood; mode: plain | self_verify |
 * oracle_verify. Writes report.json / report.csv / manifest.json. */
coped_status coped_evaluate(const char* checkpoint_path,
                            const char* corpus_dir, const char* split,
                            const char* mode, const char* out_dir);

/* axis: tau | alpha | weight_variant | data_fraction | correction_target.
 * values and seeds are comma-separated lists. Writes sweep.csv, one run
 * directory per cell, and a manifest. */
coped_status coped_ablate(const char* config_json, const char* overrides_json,
                          const char* corpus_dir, const char* axis,
                          const char* values, const char* seeds,
                          const char* out_dir);

/* run_dirs: comma-separated completed run directories (>= 2, same corpus
 * hash). Writes compare.csv and a manifest into out_dir. */
coped_status coped_compare(const char* run_dirs, const char* out_dir);

/* Single-question inference on a trained checkpoint. */
typedef struct coped_model coped_model;

coped_status coped_model_open(const char* checkpoint_path, coped_model** out);

/* question e.g. "v0=7;+5;*3;-4". Fills buf with a JSON object
 * {question, rationale, answer, rationale_status, corrected, failure}. */
coped_status coped_model_infer(coped_model* model, const char* question,
                               const char* mode, char* buf, size_t buf_len);

void coped_model_close(coped_model* model);

#ifdef __cplusplus
}
#endif

#endif /* COPED_H */
