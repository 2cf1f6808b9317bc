/* C interface to the ulm workbench.
 *
 * Conventions:
 *   - Functions returning int yield ULM_OK (0) on success; any other value
 *     is a ulm_status code and ulm_last_error() holds a one-line message.
 *   - The message buffer is thread-local and overwritten by the next
 *     failing call on the same thread.
 *   - Strings returned through char **out are heap-allocated; release them
 *     with ulm_string_free. Handles are released with their matching
 *     *_free. Every free accepts NULL.
 *   - No call unwinds across the boundary; internal panics come back as
 *     ULM_ERR_PANIC.
 */

#ifndef ULM_H
#define ULM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum ulm_status {
    ULM_OK = 0,
    ULM_ERR_NULL_POINTER = 1,
    ULM_ERR_UTF8 = 2,
    ULM_ERR_INVALID_ARGUMENT = 3,
    ULM_ERR_CONFIG = 4,
    ULM_ERR_IO = 5,
    ULM_ERR_FORMAT = 6,
    ULM_ERR_SHAPE = 7,
    ULM_ERR_GRAPH = 8,
    ULM_ERR_DIVERGENCE = 9,
    ULM_ERR_PANIC = 10
};

/* The six workflow stages, in pipeline order. */
enum ulm_stage {
    ULM_STAGE_GENVASC = 0,
    ULM_STAGE_DATASET = 1,
    ULM_STAGE_TRAIN = 2,
    ULM_STAGE_INFER = 3,
    ULM_STAGE_EXPERT = 4,
    ULM_STAGE_EVALUATE = 5
};

/* Opaque handles. */
typedef struct ulm_config ulm_config;
typedef struct ulm_angiogram ulm_angiogram;

/* Library version as a static string; never freed. */
const char *ulm_version(void);

/* Message for the most recent failure on this thread; "" before any
 * failure. Valid until the next failing call on the same thread. */
const char *ulm_last_error(void);

/* Releases a string returned through a char **out parameter. */
void ulm_string_free(char *s);

/* Pins the size of the global worker pool. Call at most once, before any
 * stage runs; 0 keeps the automatic size. One worker makes runs
 * bit-reproducible. */
int ulm_set_threads(size_t n_threads);

/* Fresh configurations: desk-scale defaults finish in minutes, full-scale
 * defaults take days. */
ulm_config *ulm_config_desk(void);
ulm_config *ulm_config_paper(void);

/* Parses and validates a configuration document / file. On success writes
 * a new handle through out. */
int ulm_config_parse(const char *text, ulm_config **out);
int ulm_config_load(const char *path, ulm_config **out);

int ulm_config_set_seed(ulm_config *cfg, uint64_t seed);
int ulm_config_set_out_dir(ulm_config *cfg, const char *dir);
int ulm_config_validate(const ulm_config *cfg);

/* Serializes the fully resolved configuration; feeding the text back
 * through ulm_config_parse reproduces the same handle. */
int ulm_config_to_toml(const ulm_config *cfg, char **out);

void ulm_config_free(ulm_config *cfg);

/* Runs one workflow stage (a ULM_STAGE_* code). On success and a non-NULL
 * summary, writes a one-line summary string. A failing stage removes its
 * partial outputs before reporting. */
int ulm_run_stage(const ulm_config *cfg, int stage, char **summary);

/* Loads an accumulated angiogram from its plain-text counts file. */
int ulm_angiogram_read(const char *path, ulm_angiogram **out);

/* Accessors return 0 / NULL for a NULL handle. The counts pointer is
 * borrowed: rows x cols values in row-major order, valid until the handle
 * is freed. */
uint32_t ulm_angiogram_rows(const ulm_angiogram *a);
uint32_t ulm_angiogram_cols(const ulm_angiogram *a);
uint32_t ulm_angiogram_blocks(const ulm_angiogram *a);
const uint32_t *ulm_angiogram_counts(const ulm_angiogram *a);

void ulm_angiogram_free(ulm_angiogram *a);

#ifdef __cplusplus
}
#endif

#endif /* ULM_H */
