/* C interface for the medigraph engine. */

#ifndef MEDIGRAPH_H
#define MEDIGRAPH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every FFI call.
typedef enum MgStatus {
  MG_STATUS_OK = 0,
  // A null pointer, malformed UTF-8, or otherwise unusable argument.
  MG_STATUS_INVALID_ARGUMENT = 1,
  // Configuration loading or validation failed.
  MG_STATUS_CONFIG_ERROR = 2,
  // The pipeline failed while processing the dialogue.
  MG_STATUS_PIPELINE_ERROR = 3,
  // A panic was caught at the boundary.
  MG_STATUS_PANIC = 4,
} MgStatus;

// Opaque engine handle. Safe to share across threads; every exported
// operation takes it by shared reference.
typedef struct MgEngine MgEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Load a pipeline engine from a TOML configuration file.
//
// # Safety
// `config_path` must be null or a valid NUL-terminated string;
// `out_engine` must point to writable storage for one pointer.
enum MgStatus mg_engine_new(const char *config_path, struct MgEngine **out_engine);

// Release an engine handle. Null is a no-op.
//
// # Safety
// `engine` must be null or a pointer returned by [`mg_engine_new`] that has
// not been freed yet.
void mg_engine_free(struct MgEngine *engine);

// Run the full pipeline on one dialogue (a single JSON record in the
// dialogue wire format). The result JSON carries `id`, `response`,
// `medications`, and `warnings`.
//
// # Safety
// Pointer arguments follow the module conventions.
enum MgStatus mg_engine_recommend(const struct MgEngine *engine,
                                  const char *dialogue_json,
                                  char **out_result_json);

// Run stage-one extraction only; the output JSON carries the mentions,
// slot values, and patient characteristics.
//
// # Safety
// Pointer arguments follow the module conventions.
enum MgStatus mg_engine_extract(const struct MgEngine *engine,
                                const char *dialogue_json,
                                char **out_dump_json);

// Build the patient-centric graph for one dialogue and return its JSON
// serialization.
//
// # Safety
// Pointer arguments follow the module conventions.
enum MgStatus mg_engine_build_graph(const struct MgEngine *engine,
                                    const char *dialogue_json,
                                    char **out_graph_json);

// Score a predicted medication set against a gold set. Inputs are JSON
// string arrays; the output carries jaccard, precision, recall, and f1.
// `lenient` accepts the empty/empty pair as a perfect score.
//
// # Safety
// Pointer arguments follow the module conventions.
enum MgStatus mg_score_sets(const char *gold_json,
                            const char *predicted_json,
                            bool lenient,
                            char **out_score_json);

// Weighted diagnostic score over an interviewing checklist.
//
// # Safety
// `out_score` must point to writable storage for one double.
enum MgStatus mg_diagnostic_score(uint32_t aspects_hits,
                                  uint32_t aspects_total,
                                  uint32_t info_hits,
                                  uint32_t info_total,
                                  double *out_score);

// Release a string returned by this library. Null is a no-op.
//
// # Safety
// `s` must be null or a pointer previously returned through an out-param of
// this library, not yet freed.
void mg_string_free(char *s);

// Message for the most recent failure on this thread. The pointer stays
// valid until the next library call on the same thread; do not free it.
const char *mg_last_error(void);

// Library version as a static string; do not free it.
const char *mg_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEDIGRAPH_H */
