#ifndef MODCL_H
#define MODCL_H

/* Generated from the modcl-ffi crate; do not edit by hand. */

#include <stdint.h>
#include <stddef.h>

/**
 * Outcome of a fallible call.
 */
typedef enum {
  MODCL_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  MODCL_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  MODCL_STATUS_INVALID_UTF8 = 2,
  /**
   * A value outside its documented domain (bad kind token, bad ways, ...).
   */
  MODCL_STATUS_INVALID_ARGUMENT = 3,
  /**
   * The experiment configuration failed to parse or validate; the message
   * lists every problem found.
   */
  MODCL_STATUS_CONFIG = 4,
  MODCL_STATUS_IO = 5,
  /**
   * Training or evaluation failed after it started.
   */
  MODCL_STATUS_RUNTIME = 6,
  /**
   * A bug: the engine panicked behind the boundary.
   */
  MODCL_STATUS_PANIC = 7,
} ModclStatus;

/**
 * A generated task stream, opaque to C.
 */
typedef struct ModclStream ModclStream;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version of the underlying engine, a static string; do not free.
 */
const char *modcl_version(void);

/**
 * Message of the most recent failure on this thread, or null if the last
 * call succeeded.  The caller owns the returned string.
 */
char *modcl_last_error(void);

/**
 * Releases a string obtained from this library.  Null is a no-op.
 */
void modcl_string_free(char *s);

/**
 * Synthesizes a task stream.
 *
 * `kind` is one of `S-`, `S+`, `Sin`, `Sout`, `Spl`, `Slong`; `scale` is
 * `paper` or `desk`; `ways` is the classes per task.  On success `*out`
 * holds a handle the caller must release with [`modcl_stream_free`].
 */
ModclStatus modcl_stream_generate(const char *kind,
                                  const char *scale,
                                  uint64_t seed,
                                  size_t ways,
                                  ModclStream **out);

/**
 * Number of tasks in the stream; 0 if `stream` is null.
 */
size_t modcl_stream_task_count(const ModclStream *stream);

/**
 * Serializes the stream manifest (kind, scale, seed, per-task specs) as
 * JSON into `*out_json`; free it with [`modcl_string_free`].
 */
ModclStatus modcl_stream_manifest_json(const ModclStream *stream, char **out_json);

/**
 * Materializes the stream's datasets and writes the manifest plus per-task
 * CSV files under `dir`, the same layout the CLI's `gen-stream` produces.
 */
ModclStatus modcl_stream_write(const ModclStream *stream, const char *dir);

/**
 * Releases a stream handle.  Null is a no-op.
 */
void modcl_stream_free(ModclStream *stream);

/**
 * Runs one experiment from a JSON configuration (same schema as the CLI's
 * `run --config` file) and writes the run directory it names.  On success
 * `*out_summary_json` holds the run summary as JSON; free it with
 * [`modcl_string_free`].
 */
ModclStatus modcl_run_experiment(const char *config_json, char **out_summary_json);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* MODCL_H */
