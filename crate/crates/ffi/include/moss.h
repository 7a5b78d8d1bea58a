#ifndef MOSS_FFI_H
#define MOSS_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum MossStatus {
  MOSS_STATUS_OK = 0,
  MOSS_STATUS_NULL_ARGUMENT = 1,
  MOSS_STATUS_INVALID_UTF8 = 2,
  MOSS_STATUS_IO = 3,
  MOSS_STATUS_PARSE = 4,
  MOSS_STATUS_PRECONDITION = 5,
  MOSS_STATUS_CONTRACT = 6,
  MOSS_STATUS_RUNTIME = 7,
  MOSS_STATUS_PANIC = 8,
} MossStatus;

// A chat session; context comes only from the model's own outputs. Opaque.
typedef struct MossChat MossChat;

// A knowledge base. Opaque.
typedef struct MossKb MossKb;

// A trained model. Opaque.
typedef struct MossModel MossModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *moss_version(void);

// Message of the last failed call on this thread, or null. Free the
// result with `moss_string_free`.
char *moss_last_error_message(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void moss_string_free(char *s);

// Loads a model directory written by `moss train`.
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be writable.
enum MossStatus moss_model_load(const char *dir, struct MossModel **out);

// # Safety
// `model` must come from `moss_model_load` or be null.
void moss_model_free(struct MossModel *model);

// The model's framework config as JSON.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum MossStatus moss_model_config_json(const struct MossModel *model, char **out);

// Loads a knowledge base JSON file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MossStatus moss_kb_load(const char *path, struct MossKb **out);

// # Safety
// `kb` must come from `moss_kb_load` or be null.
void moss_kb_free(struct MossKb *kb);

// Starts an empty chat session.
//
// # Safety
// `out` must be writable.
enum MossStatus moss_chat_new(struct MossChat **out);

// Runs one user turn. `out_json` receives
// `{"m":..,"s":..,"a":..,"r":..,"k":bucket}` with absent modules as null.
//
// # Safety
// Handles must be live; `utterance` NUL-terminated; `out_json` writable.
enum MossStatus moss_chat_respond(struct MossChat *chat,
                                  const struct MossModel *model,
                                  const struct MossKb *kb,
                                  const char *utterance,
                                  char **out_json);

// Number of turns the session has completed; 0 for null.
//
// # Safety
// `chat` must be a live handle or null.
uintptr_t moss_chat_turns(const struct MossChat *chat);

// # Safety
// `chat` must come from `moss_chat_new` or be null.
void moss_chat_free(struct MossChat *chat);

// Evaluates a model on a corpus file (or a directory's test.jsonl) with
// kb.json and schema.json beside it. `out_json` receives the metric report.
//
// # Safety
// `model` must be live; `data` NUL-terminated; `out_json` writable.
enum MossStatus moss_evaluate(const struct MossModel *model, const char *data, char **out_json);

// Corpus BLEU-4 of `n` whitespace-tokenized candidate/reference pairs.
//
// # Safety
// `candidates` and `references` must point to `n` NUL-terminated strings;
// `out` must be writable.
enum MossStatus moss_bleu(const char *const *candidates,
                          const char *const *references,
                          uintptr_t n,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOSS_FFI_H */
