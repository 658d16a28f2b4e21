#ifndef HUMBENCH_H
#define HUMBENCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HbStatus {
  HB_STATUS_OK = 0,
  HB_STATUS_NULL_POINTER = 1,
  HB_STATUS_INVALID_INPUT = 2,
  HB_STATUS_UNKNOWN_LABEL = 3,
  HB_STATUS_METRIC = 4,
  HB_STATUS_PARSE = 5,
  HB_STATUS_IO = 6,
  HB_STATUS_CODEBOOK = 7,
  HB_STATUS_PANIC = 8,
  HB_STATUS_OTHER = 9,
} HbStatus;

typedef enum HbKappaBand {
  HB_KAPPA_BAND_BELOW_MODERATE = 0,
  HB_KAPPA_BAND_MODERATE = 1,
  HB_KAPPA_BAND_SUBSTANTIAL = 2,
  HB_KAPPA_BAND_ALMOST_PERFECT = 3,
} HbKappaBand;

/**
 * Opaque codebook handle.
 */
typedef struct HbCodebook HbCodebook;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *hb_last_error_message(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void hb_string_free(char *s);

struct HbCodebook *hb_codebook_default(void);

/**
 * Loads a codebook TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HbStatus hb_codebook_load(const char *path, struct HbCodebook **out);

/**
 * # Safety
 * `cb` must come from this library and not have been freed. Null is ignored.
 */
void hb_codebook_free(struct HbCodebook *cb);

/**
 * # Safety
 * `cb` must be a live handle.
 */
enum HbStatus hb_codebook_version(const struct HbCodebook *cb, uint32_t *out);

/**
 * # Safety
 * `cb` must be a live handle.
 */
enum HbStatus hb_codebook_label_count(const struct HbCodebook *cb, size_t *out);

/**
 * Codebook as JSON; free with [`hb_string_free`].
 *
 * # Safety
 * `cb` must be a live handle.
 */
enum HbStatus hb_codebook_json(const struct HbCodebook *cb, char **out);

/**
 * Cohen's kappa of two binary vectors of length `n` (nonzero = present).
 *
 * # Safety
 * `a` and `b` must point to `n` readable bytes.
 */
enum HbStatus hb_cohen_kappa(const uint8_t *a, const uint8_t *b, size_t n, double *out);

/**
 * Agreement band of a kappa value in [-1, 1].
 *
 * # Safety
 * `out` must be writable.
 */
enum HbStatus hb_kappa_band(double kappa, enum HbKappaBand *out);

/**
 * Static name of a band; never freed.
 */
const char *hb_kappa_band_name(enum HbKappaBand band);

/**
 * Macro-F1 over integer class ids; the class set is every id seen in either
 * vector.
 *
 * # Safety
 * `gold` and `pred` must point to `n` readable values.
 */
enum HbStatus hb_macro_f1(const int32_t *gold, const int32_t *pred, size_t n, double *out);

/**
 * Mean of the two directed macro-F1 scores between annotators.
 *
 * # Safety
 * `a` and `b` must point to `n` readable values.
 */
enum HbStatus hb_mutual_upper_bound(const int32_t *a, const int32_t *b, size_t n, double *out);

/**
 * Monte-Carlo distribution baseline for gold class counts `counts[0..k]`.
 *
 * # Safety
 * `counts` must point to `k` readable values; out-pointers must be writable.
 */
enum HbStatus hb_distribution_baseline(const uint64_t *counts,
                                       size_t k,
                                       size_t trials,
                                       uint64_t seed,
                                       double *out_mean,
                                       double *out_std_error);

/**
 * Conversation for a target as a JSON array of `{"role", "content"}`.
 * `target_json` is an annotation target record; `label` may be null for
 * multiple-selection and coarse prompts.
 *
 * # Safety
 * Strings must be NUL-terminated; `cb` must be a live handle.
 */
enum HbStatus hb_build_prompt(const struct HbCodebook *cb,
                              const char *config,
                              const char *target_json,
                              const char *label,
                              char **out);

/**
 * Parses a model reply for a prompt config; the verdict kind comes back as
 * JSON.
 *
 * # Safety
 * Strings must be NUL-terminated; `cb` must be a live handle.
 */
enum HbStatus hb_parse_reply(const struct HbCodebook *cb,
                             const char *config,
                             const char *reply,
                             char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HUMBENCH_H */
