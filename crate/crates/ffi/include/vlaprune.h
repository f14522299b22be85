#ifndef VLAPRUNE_H
#define VLAPRUNE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define VLP_OK 0

#define VLP_ERR_NULL -1

#define VLP_ERR_SHAPE -2

#define VLP_ERR_CLOSED -3

#define VLP_ERR_CONFIG -4

#define VLP_ERR_BUFFER_TOO_SMALL -5

#define VLP_ERR_INTERNAL -255

#define VLP_VARIANT_DUAL 0

#define VLP_VARIANT_PREFILL_ONLY 1

#define VLP_VARIANT_ACTION_ONLY 2

#define VLP_VARIANT_SCORE_FUSION 3

#define VLP_VARIANT_DIVERSITY_ONLY 4

#define VLP_WARMUP_RETAIN_ALL 0

#define VLP_WARMUP_PREFILL_ONLY 1

#define VLP_ESTIMATOR_WINDOW 0

#define VLP_ESTIMATOR_EMA 1

/**
 * Session parameters. Start from `vlp_config_default` and override fields.
 */
typedef struct {
  /**
   * Visual tokens per frame.
   */
  size_t m_visual;
  /**
   * Width of each embedding row.
   */
  size_t embed_dim;
  /**
   * Retained token count; when zero, `ratio` is used instead.
   */
  size_t budget;
  /**
   * Retained fraction of `m_visual`, in (0, 1].
   */
  double ratio;
  uint32_t variant;
  double fusion_weight;
  uint32_t warmup;
  uint32_t estimator;
  double alpha;
  size_t window;
  double gamma;
  size_t prune_layer;
} VlpConfig;

/**
 * Opaque session handle. Zero is never a valid handle.
 */
typedef uint64_t VlpHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Fills `out` with the default configuration.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `VlpConfig`.
 */
int32_t vlp_config_default(VlpConfig *out);

/**
 * Opens a session for one episode.
 *
 * # Safety
 * `config` must point to a valid `VlpConfig`; `out_handle` to writable memory.
 */
int32_t vlp_session_create(const VlpConfig *config, VlpHandle *out_handle);

/**
 * Records the action scores decoded for the frame just selected.
 *
 * # Safety
 * `scores` must point to `len` readable doubles.
 */
int32_t vlp_session_observe(VlpHandle handle, const double *scores, size_t len);

/**
 * Selects the visual tokens to keep for the current frame.
 *
 * Writes ascending zero-based indices to `out_indices` and their count to
 * `out_len`. If `out_cap` is too small, `out_len` receives the required
 * size and [`VLP_ERR_BUFFER_TOO_SMALL`] is returned.
 *
 * # Safety
 * `prefill` must hold `m` doubles, `embeddings` `embeddings_len` floats
 * (row-major, `m * embed_dim`), `out_indices` room for `out_cap` entries.
 */
int32_t vlp_session_select(VlpHandle handle,
                           const double *prefill,
                           size_t m,
                           const float *embeddings,
                           size_t embeddings_len,
                           size_t *out_indices,
                           size_t out_cap,
                           size_t *out_len);

/**
 * Number of frames observed so far.
 *
 * # Safety
 * `out` must point to writable memory.
 */
int32_t vlp_session_frames_seen(VlpHandle handle, uint64_t *out);

/**
 * Releases a session. Closing twice returns [`VLP_ERR_CLOSED`].
 */
int32_t vlp_session_close(VlpHandle handle);

/**
 * Message for the last failed call on this thread; empty after success.
 * Valid until the next call on the same thread.
 */
const char *vlp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *vlp_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VLAPRUNE_H */
