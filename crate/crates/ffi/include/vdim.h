#ifndef VDIM_H
#define VDIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum {
  VDIM_STATUS_OK = 0,
  VDIM_STATUS_NULL_ARGUMENT = 1,
  VDIM_STATUS_INVALID_ARGUMENT = 2,
  VDIM_STATUS_RUNTIME_ERROR = 3,
} VdimStatus;

/**
 * Opaque run configuration handle.
 */
typedef struct VdimConfig VdimConfig;

/**
 * Opaque encoder handle for feature extraction.
 */
typedef struct VdimModel VdimModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *vdim_last_error(void);

/**
 * Semantic version of the library, static storage.
 */
const char *vdim_version(void);

/**
 * A fresh configuration with library defaults.
 */
VdimConfig *vdim_config_default(void);

/**
 * Loads a TOML configuration file; null on failure (see `vdim_last_error`).
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
VdimConfig *vdim_config_load(const char *path);

/**
 * Applies a dot-path override, e.g. key "pretrain.steps", value "200".
 *
 * # Safety
 * `cfg` must come from a `vdim_config_*` constructor; `key`/`value` must be
 * valid NUL-terminated strings.
 */
VdimStatus vdim_config_set(VdimConfig *cfg, const char *key, const char *value);

/**
 * Writes the canonical config hash (hex) into `buf` (NUL-terminated).
 *
 * # Safety
 * `buf` must point to at least `len` writable bytes.
 */
VdimStatus vdim_config_hash(const VdimConfig *cfg, char *buf, size_t len);

/**
 * # Safety
 * `cfg` must come from a `vdim_config_*` constructor (or be null).
 */
void vdim_config_free(VdimConfig *cfg);

/**
 * Runs the fast invariant suite; prints one line per check to stdout.
 */
VdimStatus vdim_run_selfcheck(void);

/**
 * Pretrains per the configuration, writing checkpoints and metrics under
 * `out_dir`.
 *
 * # Safety
 * `cfg` must be a live config handle; `out_dir` a valid NUL-terminated path.
 */
VdimStatus vdim_run_pretrain(const VdimConfig *cfg, const char *out_dir);

/**
 * Fine-tunes from `checkpoint` (null = random init), evaluates on the test
 * split, writes `eval_report.json` under `out_dir`, and returns the test
 * accuracy through `accuracy_out` when non-null.
 *
 * # Safety
 * Pointer arguments must be valid as documented above.
 */
VdimStatus vdim_run_finetune(const VdimConfig *cfg,
                             const char *checkpoint,
                             const char *out_dir,
                             double *accuracy_out);

/**
 * Evaluates a fine-tuned checkpoint on a named split; accuracy through
 * `accuracy_out` when non-null.
 *
 * # Safety
 * Pointer arguments must be valid as documented above.
 */
VdimStatus vdim_run_evaluate(const VdimConfig *cfg,
                             const char *checkpoint,
                             const char *split,
                             double *accuracy_out);

/**
 * Materializes the synthetic dataset in the frame-directory layout.
 *
 * # Safety
 * Pointer arguments must be valid as documented above.
 */
VdimStatus vdim_run_synthesize(const VdimConfig *cfg, const char *dest);

/**
 * Loads a pretrain checkpoint for feature extraction; null on failure.
 *
 * # Safety
 * `checkpoint` must be a valid NUL-terminated path.
 */
VdimModel *vdim_model_load(const char *checkpoint);

/**
 * Dimension of the vectors produced by [`vdim_model_embed`].
 *
 * # Safety
 * `model` must be a live model handle.
 */
size_t vdim_model_feature_dim(const VdimModel *model);

/**
 * Embeds a clip: `frames` is `t*h*w*3` doubles in `[0,1]`, frame-major,
 * row-major, RGB interleaved. The clip is padded or truncated to the
 * encoder's input length, center-cropped, encoded, and projected through
 * the global head into `out` (`vdim_model_feature_dim` doubles).
 *
 * # Safety
 * `frames` must hold `t*h*w*3` readable doubles, `out` at least
 * `out_len` writable doubles.
 */
VdimStatus vdim_model_embed(VdimModel *model,
                            const double *frames,
                            size_t t,
                            size_t h,
                            size_t w,
                            double *out,
                            size_t out_len);

/**
 * # Safety
 * `model` must come from `vdim_model_load` (or be null).
 */
void vdim_model_free(VdimModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VDIM_H */
