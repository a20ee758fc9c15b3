#ifndef MSCLIP_H
#define MSCLIP_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsclipInitMode {
  MSCLIP_INIT_MODE_ZERO = 0,
  MSCLIP_INIT_MODE_MEAN_RGB = 1,
} MsclipInitMode;

typedef enum MsclipStatus {
  MSCLIP_STATUS_OK = 0,
  MSCLIP_STATUS_NULL_POINTER = 1,
  MSCLIP_STATUS_INVALID_ARGUMENT = 2,
  MSCLIP_STATUS_IO = 3,
  MSCLIP_STATUS_BUFFER_TOO_SMALL = 4,
  MSCLIP_STATUS_PANIC = 5,
} MsclipStatus;

/**
 * Model parameters loaded from a checkpoint.
 */
typedef struct MsclipModel MsclipModel;

/**
 * Token vocabulary loaded from a `vocab.txt` file.
 */
typedef struct MsclipVocab MsclipVocab;

typedef struct MsclipModelInfo {
  size_t in_channels;
  size_t image_size;
  size_t proj_dim;
  size_t context_length;
  size_t vocab_size;
} MsclipModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Owned by the
 * library; valid until the next call on the same thread.
 */
const char *msclip_last_error(void);

enum MsclipStatus msclip_model_load(const char *path, struct MsclipModel **out);

enum MsclipStatus msclip_model_save(const struct MsclipModel *model, const char *path);

void msclip_model_free(struct MsclipModel *model);

enum MsclipStatus msclip_model_info(const struct MsclipModel *model, struct MsclipModelInfo *out);

/**
 * Widens a 3-channel model to `bands` (e.g. "10" or "B2,B3,B4,B8").
 * The result is a new handle; `model` is unchanged.
 */
enum MsclipStatus msclip_model_extend(const struct MsclipModel *model,
                                      const char *bands,
                                      enum MsclipInitMode mode,
                                      struct MsclipModel **out);

/**
 * Encodes `n` preprocessed images laid out as `n x c x h x w` floats into
 * `n x proj_dim` unit vectors.
 */
enum MsclipStatus msclip_encode_image(const struct MsclipModel *model,
                                      const float *pixels,
                                      size_t n,
                                      size_t c,
                                      size_t h,
                                      size_t w,
                                      float *out,
                                      size_t out_len);

/**
 * Encodes `n` token rows of `context_length` ids into `n x proj_dim` unit vectors.
 */
enum MsclipStatus msclip_encode_text(const struct MsclipModel *model,
                                     const uint32_t *tokens,
                                     size_t n,
                                     size_t context_length,
                                     float *out,
                                     size_t out_len);

enum MsclipStatus msclip_vocab_load(const char *path, struct MsclipVocab **out);

void msclip_vocab_free(struct MsclipVocab *vocab);

/**
 * Tokenizes `text` into exactly `context_length` ids written to `out`.
 */
enum MsclipStatus msclip_vocab_encode(const struct MsclipVocab *vocab,
                                      const char *text,
                                      size_t context_length,
                                      uint32_t *out,
                                      size_t out_len);

/**
 * Symmetric contrastive loss of two row-matched `n x d` embedding matrices.
 */
enum MsclipStatus msclip_info_nce(const double *image,
                                  const double *text,
                                  size_t n,
                                  size_t d,
                                  double log_temperature,
                                  double *out_loss);

/**
 * Average precision over the first `k` entries of `ranking` given the
 * relevant item ids.
 */
enum MsclipStatus msclip_average_precision_at_k(const size_t *ranking,
                                                size_t ranking_len,
                                                const size_t *relevant,
                                                size_t relevant_len,
                                                size_t k,
                                                double *out_ap);

/**
 * Multilabel decision per class: 1 where a class's similarity beats the
 * mean of the others.
 */
enum MsclipStatus msclip_multilabel_eq2(const double *sims, size_t k, uint8_t *out, size_t out_len);

/**
 * Multilabel decision per class: 1 where a class's similarity beats the
 * negative-prompt similarity.
 */
enum MsclipStatus msclip_multilabel_negative_class(const double *sims,
                                                   size_t k,
                                                   double negative,
                                                   uint8_t *out,
                                                   size_t out_len);

enum MsclipStatus msclip_meteor(const char *candidate, const char *reference, double *out);

/**
 * Learning rate at a 0-based step: linear warm-up then cosine decay to zero.
 */
enum MsclipStatus msclip_lr_schedule(size_t step,
                                     double peak_lr,
                                     size_t warmup_steps,
                                     size_t total_steps,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSCLIP_H */
