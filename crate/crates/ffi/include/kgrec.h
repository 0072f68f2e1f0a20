#ifndef KGREC_H
#define KGREC_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum KgrecStatus {
  KGREC_STATUS_OK = 0,
  KGREC_STATUS_NULL_ARGUMENT = 1,
  KGREC_STATUS_INVALID_UTF8 = 2,
  KGREC_STATUS_IO = 3,
  KGREC_STATUS_PARSE = 4,
  KGREC_STATUS_CONFIG = 5,
  KGREC_STATUS_DATA = 6,
  KGREC_STATUS_NUMERIC = 7,
  KGREC_STATUS_OUT_OF_RANGE = 8,
  KGREC_STATUS_UNKNOWN_TOKEN = 9,
  KGREC_STATUS_PANIC = 10,
} KgrecStatus;

/*
 A trained model with its vocabularies.
 */
typedef struct KgrecModel KgrecModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Loads a prepared bundle directory and a checkpoint written by training.

 # Safety
 `bundle_dir` and `checkpoint` must be NUL-terminated strings; `out` must
 be a valid pointer.
 */
enum KgrecStatus kgrec_model_load(const char *bundle_dir,
                                  const char *checkpoint,
                                  struct KgrecModel **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must come from [`kgrec_model_load`] and not be used afterwards.
 */
void kgrec_model_free(struct KgrecModel *model);

/*
 Number of users, items and the embedding size. Any output may be null.

 # Safety
 `model` must be a live handle; non-null outputs must be valid pointers.
 */
enum KgrecStatus kgrec_model_dims(const struct KgrecModel *model,
                                  size_t *users,
                                  size_t *items,
                                  size_t *dim);

/*
 Interaction probability for one (user, item) pair.

 # Safety
 `model` must be a live handle and `out` a valid pointer.
 */
enum KgrecStatus kgrec_model_score(const struct KgrecModel *model,
                                   uint32_t user,
                                   uint32_t item,
                                   double *out);

/*
 Top `capacity` items for `user` by descending score (ties by ascending
 id), optionally skipping items the user already interacted with. Writes
 up to `capacity` ids and scores and stores the count in `written`.
 `scores` may be null.

 # Safety
 `items` must hold `capacity` values, `scores` too when non-null, and
 `written` must be a valid pointer.
 */
enum KgrecStatus kgrec_model_recommend(const struct KgrecModel *model,
                                       uint32_t user,
                                       bool exclude_seen,
                                       uint32_t *items,
                                       double *scores,
                                       size_t capacity,
                                       size_t *written);

/*
 Dense id of a user token from the original interaction file.

 # Safety
 `token` must be a NUL-terminated string and `out` a valid pointer.
 */
enum KgrecStatus kgrec_model_user_id(const struct KgrecModel *model,
                                     const char *token,
                                     uint32_t *out);

/*
 Dense id of an item token from the original interaction file.

 # Safety
 `token` must be a NUL-terminated string and `out` a valid pointer.
 */
enum KgrecStatus kgrec_model_item_id(const struct KgrecModel *model,
                                     const char *token,
                                     uint32_t *out);

/*
 Copy of the last error message on this thread, or null when there is
 none. Release it with [`kgrec_string_free`].
 */
char *kgrec_last_error_message(void);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not be used afterwards.
 */
void kgrec_string_free(char *s);

/*
 Library version as a static NUL-terminated string.
 */
const char *kgrec_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KGREC_H */
