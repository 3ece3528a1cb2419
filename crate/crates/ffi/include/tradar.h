#ifndef TRADAR_H
#define TRADAR_H

#include <stddef.h>
#include <stdint.h>

typedef enum TradarStatus {
  TRADAR_STATUS_OK = 0,
  TRADAR_STATUS_NULL_POINTER = 1,
  TRADAR_STATUS_INVALID_ARGUMENT = 2,
  TRADAR_STATUS_NOT_FOUND = 3,
  TRADAR_STATUS_PARSE = 4,
  TRADAR_STATUS_VALIDATION = 5,
  TRADAR_STATUS_INCOMPATIBLE_CHECKPOINT = 6,
  TRADAR_STATUS_CONFIG = 7,
  TRADAR_STATUS_IO = 8,
  /*
   A panic was caught; the library state is still usable.
   */
  TRADAR_STATUS_INTERNAL = 9,
} TradarStatus;

/*
 Values of `TradarBox::class_id`.
 */
typedef enum TradarClass {
  TRADAR_CLASS_CAR = 0,
  TRADAR_CLASS_PEDESTRIAN = 1,
  TRADAR_CLASS_CYCLIST = 2,
} TradarClass;

/*
 A trained model loaded from a checkpoint.
 */
typedef struct TradarModel TradarModel;

/*
 Boxes from one prediction call.
 */
typedef struct TradarPredictions TradarPredictions;

/*
 Center, size (length along heading, width, height) in meters; yaw in
 radians about +z. `z` is the box center.
 */
typedef struct TradarBox {
  /*
   A `TradarClass` value.
   */
  uint32_t class_id;
  double x;
  double y;
  double z;
  double l;
  double w;
  double h;
  double yaw;
} TradarBox;

typedef struct TradarScoredBox {
  struct TradarBox bbox;
  double score;
} TradarScoredBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version, a static NUL-terminated string.
 */
const char *tradar_version(void);

/*
 Message of the last failed call on this thread, or NULL if the last
 call succeeded. Free with `tradar_string_free`.
 */
char *tradar_last_error(void);

/*
 # Safety
 `s` must be NULL or a string returned by this library, not yet freed.
 */
void tradar_string_free(char *s);

/*
 Exact bird's-eye-view IoU of two rotated boxes.

 # Safety
 `a`, `b` and `out` must be NULL or valid pointers.
 */
enum TradarStatus tradar_iou_bev(const struct TradarBox *a, const struct TradarBox *b, double *out);

/*
 Exact 3D IoU of two yaw-rotated boxes.

 # Safety
 `a`, `b` and `out` must be NULL or valid pointers.
 */
enum TradarStatus tradar_iou_3d(const struct TradarBox *a, const struct TradarBox *b, double *out);

/*
 Write the training split of a synthetic dataset to `out_dir`.
 `config_toml` is a run config in TOML (NULL for the defaults);
 `scenes` overrides the scene count when nonzero.

 # Safety
 String arguments must be NULL or NUL-terminated; `written` may be NULL.
 */
enum TradarStatus tradar_synth_generate(const char *config_toml,
                                        const char *out_dir,
                                        size_t scenes,
                                        size_t *written);

/*
 Score a JSON-lines prediction file against a dataset directory with the
 default evaluation settings. The report is returned as JSON.

 # Safety
 String arguments must be NUL-terminated; `report_json` must be valid.
 */
enum TradarStatus tradar_evaluate_file(const char *predictions,
                                       const char *dataset,
                                       char **report_json);

/*
 Run a checkpoint over every sample of a dataset directory using the
 checkpoint's own evaluation settings. The report is returned as JSON.

 # Safety
 String arguments must be NUL-terminated; `report_json` must be valid.
 */
enum TradarStatus tradar_evaluate_checkpoint(const char *checkpoint,
                                             const char *dataset,
                                             char **report_json);

/*
 Load a checkpoint. On success `*out` owns a model freed with
 `tradar_model_free`.

 # Safety
 `path` must be NUL-terminated; `out` must be valid.
 */
enum TradarStatus tradar_model_load(const char *path, struct TradarModel **out);

/*
 # Safety
 `model` must be NULL or a handle from `tradar_model_load`, not yet freed.
 */
void tradar_model_free(struct TradarModel *model);

/*
 Floats per point the model expects: 7 for radar (x, y, z, rcs, v_r,
 v_r_comp, t), 4 for LiDAR (x, y, z, intensity). 0 for a NULL handle.

 # Safety
 `model` must be NULL or a live handle.
 */
size_t tradar_model_point_fields(const struct TradarModel *model);

/*
 Ground `prompt` in a point cloud of `n_points` rows, each
 `tradar_model_point_fields` floats wide. On success `*out` owns the
 predictions, freed with `tradar_predictions_free`.

 # Safety
 `points` must hold `n_points * fields` floats (may be NULL when
 `n_points` is 0); `prompt` must be NUL-terminated; `out` must be valid.
 */
enum TradarStatus tradar_model_predict(const struct TradarModel *model,
                                       const float *points,
                                       size_t n_points,
                                       const char *prompt,
                                       struct TradarPredictions **out);

/*
 Number of boxes, 0 for NULL.

 # Safety
 `p` must be NULL or a live handle.
 */
size_t tradar_predictions_len(const struct TradarPredictions *p);

/*
 Copy box `index` (highest score first) into `*out`.

 # Safety
 `p` must be NULL or a live handle; `out` must be valid.
 */
enum TradarStatus tradar_predictions_get(const struct TradarPredictions *p,
                                         size_t index,
                                         struct TradarScoredBox *out);

/*
 # Safety
 `p` must be NULL or a handle from `tradar_model_predict`, not yet freed.
 */
void tradar_predictions_free(struct TradarPredictions *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRADAR_H */
