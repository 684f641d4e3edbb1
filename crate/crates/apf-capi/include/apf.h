/* C interface to the appearance prefiltering pipeline. */

#ifndef APF_H
#define APF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call. Nonzero values mirror the
 * CLI exit codes; `InvalidArgument` flags null/invalid pointers and UTF-8.
 */
typedef enum ApfStatus {
  Ok = 0,
  InvalidArgument = 1,
  Validation = 2,
  Io = 3,
  Numeric = 4,
} ApfStatus;

/**
 * Opaque linear-RGB image handle.
 */
typedef struct ApfImage ApfImage;

/**
 * Opaque scene handle.
 */
typedef struct ApfScene ApfScene;

/**
 * Opaque sparse voxel octree handle.
 */
typedef struct ApfSvo ApfSvo;

/**
 * Opaque baked-table store handle.
 */
typedef struct ApfTables ApfTables;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent error on this thread (empty when none). The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *apf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *apf_version(void);

/**
 * Load a scene (JSON + OBJ) and normalize it.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be a valid pointer.
 */
enum ApfStatus apf_scene_load(const char *path, struct ApfScene **out);

/**
 * # Safety
 * `scene` must come from `apf_scene_load` and not already be freed.
 */
void apf_scene_free(struct ApfScene *scene);

/**
 * Triangle count of a loaded scene (0 for null).
 *
 * # Safety
 * `scene` must be a live handle or null.
 */
uint64_t apf_scene_triangle_count(const struct ApfScene *scene);

/**
 * Voxelize a normalized scene into scales 0..=max_scale.
 *
 * # Safety
 * `scene` must be a live handle; `out` valid.
 */
enum ApfStatus apf_svo_build(const struct ApfScene *scene, uint32_t max_scale, struct ApfSvo **out);

/**
 * # Safety
 * `path` NUL-terminated, `out` valid.
 */
enum ApfStatus apf_svo_load(const char *path, struct ApfSvo **out);

/**
 * # Safety
 * `svo` live handle, `path` NUL-terminated.
 */
enum ApfStatus apf_svo_save(const struct ApfSvo *svo, const char *path);

/**
 * Total voxels across all scales (0 for null).
 *
 * # Safety
 * `svo` must be a live handle or null.
 */
uint64_t apf_svo_voxel_count(const struct ApfSvo *svo);

/**
 * # Safety
 * `svo` from a constructor, not already freed.
 */
void apf_svo_free(struct ApfSvo *svo);

/**
 * Bake per-voxel appearance tables. `toward_camera` nonzero bakes the
 * first view of each voxel exactly toward the scene camera (the faithful
 * mode for LUT rendering); zero uses the shared random view set.
 *
 * # Safety
 * `scene` and `svo` must be live handles; `out` valid.
 */
enum ApfStatus apf_tables_bake(const struct ApfScene *scene,
                               const struct ApfSvo *svo,
                               uint32_t views,
                               uint32_t samples_per_view,
                               uint32_t phase_resolution,
                               uint32_t mask_resolution,
                               uint64_t seed,
                               uint32_t min_scale,
                               int32_t toward_camera,
                               struct ApfTables **out);

/**
 * # Safety
 * `path` NUL-terminated, `out` valid.
 */
enum ApfStatus apf_tables_load(const char *path, struct ApfTables **out);

/**
 * # Safety
 * `tables` live handle, `path` NUL-terminated.
 */
enum ApfStatus apf_tables_save(const struct ApfTables *tables, const char *path);

/**
 * # Safety
 * `tables` from a constructor, not already freed.
 */
void apf_tables_free(struct ApfTables *tables);

/**
 * Single-bounce MIS reference render.
 *
 * # Safety
 * `scene` must be a live handle; `out` valid.
 */
enum ApfStatus apf_render_reference(const struct ApfScene *scene,
                                    uint32_t spp,
                                    uint64_t seed,
                                    struct ApfImage **out);

/**
 * Beam-traced render from baked tables. `scale < 0` selects the scale per
 * pixel from the beam footprint.
 *
 * # Safety
 * All handles must be live; `out` valid.
 */
enum ApfStatus apf_render_prefiltered(const struct ApfScene *scene,
                                      const struct ApfSvo *svo,
                                      const struct ApfTables *tables,
                                      int32_t scale,
                                      int32_t blend,
                                      uint32_t shadow_resolution,
                                      struct ApfImage **out);

/**
 * Beam-traced render from trained weights plus a latent store on disk.
 *
 * # Safety
 * Handles must be live; paths NUL-terminated; `out` valid.
 */
enum ApfStatus apf_render_neural(const struct ApfScene *scene,
                                 const struct ApfSvo *svo,
                                 const char *weights_path,
                                 const char *latents_path,
                                 int32_t scale,
                                 int32_t blend,
                                 uint32_t shadow_resolution,
                                 struct ApfImage **out);

/**
 * # Safety
 * `img` must be a live handle or null.
 */
uint32_t apf_image_width(const struct ApfImage *img);

/**
 * # Safety
 * `img` must be a live handle or null.
 */
uint32_t apf_image_height(const struct ApfImage *img);

/**
 * Borrow the pixel data: width*height*3 f32 values, top row first. Valid
 * until the image is freed.
 *
 * # Safety
 * `img` must be a live handle or null.
 */
const float *apf_image_data(const struct ApfImage *img);

/**
 * # Safety
 * `img` live handle, `path` NUL-terminated.
 */
enum ApfStatus apf_image_write_pfm(const struct ApfImage *img, const char *path);

/**
 * # Safety
 * `img` live handle, `path` NUL-terminated.
 */
enum ApfStatus apf_image_write_png(const struct ApfImage *img, const char *path);

/**
 * # Safety
 * `img` from a constructor, not already freed.
 */
void apf_image_free(struct ApfImage *img);

/**
 * MSE between two images of equal size; negative on error.
 *
 * # Safety
 * Both handles must be live or null.
 */
double apf_image_mse(const struct ApfImage *a, const struct ApfImage *b);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APF_H */
