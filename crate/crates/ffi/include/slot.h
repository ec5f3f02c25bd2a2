#ifndef SLOT_H
#define SLOT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SLOT_CLASS_VEHICLE 0

#define SLOT_CLASS_PEDESTRIAN 1

#define SLOT_CLASS_CYCLIST 2

#define SLOT_MOTION_UNKNOWN 0

#define SLOT_MOTION_DYNAMIC 1

#define SLOT_MOTION_STATIONARY 2

typedef enum SlotStatus {
  SLOT_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SLOT_STATUS_NULL_POINTER = 1,
  /**
   * Malformed config, out-of-order frame, bad rotation, unknown class.
   */
  SLOT_STATUS_INVALID_INPUT = 2,
  /**
   * The solver or marginalization failed.
   */
  SLOT_STATUS_NUMERICAL = 3,
  SLOT_STATUS_IO = 4,
  /**
   * Index past the end of an output sequence.
   */
  SLOT_STATUS_OUT_OF_RANGE = 5,
  /**
   * A Rust panic was caught at the boundary; the handle should be freed.
   */
  SLOT_STATUS_PANIC = 6,
} SlotStatus;

typedef struct SlotPipeline SlotPipeline;

/**
 * One detection in the ego frame of the current scan.
 */
typedef struct SlotDetection {
  double x;
  double y;
  double z;
  double yaw;
  /**
   * One of the `SLOT_CLASS_*` constants.
   */
  uint32_t class_label;
} SlotDetection;

/**
 * Loop event: pose of the current frame relative to `frame_old`.
 */
typedef struct SlotLoop {
  uint32_t frame_old;
  double t_meas[12];
} SlotLoop;

/**
 * Estimated state of one track in one frame.
 */
typedef struct SlotTrackRecord {
  uint32_t frame;
  uint32_t track_id;
  uint32_t class_label;
  /**
   * One of the `SLOT_MOTION_*` constants.
   */
  uint32_t motion_status;
  double x;
  double y;
  double z;
  double yaw;
  double vx;
  double vy;
  double vz;
  bool supplementary;
} SlotTrackRecord;

/**
 * Creates a pipeline. `config_toml` holds a run config document, or is null
 * for the defaults. On success `*out` owns the new handle.
 *
 * # Safety
 * `config_toml` must be null or a NUL-terminated string; `out` must be a
 * valid pointer to writable storage.
 */
enum SlotStatus slot_pipeline_new(const char *config_toml, struct SlotPipeline **out);

/**
 * Releases a pipeline. Null is ignored.
 *
 * # Safety
 * `pipeline` must be null or a handle from [`slot_pipeline_new`] that has
 * not been freed.
 */
void slot_pipeline_free(struct SlotPipeline *pipeline);

/**
 * Processes one scan. `odometry` is the 3×4 pose of this frame relative to
 * the previous one (ignored for the first frame). Frame numbers must
 * increase strictly.
 *
 * # Safety
 * `pipeline` must be a live handle; `odometry` must point to 12 doubles;
 * `detections` and `loops` must point to `n_detections` and `n_loops`
 * elements (either may be null when its count is zero).
 */
enum SlotStatus slot_pipeline_ingest(struct SlotPipeline *pipeline,
                                     uint32_t frame,
                                     const double *odometry,
                                     const struct SlotDetection *detections,
                                     size_t n_detections,
                                     const struct SlotLoop *loops,
                                     size_t n_loops);

/**
 * Number of frames ingested so far; 0 for a null handle.
 *
 * # Safety
 * `pipeline` must be null or a live handle.
 */
size_t slot_pipeline_frame_count(const struct SlotPipeline *pipeline);

/**
 * Writes the current ego pose estimate of the `index`-th ingested frame.
 *
 * # Safety
 * `pipeline` must be a live handle; `out` must point to 12 writable doubles.
 */
enum SlotStatus slot_pipeline_ego_pose(const struct SlotPipeline *pipeline,
                                       size_t index,
                                       double *out);

/**
 * Number of track records (one per track observation); 0 for a null handle.
 *
 * # Safety
 * `pipeline` must be null or a live handle.
 */
size_t slot_pipeline_track_record_count(const struct SlotPipeline *pipeline);

/**
 * Copies the `index`-th track record, in ingestion order.
 *
 * # Safety
 * `pipeline` must be a live handle; `out` must be valid for writes.
 */
enum SlotStatus slot_pipeline_track_record(const struct SlotPipeline *pipeline,
                                           size_t index,
                                           struct SlotTrackRecord *out);

/**
 * Writes `ego.txt`, `tracks.jsonl` and `timings.json` into `dir`, creating
 * it if needed.
 *
 * # Safety
 * `pipeline` must be a live handle; `dir` must be a NUL-terminated string.
 */
enum SlotStatus slot_pipeline_write_outputs(const struct SlotPipeline *pipeline, const char *dir);

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next library call on the same thread.
 */
const char *slot_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *slot_version(void);

#endif  /* SLOT_H */
