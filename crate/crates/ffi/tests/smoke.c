#include <math.h>
#include <stdio.h>

#include "slot.h"

int main(void) {
    SlotPipeline *p = NULL;
    if (slot_pipeline_new("window_size = 10", &p) != SLOT_STATUS_OK) {
        printf("new: %s\n", slot_last_error_message());
        return 1;
    }
    double odo[12] = {1, 0, 0, 1, 0, 1, 0, 0, 0, 0, 1, 0};
    for (uint32_t f = 0; f < 10; f++) {
        SlotDetection det = {12.0 - f, -3.0, 0.0, 0.0, SLOT_CLASS_PEDESTRIAN};
        if (slot_pipeline_ingest(p, f, odo, &det, 1, NULL, 0) != SLOT_STATUS_OK) {
            printf("ingest %u: %s\n", f, slot_last_error_message());
            return 1;
        }
    }
    double pose[12];
    SlotTrackRecord rec;
    if (slot_pipeline_ego_pose(p, 9, pose) != SLOT_STATUS_OK || fabs(pose[3] - 9.0) > 1e-9) {
        printf("ego pose wrong\n");
        return 1;
    }
    size_t n = slot_pipeline_track_record_count(p);
    if (n != 10 || slot_pipeline_track_record(p, n - 1, &rec) != SLOT_STATUS_OK ||
        rec.class_label != SLOT_CLASS_PEDESTRIAN || fabs(rec.x - 12.0) > 1e-9) {
        printf("track record wrong\n");
        return 1;
    }
    if (slot_pipeline_track_record(p, n, &rec) != SLOT_STATUS_OUT_OF_RANGE) {
        printf("range check missing\n");
        return 1;
    }
    slot_pipeline_free(p);
    printf("ok %s\n", slot_version());
    return 0;
}
