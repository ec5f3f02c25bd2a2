use super::{
    predict_position, AssociationParams, Detection, MotionStatus, Track, TrackPoint,
};
use crate::factor_graph::{FrameId, TrackId};
use crate::geometry::Pose;

/// What a track received in the current frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackObservation {
    pub track: TrackId,
    /// Index into the frame's detections, or `None` for a supplementary one.
    pub detection_index: Option<usize>,
    pub detection: Detection,
    pub new_track: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateOutcome {
    pub observations: Vec<TrackObservation>,
    pub supplementary: Vec<Detection>,
    pub terminated: Vec<TrackId>,
}

/// Applies one frame's assignment to the track set.
///
/// `assignment` holds `(track index, detection index)` pairs into `tracks` and
/// `detections`; every detection must already carry its world pose. Matched
/// tracks extend. Unmatched initialized tracks with fewer than `miss_limit`
/// consecutive misses get a supplementary detection at their predicted
/// position; other unmatched tracks are removed. Unmatched detections open new
/// tracks with ids drawn from `next_id`.
pub fn update_tracks(
    tracks: &mut Vec<Track>,
    detections: &[Detection],
    assignment: &[(usize, usize)],
    frame: FrameId,
    ego_pose: &Pose,
    params: &AssociationParams,
    next_id: &mut TrackId,
) -> UpdateOutcome {
    let mut out = UpdateOutcome::default();
    let mut track_hit = vec![None; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    for &(t, d) in assignment {
        track_hit[t] = Some(d);
        det_used[d] = true;
    }

    let mut survivors = Vec::with_capacity(tracks.len());
    for (track, hit) in tracks.drain(..).zip(track_hit) {
        let mut track = track;
        match hit {
            Some(d) => {
                let det = &detections[d];
                let world = det.world_pose.expect("detection world pose assigned");
                track.consecutive_misses = 0;
                track.push(
                    TrackPoint {
                        frame,
                        world_pose: world,
                        supplementary: false,
                    },
                    params,
                );
                out.observations.push(TrackObservation {
                    track: track.id,
                    detection_index: Some(d),
                    detection: det.clone(),
                    new_track: false,
                });
                survivors.push(track);
            }
            None if track.initialized && track.consecutive_misses < params.miss_limit => {
                let det = supplementary_detection(&track, frame, ego_pose);
                track.consecutive_misses += 1;
                track.push(
                    TrackPoint {
                        frame,
                        world_pose: det.world_pose.expect("set"),
                        supplementary: true,
                    },
                    params,
                );
                out.observations.push(TrackObservation {
                    track: track.id,
                    detection_index: None,
                    detection: det.clone(),
                    new_track: false,
                });
                out.supplementary.push(det);
                survivors.push(track);
            }
            None => out.terminated.push(track.id),
        }
    }

    for (d, det) in detections.iter().enumerate() {
        if det_used[d] {
            continue;
        }
        let world = det.world_pose.expect("detection world pose assigned");
        let id = *next_id;
        *next_id += 1;
        let mut track = Track::new(id, det, world);
        track.initialized = track.len() > params.init_threshold;
        track.refit();
        out.observations.push(TrackObservation {
            track: id,
            detection_index: Some(d),
            detection: det.clone(),
            new_track: true,
        });
        survivors.push(track);
    }
    *tracks = survivors;
    out
}

// Predicted world position with height and heading carried from the last point.
fn supplementary_detection(track: &Track, frame: FrameId, ego_pose: &Pose) -> Detection {
    let (x, y) = predict_position(track, frame).expect("initialized");
    let last = &track.last().world_pose;
    let world = Pose::from_xyz_yaw(x, y, last.translation[2], last.yaw());
    let local = ego_pose.between(&world);
    Detection {
        frame,
        local_position: local.translation,
        yaw: local.yaw(),
        class_label: track.class_label,
        supplementary: true,
        world_pose: Some(world),
    }
}

/// Classifies an initialized track by its recent speed.
///
/// `motions` are the track's optimized per-frame motion transforms, oldest
/// first. When present, speed is the mean translation norm of the last
/// `min(n - 1, 5)` of them divided by `frame_period`; otherwise it is the net
/// displacement over that span of the position history. Speeds strictly below
/// `speed_threshold` are stationary.
pub fn classify_motion_status(
    track: &Track,
    motions: &[Pose],
    frame_period: f64,
    params: &AssociationParams,
) -> MotionStatus {
    if !track.initialized || track.len() < 2 {
        return MotionStatus::Unknown;
    }
    let span = (track.len() - 1).min(5);
    let speed = if !motions.is_empty() {
        let recent = &motions[motions.len().saturating_sub(span)..];
        let mean = recent.iter().map(|m| m.translation.norm()).sum::<f64>() / recent.len() as f64;
        mean / frame_period
    } else {
        let newest = track.last();
        let oldest = &track.history[track.len() - 1 - span];
        let frames = (newest.frame - oldest.frame).max(1) as f64;
        let d = newest.world_pose.translation.xy() - oldest.world_pose.translation.xy();
        d.norm() / (frames * frame_period)
    };
    if speed < params.speed_threshold {
        MotionStatus::Stationary
    } else {
        MotionStatus::Dynamic
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::{solve_assignment, ClassLabel, ScoreMatrix};
    use nalgebra::Vector3;

    fn det(frame: FrameId, x: f64, y: f64, ego: &Pose) -> Detection {
        let world = Pose::from_xyz_yaw(x, y, 0.0, 0.2);
        let local = ego.between(&world);
        let mut d = Detection::new(frame, local.translation, local.yaw(), ClassLabel::Vehicle);
        d.assign_world_pose(ego);
        d
    }

    fn step(
        tracks: &mut Vec<Track>,
        dets: &[Detection],
        frame: FrameId,
        ego: &Pose,
        params: &AssociationParams,
        next: &mut TrackId,
    ) -> UpdateOutcome {
        let scores = ScoreMatrix::build(tracks, dets, frame, params);
        let pairs: Vec<(usize, usize)> = solve_assignment(&scores);
        update_tracks(tracks, dets, &pairs, frame, ego, params, next)
    }

    #[test]
    fn lifecycle_with_supplementary_and_termination() {
        let params = AssociationParams::default();
        let ego = Pose::from_xyz_yaw(1.0, -2.0, 0.0, 0.4);
        let mut tracks = Vec::new();
        let mut next = 0;
        for f in 0..7u32 {
            let out = step(&mut tracks, &[det(f, 10.0 + 0.5 * f as f64, 3.0, &ego)], f, &ego, &params, &mut next);
            assert_eq!(out.observations.len(), 1);
        }
        assert_eq!(tracks.len(), 1);
        assert!(tracks[0].initialized);
        assert_eq!(tracks[0].len(), 7);

        // First miss: supplementary detection at the predicted position.
        let out = step(&mut tracks, &[], 7, &ego, &params, &mut next);
        assert_eq!(out.supplementary.len(), 1);
        let s = &out.supplementary[0];
        let w = s.world_pose.as_ref().unwrap();
        assert!((w.translation[0] - 13.5).abs() < 1e-6 && (w.translation[1] - 3.0).abs() < 1e-6);
        assert!((s.local_pose().translation - ego.between(w).translation).norm() < 1e-9);
        assert!((w.yaw() - 0.2).abs() < 1e-9);
        assert_eq!(tracks[0].consecutive_misses, 1);

        // A detection continuing the line resets the miss counter.
        let out = step(&mut tracks, &[det(8, 14.0, 3.0, &ego)], 8, &ego, &params, &mut next);
        assert_eq!(out.observations[0].detection_index, Some(0));
        assert!(!out.observations[0].new_track);
        assert_eq!(tracks[0].consecutive_misses, 0);
        assert_eq!(tracks[0].len(), 9);

        let _ = step(&mut tracks, &[], 9, &ego, &params, &mut next);
        let out = step(&mut tracks, &[], 10, &ego, &params, &mut next);
        assert_eq!(out.terminated, vec![0]);
        assert!(tracks.is_empty());
    }

    #[test]
    fn uninitialized_tracks_die_on_first_miss_and_spawn_new_ids() {
        let params = AssociationParams::default();
        let ego = Pose::identity();
        let mut tracks = Vec::new();
        let mut next = 5;
        step(&mut tracks, &[det(0, 0.0, 0.0, &ego), det(0, 20.0, 0.0, &ego)], 0, &ego, &params, &mut next);
        assert_eq!(tracks.iter().map(|t| t.id).collect::<Vec<_>>(), vec![5, 6]);
        let out = step(&mut tracks, &[det(1, 20.5, 0.0, &ego), det(1, 40.0, 0.0, &ego)], 1, &ego, &params, &mut next);
        assert_eq!(out.terminated, vec![5]);
        assert_eq!(tracks.iter().map(|t| t.id).collect::<Vec<_>>(), vec![6, 7]);
    }

    fn initialized(points: &[(FrameId, f64)]) -> Track {
        let params = AssociationParams::default();
        let first = Detection::new(points[0].0, Vector3::zeros(), 0.0, ClassLabel::Cyclist);
        let mut t = Track::new(0, &first, Pose::from_translation(points[0].1, 0.0, 0.0));
        for &(f, x) in &points[1..] {
            t.push(
                TrackPoint {
                    frame: f,
                    world_pose: Pose::from_translation(x, 0.0, 0.0),
                    supplementary: false,
                },
                &params,
            );
        }
        t
    }

    #[test]
    fn motion_status_threshold_is_strict() {
        let params = AssociationParams::default();
        let track = initialized(&(0..7).map(|f| (f, 0.0)).collect::<Vec<_>>());
        let at = |v: f64| vec![Pose::from_translation(v, 0.0, 0.0); 6];
        assert_eq!(classify_motion_status(&track, &at(0.1), 1.0, &params), MotionStatus::Dynamic);
        assert_eq!(classify_motion_status(&track, &at(0.0999), 1.0, &params), MotionStatus::Stationary);
        assert_eq!(classify_motion_status(&track, &at(0.0), 1.0, &params), MotionStatus::Stationary);

        // History fallback: 0.05 m per frame at 0.1 s is 0.5 m/s.
        let moving = initialized(&(0..7).map(|f| (f, 0.05 * f as f64)).collect::<Vec<_>>());
        assert_eq!(classify_motion_status(&moving, &[], 0.1, &params), MotionStatus::Dynamic);
        assert_eq!(classify_motion_status(&track, &[], 0.1, &params), MotionStatus::Stationary);

        let young = initialized(&[(0, 0.0), (1, 1.0)]);
        assert_eq!(classify_motion_status(&young, &at(3.0), 0.1, &params), MotionStatus::Unknown);
    }
}
