use super::{predict_position, AssociationParams, Detection, Prediction, Track};
use crate::factor_graph::{FrameId, TrackId};

/// Matching score of one track against one detection, in `[0, 1]`.
///
/// The distance is measured from the track's predicted position (initialized
/// tracks) or its last position (otherwise). Pairs of different classes, or
/// beyond the active gate radius, score zero; inside the gate the score falls
/// linearly from 1 at zero distance to 0 at the gate.
pub fn match_score(track: &Track, det: &Detection, frame: FrameId, params: &AssociationParams) -> f64 {
    if track.class_label != det.class_label {
        return 0.0;
    }
    let Some(world) = det.world_pose.as_ref() else {
        return 0.0;
    };
    let last = &track.last().world_pose.translation;
    let (px, py) = match params.prediction {
        _ if !track.initialized => (last[0], last[1]),
        Prediction::Polynomial => predict_position(track, frame).expect("initialized"),
        Prediction::ConstantVelocity if track.len() >= 2 => {
            let prev = &track.history[track.len() - 2];
            let steps = (frame - track.last_frame()) as f64 / (track.last_frame() - prev.frame) as f64;
            let v = last - prev.world_pose.translation;
            (last[0] + steps * v[0], last[1] + steps * v[1])
        }
        Prediction::LastPosition | Prediction::ConstantVelocity => (last[0], last[1]),
    };
    let dx = px - world.translation[0];
    let dy = py - world.translation[1];
    let dist = (dx * dx + dy * dy).sqrt();
    let gate = if track.initialized {
        params.gate_initialized
    } else {
        params.gate_uninitialized
    };
    if dist < gate {
        (gate - dist) / gate
    } else {
        0.0
    }
}

/// Scores of every (track, detection) pair; rows follow `track_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub track_ids: Vec<TrackId>,
    pub detections: usize,
    entries: Vec<f64>,
}

impl ScoreMatrix {
    pub fn from_rows(track_ids: Vec<TrackId>, rows: Vec<Vec<f64>>) -> Self {
        let detections = rows.first().map_or(0, |r| r.len());
        assert!(rows.len() == track_ids.len() && rows.iter().all(|r| r.len() == detections));
        Self {
            track_ids,
            detections,
            entries: rows.into_iter().flatten().collect(),
        }
    }

    pub fn build(tracks: &[Track], dets: &[Detection], frame: FrameId, params: &AssociationParams) -> Self {
        let entries = tracks
            .iter()
            .flat_map(|t| dets.iter().map(move |d| match_score(t, d, frame, params)))
            .collect();
        Self {
            track_ids: tracks.iter().map(|t| t.id).collect(),
            detections: dets.len(),
            entries,
        }
    }

    pub fn rows(&self) -> usize {
        self.track_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.detections
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.detections + col]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::{ClassLabel, TrackPoint};
    use crate::geometry::Pose;
    use nalgebra::Vector3;

    fn det_at(x: f64, y: f64, class: ClassLabel) -> Detection {
        let mut d = Detection::new(10, Vector3::new(x, y, 0.0), 0.0, class);
        d.assign_world_pose(&Pose::identity());
        d
    }

    fn initialized_track_at(x: f64) -> Track {
        let params = AssociationParams::default();
        let first = det_at(x, 0.0, ClassLabel::Vehicle);
        let mut t = Track::new(0, &first, first.world_pose.unwrap());
        for f in 1..7 {
            t.push(
                TrackPoint {
                    frame: 3 + f,
                    world_pose: Pose::from_translation(x, 0.0, 0.0),
                    supplementary: false,
                },
                &params,
            );
        }
        assert!(t.initialized);
        t
    }

    #[test]
    fn score_cases() {
        let params = AssociationParams::default();
        let track = initialized_track_at(5.0);
        assert!((match_score(&track, &det_at(5.0, 0.0, ClassLabel::Vehicle), 10, &params) - 1.0).abs() < 1e-9);
        assert_eq!(match_score(&track, &det_at(5.0, 0.0, ClassLabel::Cyclist), 10, &params), 0.0);
        let s = match_score(&track, &det_at(5.75, 0.0, ClassLabel::Vehicle), 10, &params);
        assert!((s - 0.5).abs() < 1e-9);
        // Beyond the initialized gate but inside the uninitialized one.
        assert_eq!(match_score(&track, &det_at(7.0, 0.0, ClassLabel::Vehicle), 10, &params), 0.0);
        let young = Track::new(1, &det_at(5.0, 0.0, ClassLabel::Vehicle), Pose::from_translation(5.0, 0.0, 0.0));
        let s = match_score(&young, &det_at(7.0, 0.0, ClassLabel::Vehicle), 10, &params);
        assert!((s - 1.0 / 3.0).abs() < 1e-12);
    }
}
