//! Trajectory-based data association between tracked and detected objects.
//!
//! Each track keeps a short world-frame trajectory and a cubic fit of its
//! x and y coordinates over time. Detections are scored against the fit's
//! one-step prediction, paired by an optimal assignment, and the track set is
//! updated: matched tracks extend, briefly missed initialized tracks receive
//! a predicted (supplementary) detection, and leftover detections start new
//! tracks.

mod assignment;
mod scoring;
mod tracks;
mod trajectory;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor_graph::{FrameId, TrackId};
use crate::geometry::Pose;

pub use assignment::solve_assignment;
pub use scoring::{match_score, ScoreMatrix};
pub use tracks::{classify_motion_status, update_tracks, TrackObservation, UpdateOutcome};
pub use trajectory::{fit_trajectory, predict_position, Polynomial};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssociationError {
    #[error("trajectory fit needs at least 2 points, got {0}")]
    InsufficientHistory(usize),
    #[error("track {0} is not initialized")]
    UninitializedTrack(TrackId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl ClassLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClassLabel::Vehicle => "vehicle",
            ClassLabel::Pedestrian => "pedestrian",
            ClassLabel::Cyclist => "cyclist",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vehicle" => Ok(ClassLabel::Vehicle),
            "pedestrian" => Ok(ClassLabel::Pedestrian),
            "cyclist" => Ok(ClassLabel::Cyclist),
            other => Err(format!("unknown class label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionStatus {
    Unknown,
    Dynamic,
    Stationary,
}

impl MotionStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            MotionStatus::Unknown => "unknown",
            MotionStatus::Dynamic => "dynamic",
            MotionStatus::Stationary => "stationary",
        }
    }
}

/// How initialized tracks predict their next position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    /// Least-squares cubic over the track history.
    #[default]
    Polynomial,
    /// Last observed position; the nearest-neighbour baseline.
    LastPosition,
    /// Last position plus the last frame-to-frame displacement.
    ConstantVelocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssociationParams {
    /// Sliding window size; histories hold at most `window_size - 1` points.
    pub window_size: usize,
    /// A track is initialized once its history is longer than this.
    pub init_threshold: usize,
    /// Gate radius (m) for initialized tracks.
    pub gate_initialized: f64,
    /// Gate radius (m) for uninitialized tracks.
    pub gate_uninitialized: f64,
    /// Consecutive misses an initialized track survives via supplementary
    /// detections.
    pub miss_limit: u32,
    /// Speed (m/s) below which an initialized track is stationary.
    pub speed_threshold: f64,
    pub prediction: Prediction,
}

impl Default for AssociationParams {
    fn default() -> Self {
        Self {
            window_size: 10,
            init_threshold: 5,
            gate_initialized: 1.5,
            gate_uninitialized: 3.0,
            miss_limit: 1,
            speed_threshold: 0.1,
            prediction: Prediction::Polynomial,
        }
    }
}

/// One object observation in the ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: FrameId,
    pub local_position: Vector3<f64>,
    pub yaw: f64,
    pub class_label: ClassLabel,
    /// Synthesized from a track prediction rather than measured.
    pub supplementary: bool,
    /// World pose once the ego pose of `frame` is known.
    pub world_pose: Option<Pose>,
}

impl Detection {
    pub fn new(frame: FrameId, local_position: Vector3<f64>, yaw: f64, class_label: ClassLabel) -> Self {
        Self {
            frame,
            local_position,
            yaw,
            class_label,
            supplementary: false,
            world_pose: None,
        }
    }

    pub fn local_pose(&self) -> Pose {
        let p = &self.local_position;
        Pose::from_xyz_yaw(p[0], p[1], p[2], self.yaw)
    }

    /// Lifts the detection into the world frame through `ego`.
    pub fn assign_world_pose(&mut self, ego: &Pose) {
        self.world_pose = Some(ego.compose(&self.local_pose()));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub frame: FrameId,
    pub world_pose: Pose,
    pub supplementary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: TrackId,
    pub class_label: ClassLabel,
    pub history: VecDeque<TrackPoint>,
    pub initialized: bool,
    pub consecutive_misses: u32,
    pub motion_status: MotionStatus,
    pub poly_x: Polynomial,
    pub poly_y: Polynomial,
}

impl Track {
    pub fn new(id: TrackId, detection: &Detection, world_pose: Pose) -> Self {
        let mut history = VecDeque::new();
        history.push_back(TrackPoint {
            frame: detection.frame,
            world_pose,
            supplementary: detection.supplementary,
        });
        Self {
            id,
            class_label: detection.class_label,
            history,
            initialized: false,
            consecutive_misses: 0,
            motion_status: MotionStatus::Unknown,
            poly_x: Polynomial::default(),
            poly_y: Polynomial::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn last(&self) -> &TrackPoint {
        self.history.back().expect("tracks are never empty")
    }

    pub fn last_frame(&self) -> FrameId {
        self.last().frame
    }

    /// Refits both polynomials from the current history. Histories shorter
    /// than two points keep a constant fit at the last position.
    pub fn refit(&mut self) {
        let pts: Vec<(FrameId, f64, f64)> = self
            .history
            .iter()
            .map(|p| (p.frame, p.world_pose.translation[0], p.world_pose.translation[1]))
            .collect();
        match fit_trajectory(&pts) {
            Ok((px, py)) => {
                self.poly_x = px;
                self.poly_y = py;
            }
            Err(_) => {
                let t = self.last().world_pose.translation;
                self.poly_x = Polynomial([0.0, 0.0, 0.0, t[0]]);
                self.poly_y = Polynomial([0.0, 0.0, 0.0, t[1]]);
            }
        }
    }

    pub(crate) fn push(&mut self, point: TrackPoint, params: &AssociationParams) {
        self.history.push_back(point);
        let cap = params.window_size.saturating_sub(1).max(1);
        while self.history.len() > cap {
            self.history.pop_front();
        }
        self.initialized = self.history.len() > params.init_threshold;
        if !self.initialized {
            self.motion_status = MotionStatus::Unknown;
        }
        self.refit();
    }
}
