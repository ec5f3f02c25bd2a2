//! Deterministic synthetic scenes standing in for a detector, LiDAR odometry
//! and loop detection.
//!
//! A [`SceneSpec`] describes the ego path, scripted objects, noise levels,
//! occlusions and loop pairs. [`generate_scene`] produces exact ground truth;
//! [`emit_stream`] corrupts it into the measurement stream the back-end reads.
//! Everything is a pure function of the spec and the seed.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{ClassLabel, MotionStatus};
use crate::factor_graph::FrameId;
use crate::geometry::{Pose, Twist};
use crate::io::{
    write_poses, write_tracks, FrameRecord, FrameStream, IoError, StreamDetection, StreamHeader, StreamLoop,
    TrackRecord,
};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scene {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scene: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

fn default_period() -> f64 {
    0.1
}

fn default_radius() -> f64 {
    60.0
}

/// A stretch of the ego path driven at constant speed and yaw rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSegment {
    pub frames: usize,
    /// m/s along the vehicle's x axis.
    pub speed: f64,
    /// rad/s
    #[serde(default)]
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub odom_trans_sigma: f64,
    pub odom_rot_sigma: f64,
    pub det_pos_sigma: f64,
    pub det_yaw_sigma: f64,
    pub dropout_prob: f64,
}

/// Object trajectory, as offsets from the spawn position over the time `tau`
/// in seconds since spawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionProfile {
    Stationary,
    /// World-frame velocity (m/s).
    ConstantVelocity { velocity: [f64; 2] },
    /// `[tau, dx, dy]` knots with increasing `tau`; held at the ends.
    PiecewiseLinear { waypoints: Vec<[f64; 3]> },
    /// `dx = x[0] tau^3 + x[1] tau^2 + x[2] tau + x[3]`, likewise `dy`.
    Cubic { x: [f64; 4], y: [f64; 4] },
}

impl MotionProfile {
    fn offset(&self, tau: f64) -> (f64, f64) {
        match self {
            MotionProfile::Stationary => (0.0, 0.0),
            MotionProfile::ConstantVelocity { velocity } => (velocity[0] * tau, velocity[1] * tau),
            MotionProfile::PiecewiseLinear { waypoints } => {
                let first = waypoints[0];
                let last = waypoints[waypoints.len() - 1];
                if tau <= first[0] {
                    return (first[1], first[2]);
                }
                if tau >= last[0] {
                    return (last[1], last[2]);
                }
                let k = waypoints.windows(2).position(|w| tau < w[1][0]).expect("inside knots");
                let (a, b) = (waypoints[k], waypoints[k + 1]);
                let s = (tau - a[0]) / (b[0] - a[0]);
                (a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2]))
            }
            MotionProfile::Cubic { x, y } => {
                let ev = |c: &[f64; 4]| ((c[0] * tau + c[1]) * tau + c[2]) * tau + c[3];
                (ev(x), ev(y))
            }
        }
    }

    /// Direction of travel at `tau`, if the object is moving.
    fn heading(&self, tau: f64) -> Option<f64> {
        let (vx, vy) = match self {
            MotionProfile::Stationary => return None,
            MotionProfile::ConstantVelocity { velocity } => (velocity[0], velocity[1]),
            MotionProfile::PiecewiseLinear { waypoints } => {
                let k = waypoints.windows(2).position(|w| tau < w[1][0])?;
                let (a, b) = (waypoints[k], waypoints[k + 1]);
                (b[1] - a[1], b[2] - a[2])
            }
            MotionProfile::Cubic { x, y } => {
                let d = |c: &[f64; 4]| (3.0 * c[0] * tau + 2.0 * c[1]) * tau + c[2];
                (d(x), d(y))
            }
        };
        (vx.hypot(vy) > 1e-12).then(|| vy.atan2(vx))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub class: ClassLabel,
    #[serde(default)]
    pub spawn: FrameId,
    /// First frame the object no longer exists; defaults to the scene end.
    #[serde(default)]
    pub despawn: Option<FrameId>,
    /// World position at spawn.
    pub start: [f64; 3],
    /// Heading at spawn, kept while the object is not moving.
    #[serde(default)]
    pub yaw: f64,
    pub motion: MotionProfile,
}

/// Frames `start..=end` in which an object produces no detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionEvent {
    pub object: usize,
    pub start: FrameId,
    pub end: FrameId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopPair {
    pub frame_old: FrameId,
    pub frame_new: FrameId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default = "default_period")]
    pub frame_period: f64,
    pub frame_count: usize,
    /// Objects farther than this from the ego vehicle are not detected.
    #[serde(default = "default_radius")]
    pub sensing_radius: f64,
    /// Driven in order; the last segment extends to the end of the scene.
    #[serde(default)]
    pub ego_path: Vec<PathSegment>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub occlusions: Vec<OcclusionEvent>,
    #[serde(default)]
    pub loop_pairs: Vec<LoopPair>,
}

impl SceneSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, SceneError> {
        let spec: SceneSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Invalid(m));
        let n = self.frame_count as u64;
        if self.frame_count == 0 {
            return bad("frame_count must be at least 1".into());
        }
        if !(self.frame_period > 0.0 && self.frame_period.is_finite()) {
            return bad("frame_period must be positive".into());
        }
        if !(self.sensing_radius > 0.0) {
            return bad("sensing_radius must be positive".into());
        }
        let nz = &self.noise;
        let sigmas = [nz.odom_trans_sigma, nz.odom_rot_sigma, nz.det_pos_sigma, nz.det_yaw_sigma];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("noise sigmas must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&nz.dropout_prob) {
            return bad("dropout_prob must lie in [0, 1]".into());
        }
        for (i, seg) in self.ego_path.iter().enumerate() {
            if !(seg.speed.is_finite() && seg.yaw_rate.is_finite()) {
                return bad(format!("ego_path[{i}] is not finite"));
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            let despawn = o.despawn.map_or(n, u64::from);
            if u64::from(o.spawn) >= n || despawn > n || despawn <= u64::from(o.spawn) {
                return bad(format!("objects[{i}] spawn/despawn outside [0, frame_count)"));
            }
            if let MotionProfile::PiecewiseLinear { waypoints } = &o.motion {
                if waypoints.is_empty() || waypoints.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return bad(format!("objects[{i}] waypoints must be non-empty with increasing time"));
                }
            }
        }
        for (i, e) in self.occlusions.iter().enumerate() {
            if e.object >= self.objects.len() || e.start > e.end || u64::from(e.end) >= n {
                return bad(format!("occlusions[{i}] refers outside the scene"));
            }
        }
        for (i, l) in self.loop_pairs.iter().enumerate() {
            if l.frame_old >= l.frame_new || u64::from(l.frame_new) >= n {
                return bad(format!("loop_pairs[{i}] must satisfy frame_old < frame_new < frame_count"));
            }
        }
        Ok(())
    }
}

/// A spec, its seed and the exact trajectories it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub seed: u64,
    pub ego: Vec<Pose>,
    /// World pose of each object at each frame, `None` outside its lifetime.
    pub objects: Vec<Vec<Option<Pose>>>,
}

pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene, SceneError> {
    spec.validate()?;
    let dt = spec.frame_period;
    let mut ego = Vec::with_capacity(spec.frame_count);
    let mut pose = Pose::identity();
    let steps: Vec<&PathSegment> = spec
        .ego_path
        .iter()
        .flat_map(|s| std::iter::repeat_n(s, s.frames))
        .collect();
    for f in 0..spec.frame_count {
        ego.push(pose);
        if let Some(seg) = steps.get(f).copied().or(spec.ego_path.last()) {
            let mut step = Twist::zeros();
            step[2] = seg.yaw_rate * dt;
            step[3] = seg.speed * dt;
            pose = pose.compose(&Pose::exp(&step));
        }
    }

    let objects = spec
        .objects
        .iter()
        .map(|o| {
            let despawn = o.despawn.map_or(spec.frame_count, |d| d as usize);
            let mut yaw = o.yaw;
            (0..spec.frame_count)
                .map(|f| {
                    if f < o.spawn as usize || f >= despawn {
                        return None;
                    }
                    let tau = (f - o.spawn as usize) as f64 * dt;
                    let (dx, dy) = o.motion.offset(tau);
                    if let Some(h) = o.motion.heading(tau) {
                        yaw = h;
                    }
                    Some(Pose::from_xyz_yaw(o.start[0] + dx, o.start[1] + dy, o.start[2], yaw))
                })
                .collect()
        })
        .collect();

    Ok(Scene {
        spec: spec.clone(),
        seed,
        ego,
        objects,
    })
}

/// The serialized stream plus, for every emitted detection, the index of the
/// object that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedStream {
    pub stream: FrameStream,
    pub labels: Vec<Vec<usize>>,
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

fn twist_noise(rng: &mut ChaCha8Rng, rot: f64, trans: f64) -> Twist {
    let mut t = Twist::zeros();
    for i in 0..3 {
        t[i] = gaussian(rng, rot);
    }
    for i in 3..6 {
        t[i] = gaussian(rng, trans);
    }
    t
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    if w < -std::f64::consts::PI {
        w + std::f64::consts::TAU
    } else {
        w
    }
}

impl Scene {
    fn occluded(&self, object: usize, frame: usize) -> bool {
        self.spec
            .occlusions
            .iter()
            .any(|e| e.object == object && (e.start as usize..=e.end as usize).contains(&frame))
    }

    /// Ego-frame pose of `object` at `frame` if it exists and is in range.
    pub fn visible_local(&self, object: usize, frame: usize) -> Option<Pose> {
        let world = self.objects[object][frame]?;
        let local = self.ego[frame].between(&world);
        (local.translation.norm() <= self.spec.sensing_radius).then_some(local)
    }

    /// Ground-truth object states for every frame in which an object exists
    /// within sensing range, with object indices as track ids.
    pub fn ground_truth_records(&self) -> Vec<TrackRecord> {
        let dt = self.spec.frame_period;
        let mut out = Vec::new();
        for f in 0..self.spec.frame_count {
            for (k, spec) in self.spec.objects.iter().enumerate() {
                if self.visible_local(k, f).is_none() {
                    continue;
                }
                let b = self.objects[k][f].expect("visible implies alive");
                let step = match (f.checked_sub(1).and_then(|p| self.objects[k][p]), self.objects[k].get(f + 1)) {
                    (Some(prev), _) => Some(prev.between(&b)),
                    (None, Some(Some(next))) => Some(b.between(next)),
                    _ => None,
                };
                let v = step
                    .and_then(|s| s.log().ok())
                    .map_or(Vector3::zeros(), |t| Vector3::new(t[3], t[4], t[5]) / dt);
                let status = match spec.motion {
                    MotionProfile::Stationary => MotionStatus::Stationary,
                    _ => MotionStatus::Dynamic,
                };
                out.push(TrackRecord {
                    frame: f as FrameId,
                    track_id: k as u32,
                    class: spec.class,
                    x: b.translation[0],
                    y: b.translation[1],
                    z: b.translation[2],
                    yaw: b.yaw(),
                    vx: v[0],
                    vy: v[1],
                    vz: v[2],
                    status,
                    supplementary: false,
                });
            }
        }
        out
    }

    /// Writes `ego.txt`, `objects.jsonl` and `meta.json` into `dir`.
    pub fn write_ground_truth(&self, dir: &Path) -> Result<(), SceneError> {
        std::fs::create_dir_all(dir).map_err(|source| SceneError::Read {
            path: dir.display().to_string(),
            source,
        })?;
        write_poses(&dir.join("ego.txt"), &self.ego)?;
        write_tracks(&dir.join("objects.jsonl"), &self.ground_truth_records())?;
        let meta = GroundTruthMeta {
            frame_period: self.spec.frame_period,
            frame_count: self.spec.frame_count,
            seed: self.seed,
        };
        let path = dir.join("meta.json");
        std::fs::write(&path, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(
            |source| SceneError::Read {
                path: path.display().to_string(),
                source,
            },
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMeta {
    pub frame_period: f64,
    pub frame_count: usize,
    pub seed: u64,
}

/// Corrupts the scene into a measurement stream.
///
/// Odometry and loop measurements are the true relative poses right-multiplied
/// by `exp` of Gaussian twist noise. Each object that exists, lies within the
/// sensing radius, is not occluded and survives dropout yields one detection
/// with Gaussian position and yaw noise. Random draws happen in a fixed order
/// regardless of which detections are kept, so streams are reproducible.
pub fn emit_stream(scene: &Scene) -> EmittedStream {
    let spec = &scene.spec;
    let nz = &spec.noise;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let mut frames = Vec::with_capacity(spec.frame_count);
    let mut labels = Vec::with_capacity(spec.frame_count);
    for f in 0..spec.frame_count {
        let odometry = if f == 0 {
            Pose::identity()
        } else {
            let rel = scene.ego[f - 1].between(&scene.ego[f]);
            rel.compose(&Pose::exp(&twist_noise(&mut rng, nz.odom_rot_sigma, nz.odom_trans_sigma)))
        };

        let mut detections = Vec::new();
        let mut frame_labels = Vec::new();
        for (k, obj) in spec.objects.iter().enumerate() {
            let Some(local) = scene.visible_local(k, f) else {
                continue;
            };
            let dropped = rng.random::<f64>() < nz.dropout_prob;
            let noise = [
                gaussian(&mut rng, nz.det_pos_sigma),
                gaussian(&mut rng, nz.det_pos_sigma),
                gaussian(&mut rng, nz.det_pos_sigma),
                gaussian(&mut rng, nz.det_yaw_sigma),
            ];
            if dropped || scene.occluded(k, f) {
                continue;
            }
            let t = local.translation;
            detections.push(StreamDetection {
                x: t[0] + noise[0],
                y: t[1] + noise[1],
                z: t[2] + noise[2],
                yaw: wrap_angle(local.yaw() + noise[3]),
                class: obj.class,
            });
            frame_labels.push(k);
        }

        let mut loops = Vec::new();
        for l in spec.loop_pairs.iter().filter(|l| l.frame_new as usize == f) {
            let rel = scene.ego[l.frame_old as usize].between(&scene.ego[f]);
            let meas = rel.compose(&Pose::exp(&twist_noise(&mut rng, nz.odom_rot_sigma, nz.odom_trans_sigma)));
            loops.push(StreamLoop {
                frame_old: l.frame_old,
                t_meas: meas.to_row_major_3x4(),
            });
        }

        frames.push(FrameRecord {
            frame: f as FrameId,
            odometry: odometry.to_row_major_3x4(),
            detections,
            loops,
        });
        labels.push(frame_labels);
    }
    EmittedStream {
        stream: FrameStream {
            header: StreamHeader {
                frame_period: spec.frame_period,
                frame_count: spec.frame_count,
            },
            frames,
        },
        labels,
    }
}
