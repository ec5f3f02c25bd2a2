//! Per-frame pipeline: odometry, association, sliding-window collaborative
//! optimization, marginalization and loop closing.
//!
//! The window graph holds the last K frames. For every frame it contains the
//! ego pose; for every initialized track observed in that frame an object pose
//! (one shared node while a track is stationary) with an observation factor;
//! for tracks whose pose was also added in the previous frame a motion node
//! and motion factor; and for tracks with motion nodes in both frames a
//! constant-velocity factor. A separate global pose graph keeps every ego pose
//! with odometry and loop factors and is optimized only on loop events.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{
    classify_motion_status, solve_assignment, update_tracks, AssociationParams, ClassLabel, Detection,
    MotionStatus, ScoreMatrix, Track, TrackObservation,
};
use crate::config::{ConfigError, RunConfig};
use crate::factor_graph::{
    marginalize, optimize, Factor, FrameId, Graph, GraphError, OptimReport, TrackId, VariableId, VariableKind,
};
use crate::geometry::{GeometryError, Pose};
use crate::io::{write_poses, write_tracks, FrameRecord, FrameStream, IoError, TrackRecord};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("frame {frame} arrived after frame {last}")]
    OutOfOrderFrame { frame: FrameId, last: FrameId },
    #[error("frame {0} has not been ingested")]
    UnknownFrame(FrameId),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl BackendError {
    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, BackendError::Graph(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopEvent {
    pub frame_old: FrameId,
    /// Measured pose of the current frame relative to `frame_old`.
    pub measurement: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub frame: FrameId,
    /// Relative pose from the previous frame; ignored for the first frame.
    pub odometry: Pose,
    pub detections: Vec<Detection>,
    pub loops: Vec<LoopEvent>,
}

impl FrameInput {
    pub fn from_record(rec: &FrameRecord) -> Result<Self, GeometryError> {
        let loops = rec
            .loops
            .iter()
            .map(|l| {
                Ok(LoopEvent {
                    frame_old: l.frame_old,
                    measurement: Pose::from_row_major_3x4(&l.t_meas)?,
                })
            })
            .collect::<Result<_, GeometryError>>()?;
        Ok(Self {
            frame: rec.frame,
            odometry: rec.odometry_pose()?,
            detections: rec.detections(),
            loops,
        })
    }
}

/// Track-id sets of one frame, nested as
/// `constant ⊆ associated ⊆ initialized ⊆ observed`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrameSets {
    /// Tracks with a (real or supplementary) detection this frame.
    pub observed: BTreeSet<TrackId>,
    /// Observed tracks whose pose is in the graph.
    pub initialized: BTreeSet<TrackId>,
    /// Tracks with a motion node ending at this frame.
    pub associated: BTreeSet<TrackId>,
    /// Tracks with a constant-velocity factor ending at this frame.
    pub constant: BTreeSet<TrackId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub association_ms: f64,
    pub optimization_ms: f64,
    pub marginalization_ms: f64,
    pub loop_ms: f64,
}

impl StageTimings {
    /// Association plus window optimization and sliding.
    pub fn backend_ms(&self) -> f64 {
        self.association_ms + self.optimization_ms + self.marginalization_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSummary {
    pub frame: FrameId,
    pub observations: Vec<TrackObservation>,
    pub supplementary: usize,
    pub terminated: Vec<TrackId>,
    pub window_report: OptimReport,
    pub loop_reports: Vec<OptimReport>,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
struct ObservationEntry {
    local: Pose,
    var: Option<VariableId>,
    record: usize,
}

pub struct SlotBackend {
    config: RunConfig,
    assoc: AssociationParams,
    graph: Graph,
    window: VecDeque<FrameId>,
    sets: BTreeMap<FrameId, FrameSets>,
    entries: BTreeMap<(FrameId, TrackId), ObservationEntry>,
    tracks: Vec<Track>,
    next_track_id: TrackId,
    global: Graph,
    global_reports: Vec<OptimReport>,
    frames: Vec<FrameId>,
    records: Vec<TrackRecord>,
    history: Option<Graph>,
}

impl SlotBackend {
    pub fn new(config: RunConfig) -> Result<Self, BackendError> {
        config.validate()?;
        Ok(Self {
            assoc: config.association(),
            config,
            graph: Graph::new(),
            window: VecDeque::new(),
            sets: BTreeMap::new(),
            entries: BTreeMap::new(),
            tracks: Vec::new(),
            next_track_id: 0,
            global: Graph::new(),
            global_reports: Vec::new(),
            frames: Vec::new(),
            records: Vec::new(),
            history: None,
        })
    }

    /// Keeps a copy of every variable and factor ever added to the window,
    /// without marginalization, for comparison against batch optimization.
    /// Must be called before the first frame.
    pub fn record_history(&mut self) {
        if self.frames.is_empty() {
            self.history = Some(Graph::new());
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn window_graph(&self) -> &Graph {
        &self.graph
    }

    pub fn global_graph(&self) -> &Graph {
        &self.global
    }

    pub fn full_history(&self) -> Option<&Graph> {
        self.history.as_ref()
    }

    pub fn window_frames(&self) -> impl Iterator<Item = FrameId> + '_ {
        self.window.iter().copied()
    }

    pub fn frame_sets(&self, frame: FrameId) -> Option<&FrameSets> {
        self.sets.get(&frame)
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Reports of every global optimization run so far.
    pub fn global_reports(&self) -> &[OptimReport] {
        &self.global_reports
    }

    pub fn ego_estimate(&self, frame: FrameId) -> Option<Pose> {
        let id = VariableId::ego(frame);
        self.graph.value(&id).or_else(|| self.global.value(&id)).copied()
    }

    fn add_variable(&mut self, id: VariableId, value: Pose) -> Result<(), GraphError> {
        if let Some(h) = &mut self.history {
            h.add_variable(id, value)?;
        }
        self.graph.add_variable(id, value)
    }

    fn add_factor(&mut self, f: Factor) -> Result<(), GraphError> {
        if let Some(h) = &mut self.history {
            h.add_factor(f.clone())?;
        }
        self.graph.add_factor(f)
    }

    pub fn ingest_frame(&mut self, input: FrameInput) -> Result<FrameSummary, BackendError> {
        let t = input.frame;
        let prev = self.frames.last().copied();
        if let Some(last) = prev {
            if t <= last {
                return Err(BackendError::OutOfOrderFrame { frame: t, last });
            }
        }
        let info = self.config.information.clone();

        let ego = VariableId::ego(t);
        let x_t = match prev {
            None => Pose::identity(),
            Some(p) => self.ego_estimate(p).expect("previous frame known").compose(&input.odometry),
        };
        self.add_variable(ego, x_t)?;
        self.global.add_variable(ego, x_t)?;
        match prev {
            None => {
                let anchor = Factor::anchor(ego, Pose::identity(), info.anchor());
                self.global.add_factor(anchor.clone())?;
                self.add_factor(anchor)?;
            }
            Some(p) => {
                let odo = Factor::odometry(VariableId::ego(p), ego, input.odometry, info.odometry());
                self.global.add_factor(odo.clone())?;
                self.add_factor(odo)?;
            }
        }
        self.frames.push(t);
        self.window.push_back(t);

        let clock = Instant::now();
        let mut detections = if self.config.use_objects { input.detections } else { Vec::new() };
        for d in &mut detections {
            d.frame = t;
            d.supplementary = false;
            d.assign_world_pose(&x_t);
        }
        let scores = ScoreMatrix::build(&self.tracks, &detections, t, &self.assoc);
        let pairs = solve_assignment(&scores);
        let outcome = update_tracks(
            &mut self.tracks,
            &detections,
            &pairs,
            t,
            &x_t,
            &self.assoc,
            &mut self.next_track_id,
        );
        let association_ms = ms_since(clock);

        let clock = Instant::now();
        let sets = self.build_window_graph(t, prev, &outcome.observations)?;
        self.sets.insert(t, sets);
        let window_report = optimize(&mut self.graph, &self.config.solver)?;
        self.refresh_tracks();
        self.classify_tracks();
        self.refresh_records();
        let optimization_ms = ms_since(clock);

        let clock = Instant::now();
        while self.window.len() > self.config.window_size {
            self.slide_window()?;
        }
        let marginalization_ms = ms_since(clock);

        let clock = Instant::now();
        let mut loop_reports = Vec::new();
        for l in &input.loops {
            if let Some(r) = self.handle_loop(l.frame_old, t, &l.measurement)? {
                loop_reports.push(r);
            }
        }
        let loop_ms = ms_since(clock);

        Ok(FrameSummary {
            frame: t,
            supplementary: outcome.supplementary.len(),
            terminated: outcome.terminated,
            observations: outcome.observations,
            window_report,
            loop_reports,
            timings: StageTimings {
                association_ms,
                optimization_ms,
                marginalization_ms,
                loop_ms,
            },
        })
    }

    /// Adds object variables and factors for this frame's observations.
    fn build_window_graph(
        &mut self,
        t: FrameId,
        prev: Option<FrameId>,
        observations: &[TrackObservation],
    ) -> Result<FrameSets, BackendError> {
        let info = self.config.information.clone();
        let mut sets = FrameSets::default();
        for obs in observations {
            let id = obs.track;
            sets.observed.insert(id);
            let track = self.tracks.iter().find(|tr| tr.id == id).expect("observed tracks survive");
            let (initialized, status, class) = (track.initialized, track.motion_status, track.class_label);
            let world = obs.detection.world_pose.expect("world pose assigned");
            let local = obs.detection.local_pose();
            let record = self.records.len();
            self.records.push(record_from(t, id, class, &world, status, obs.detection.supplementary));

            let mut var = None;
            if initialized {
                sets.initialized.insert(id);
                let prev_var = prev.and_then(|p| self.entries.get(&(p, id))).and_then(|e| e.var);
                let pose_var = match prev_var {
                    Some(pv) if status == MotionStatus::Stationary && self.graph.contains(&pv) => {
                        self.collapse_track(id, pv)?;
                        pv
                    }
                    _ => {
                        let v = VariableId::object_pose(id, t);
                        self.add_variable(v, world)?;
                        v
                    }
                };
                let mut obs_info = info.observation();
                if obs.detection.supplementary {
                    obs_info *= info.supplementary_scale;
                }
                self.add_factor(Factor::observation(VariableId::ego(t), pose_var, local, obs_info))?;

                if let Some(pv) = prev_var.filter(|pv| *pv != pose_var && self.graph.contains(pv)) {
                    sets.associated.insert(id);
                    let c = VariableId::object_motion(id, t);
                    let b_prev = *self.graph.value(&pv).expect("present");
                    let b_cur = *self.graph.value(&pose_var).expect("present");
                    self.add_variable(c, b_prev.between(&b_cur))?;
                    self.add_factor(Factor::motion(pv, pose_var, c, info.motion()))?;
                    let c_prev = prev.map(|p| VariableId::object_motion(id, p));
                    if let Some(cp) = c_prev.filter(|cp| self.graph.contains(cp)) {
                        sets.constant.insert(id);
                        self.add_factor(Factor::const_velocity(cp, c, info.const_velocity()))?;
                    }
                }
                var = Some(pose_var);
            }
            self.entries.insert((t, id), ObservationEntry { local, var, record });
        }
        Ok(sets)
    }

    /// Marginalizes every pose and motion node of `track` except `keep`, so a
    /// stationary track is represented by a single pose.
    fn collapse_track(&mut self, track: TrackId, keep: VariableId) -> Result<(), GraphError> {
        let victims: BTreeSet<VariableId> = self
            .graph
            .values()
            .keys()
            .filter(|v| v.object == Some(track) && **v != keep)
            .copied()
            .collect();
        if !victims.is_empty() {
            marginalize(&mut self.graph, &victims)?;
        }
        Ok(())
    }

    /// Marginalizes the oldest frame: its ego pose, its motion nodes, and the
    /// object poses no remaining frame refers to.
    fn slide_window(&mut self) -> Result<(), BackendError> {
        let old = self.window.pop_front().expect("window not empty");
        let ego = VariableId::ego(old);
        let mut victims = BTreeSet::from([ego]);
        let still_used: BTreeSet<VariableId> = self
            .entries
            .range((old + 1, 0)..)
            .filter_map(|(_, e)| e.var)
            .collect();
        for (_, e) in self.entries.range((old, 0)..=(old, TrackId::MAX)) {
            if let Some(v) = e.var {
                if self.graph.contains(&v) && !still_used.contains(&v) {
                    victims.insert(v);
                }
            }
        }
        victims.extend(
            self.graph
                .values()
                .keys()
                .filter(|v| v.kind == VariableKind::ObjectMotion && v.frame == old),
        );
        let x_old = *self.graph.value(&ego).expect("window frame present");
        self.global.set_value(&ego, x_old)?;
        marginalize(&mut self.graph, &victims)?;
        self.sets.remove(&old);
        Ok(())
    }

    /// Adds a loop factor to the global pose graph, optimizes it, and moves
    /// the window rigidly onto the corrected pose of its newest frame.
    /// Returns `None` when loop closing is disabled.
    pub fn handle_loop(
        &mut self,
        frame_old: FrameId,
        frame_new: FrameId,
        measurement: &Pose,
    ) -> Result<Option<OptimReport>, BackendError> {
        for f in [frame_old, frame_new] {
            if !self.global.contains(&VariableId::ego(f)) {
                return Err(BackendError::UnknownFrame(f));
            }
        }
        if !self.config.use_loop {
            return Ok(None);
        }
        for &f in &self.window {
            let id = VariableId::ego(f);
            self.global.set_value(&id, *self.graph.value(&id).expect("window frame present"))?;
        }
        self.global.add_factor(Factor::loop_closure(
            VariableId::ego(frame_old),
            VariableId::ego(frame_new),
            *measurement,
            self.config.information.loop_closure(),
        ))?;
        let report = optimize(&mut self.global, &self.config.solver)?;

        let newest = VariableId::ego(*self.window.back().expect("window not empty"));
        let delta = self.global.value(&newest).expect("present").compose(
            &self.graph.value(&newest).expect("present").inverse(),
        );
        for (id, v) in self.graph.values_mut() {
            if id.kind != VariableKind::ObjectMotion {
                *v = delta.compose(v);
            }
        }
        for f in self.graph.factors_mut() {
            if let Some(prior) = &mut f.prior {
                for (id, lp) in f.variables.iter().zip(prior.linearization.iter_mut()) {
                    if id.kind != VariableKind::ObjectMotion {
                        *lp = delta.compose(lp);
                    }
                }
            }
        }
        for track in &mut self.tracks {
            for p in &mut track.history {
                p.world_pose = delta.compose(&p.world_pose);
            }
        }
        self.refresh_tracks();
        self.refresh_records();
        self.global_reports.push(report.clone());
        Ok(Some(report))
    }

    /// Replaces track history positions inside the window by their current
    /// estimates and refits the prediction polynomials.
    fn refresh_tracks(&mut self) {
        for track in &mut self.tracks {
            for p in &mut track.history {
                let Some(e) = self.entries.get(&(p.frame, track.id)) else {
                    continue;
                };
                match e.var {
                    Some(v) if v.frame == p.frame && self.graph.contains(&v) => {
                        p.world_pose = *self.graph.value(&v).expect("present");
                    }
                    Some(v) if v.frame == p.frame => {}
                    _ => {
                        if let Some(x) = self.graph.value(&VariableId::ego(p.frame)) {
                            p.world_pose = x.compose(&e.local);
                        }
                    }
                }
            }
            track.refit();
        }
    }

    fn classify_tracks(&mut self) {
        let dt = self.config.frame_period;
        for track in &mut self.tracks {
            if !track.initialized {
                continue;
            }
            let span = (track.len() - 1).min(5);
            let motions: Vec<Pose> = track
                .history
                .iter()
                .skip(track.len() - span)
                .filter_map(|p| self.graph.value(&VariableId::object_motion(track.id, p.frame)).copied())
                .collect();
            track.motion_status = classify_motion_status(track, &motions, dt, &self.assoc);
        }
    }

    /// Rewrites the output records of frames still in the window.
    fn refresh_records(&mut self) {
        let dt = self.config.frame_period;
        for &f in &self.window {
            let Some(x) = self.graph.value(&VariableId::ego(f)) else {
                continue;
            };
            for (&(_, id), e) in self.entries.range((f, 0)..=(f, TrackId::MAX)) {
                let (pose, velocity) = match e.var {
                    Some(v) => match self.graph.value(&v) {
                        Some(b) => {
                            let vel = self
                                .graph
                                .value(&VariableId::object_motion(id, f))
                                .and_then(|c| c.log().ok())
                                .map(|tw| [tw[3] / dt, tw[4] / dt, tw[5] / dt])
                                .unwrap_or([0.0; 3]);
                            (*b, vel)
                        }
                        None => continue,
                    },
                    None => (x.compose(&e.local), [0.0; 3]),
                };
                let rec = &mut self.records[e.record];
                set_pose(rec, &pose);
                [rec.vx, rec.vy, rec.vz] = velocity;
                if let Some(tr) = self.tracks.iter().find(|tr| tr.id == id) {
                    rec.status = tr.motion_status;
                }
            }
        }
    }

    /// Ego poses of every ingested frame, in order: window estimates for
    /// frames still in the window, global-graph estimates otherwise.
    pub fn ego_trajectory(&self) -> Vec<Pose> {
        self.frames
            .iter()
            .map(|f| self.ego_estimate(*f).expect("ingested frame"))
            .collect()
    }

    /// One record per track observation, in ingestion order.
    pub fn track_records(&self) -> &[TrackRecord] {
        &self.records
    }

    pub fn export_state(&self) -> (Vec<Pose>, Vec<TrackRecord>) {
        (self.ego_trajectory(), self.records.clone())
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn set_pose(rec: &mut TrackRecord, pose: &Pose) {
    rec.x = pose.translation[0];
    rec.y = pose.translation[1];
    rec.z = pose.translation[2];
    rec.yaw = pose.yaw();
}

fn record_from(
    frame: FrameId,
    id: TrackId,
    class: ClassLabel,
    pose: &Pose,
    status: MotionStatus,
    supplementary: bool,
) -> TrackRecord {
    let mut rec = TrackRecord {
        frame,
        track_id: id,
        class,
        x: 0.0,
        y: 0.0,
        z: 0.0,
        yaw: 0.0,
        vx: 0.0,
        vy: 0.0,
        vz: 0.0,
        status,
        supplementary,
    };
    set_pose(&mut rec, pose);
    rec
}

/// Mean stage timings over a run plus the median per-frame back-end time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub frames: usize,
    pub mean: StageTimings,
    pub backend_ms_median: f64,
}

impl TimingSummary {
    pub fn from_frames(timings: &[StageTimings]) -> Self {
        let n = timings.len();
        if n == 0 {
            return Self::default();
        }
        let mean = |f: fn(&StageTimings) -> f64| timings.iter().map(f).sum::<f64>() / n as f64;
        let mut backend: Vec<f64> = timings.iter().map(StageTimings::backend_ms).collect();
        backend.sort_by(f64::total_cmp);
        Self {
            frames: n,
            mean: StageTimings {
                association_ms: mean(|t| t.association_ms),
                optimization_ms: mean(|t| t.optimization_ms),
                marginalization_ms: mean(|t| t.marginalization_ms),
                loop_ms: mean(|t| t.loop_ms),
            },
            backend_ms_median: median_sorted(&backend),
        }
    }
}

pub(crate) fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ego: Vec<Pose>,
    pub tracks: Vec<TrackRecord>,
    pub timings: TimingSummary,
}

impl RunOutput {
    /// Writes `ego.txt`, `tracks.jsonl` and `timings.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), IoError> {
        let io_err = |source| IoError::File {
            path: dir.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io_err)?;
        write_poses(&dir.join("ego.txt"), &self.ego)?;
        write_tracks(&dir.join("tracks.jsonl"), &self.tracks)?;
        let json = serde_json::to_string_pretty(&self.timings).expect("timings serialize");
        std::fs::write(dir.join("timings.json"), json).map_err(io_err)
    }
}

/// Runs a whole stream through a fresh back-end. The stream header's frame
/// period overrides the configured one.
pub fn run_stream(stream: &FrameStream, mut config: RunConfig) -> Result<RunOutput, BackendError> {
    config.frame_period = stream.header.frame_period;
    let mut backend = SlotBackend::new(config)?;
    let mut timings = Vec::with_capacity(stream.frames.len());
    for rec in &stream.frames {
        let summary = backend.ingest_frame(FrameInput::from_record(rec)?)?;
        timings.push(summary.timings);
    }
    let (ego, tracks) = backend.export_state();
    Ok(RunOutput {
        ego,
        tracks,
        timings: TimingSummary::from_frames(&timings),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn input(frame: FrameId, odo: Pose, dets: Vec<Detection>) -> FrameInput {
        FrameInput {
            frame,
            odometry: odo,
            detections: dets,
            loops: vec![],
        }
    }

    fn step() -> Pose {
        Pose::from_translation(1.0, 0.0, 0.0)
    }

    #[test]
    fn first_frame_is_anchored() {
        let mut b = SlotBackend::new(RunConfig::default()).unwrap();
        b.ingest_frame(input(0, Pose::from_translation(5.0, 0.0, 0.0), vec![])).unwrap();
        assert_eq!(b.window_graph().variable_count(), 1);
        assert_eq!(b.window_graph().factors().len(), 1);
        assert_eq!(b.ego_trajectory(), vec![Pose::identity()]);
        assert!(b.track_records().is_empty());
        let err = b.ingest_frame(input(0, step(), vec![])).unwrap_err();
        assert!(matches!(err, BackendError::OutOfOrderFrame { frame: 0, last: 0 }));
    }

    #[test]
    fn empty_backend_exports_nothing() {
        let b = SlotBackend::new(RunConfig::default()).unwrap();
        let (ego, tracks) = b.export_state();
        assert!(ego.is_empty() && tracks.is_empty());
    }

    #[test]
    fn pure_odometry_window_slides() {
        let mut b = SlotBackend::new(RunConfig::default()).unwrap();
        for f in 0..11 {
            b.ingest_frame(input(f, step(), vec![])).unwrap();
        }
        assert_eq!(b.window_frames().collect::<Vec<_>>(), (1..11).collect::<Vec<_>>());
        let priors: Vec<&Factor> = b
            .window_graph()
            .factors()
            .iter()
            .filter(|f| f.kind == crate::factor_graph::FactorKind::MarginalPrior)
            .collect();
        assert_eq!(priors.len(), 1);
        assert_eq!(priors[0].variables, vec![VariableId::ego(1)]);
        let ego = b.ego_trajectory();
        assert_eq!(ego.len(), 11);
        assert!((ego[10].translation - Vector3::new(10.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn object_sets_grow_with_track_age() {
        let mut b = SlotBackend::new(RunConfig::default()).unwrap();
        let det = |f: FrameId| {
            // Ego advances 1 m per frame, object 2 m per frame.
            let x = 10.0 + 2.0 * f as f64 - f as f64;
            vec![Detection::new(f, Vector3::new(x, 3.0, 0.0), 0.0, ClassLabel::Vehicle)]
        };
        for f in 0..9 {
            b.ingest_frame(input(f, step(), det(f))).unwrap();
            let s = b.frame_sets(f).unwrap();
            assert!(s.constant.is_subset(&s.associated));
            assert!(s.associated.is_subset(&s.initialized));
            assert!(s.initialized.is_subset(&s.observed));
            let sizes = (s.observed.len(), s.initialized.len(), s.associated.len(), s.constant.len());
            let want = match f {
                0..=4 => (1, 0, 0, 0),
                5 => (1, 1, 0, 0),
                6 => (1, 1, 1, 0),
                _ => (1, 1, 1, 1),
            };
            assert_eq!(sizes, want, "frame {f}");
        }
        let g = b.window_graph();
        assert!(g.contains(&VariableId::object_pose(0, 5)));
        assert!(!g.contains(&VariableId::object_motion(0, 5)));
        assert!(g.contains(&VariableId::object_motion(0, 6)));
        let recs = b.track_records();
        assert_eq!(recs.len(), 9);
        let last = recs.last().unwrap();
        assert!((last.x - 26.0).abs() < 1e-6 && (last.vx - 20.0).abs() < 1e-6);
        assert_eq!(last.status, MotionStatus::Dynamic);
    }

    #[test]
    fn stationary_track_keeps_one_pose_node() {
        let mut b = SlotBackend::new(RunConfig::default()).unwrap();
        for f in 0..25 {
            let dets = vec![Detection::new(f, Vector3::new(30.0 - f as f64, -4.0, 0.0), 0.3, ClassLabel::Cyclist)];
            b.ingest_frame(input(f, step(), dets)).unwrap();
            let poses = b
                .window_graph()
                .values()
                .keys()
                .filter(|v| v.kind == VariableKind::ObjectPose)
                .count();
            if b.tracks()[0].motion_status == MotionStatus::Stationary && f > 8 {
                assert_eq!(poses, 1, "frame {f}");
            }
        }
        assert_eq!(b.tracks()[0].motion_status, MotionStatus::Stationary);
        let last = b.track_records().last().unwrap();
        assert!((last.x - 30.0).abs() < 1e-6 && (last.y + 4.0).abs() < 1e-6);
    }

    #[test]
    fn loop_with_consistent_measurement_changes_nothing() {
        let mut b = SlotBackend::new(RunConfig::default()).unwrap();
        for f in 0..15 {
            b.ingest_frame(input(f, step(), vec![])).unwrap();
        }
        let before = b.ego_trajectory();
        let report = b
            .handle_loop(2, 14, &Pose::from_translation(12.0, 0.0, 0.0))
            .unwrap()
            .unwrap();
        assert!(report.final_objective < 1e-12);
        for (a, c) in before.iter().zip(b.ego_trajectory()) {
            assert!((a.translation - c.translation).norm() < 1e-9);
        }
        assert!(matches!(b.handle_loop(2, 40, &step()), Err(BackendError::UnknownFrame(40))));
    }
}
