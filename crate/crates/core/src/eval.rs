//! Trajectory and tracking metrics.
//!
//! Object matching uses center distance: in each frame, estimated and
//! ground-truth records of the same class closer than a threshold are paired
//! greedily, closest first, with ties broken by track id and then
//! ground-truth id. Records are sorted by `(frame, id)` before use, so results
//! do not depend on input order.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::TimingSummary;
use crate::factor_graph::{FrameId, TrackId};
use crate::geometry::Pose;
use crate::io::{read_poses, read_tracks, IoError, TrackRecord};
use crate::simulator::GroundTruthMeta;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory lengths differ: {est} estimated vs {gt} ground-truth poses")]
    LengthMismatch { est: usize, gt: usize },
    #[error("ground truth contains no objects")]
    EmptyGroundTruth,
    #[error("track spans {0} frame(s); at least 2 are needed")]
    TooShort(usize),
    #[error("distance threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("malformed {path}: {message}")]
    Malformed { path: String, message: String },
}

const KMH_PER_MS: f64 = 3.6;

/// Translation RMSE (m) and rotation RMSE (rad) between two trajectories
/// sharing the frame-0 origin; no alignment is applied.
pub fn ate_rmse(est: &[Pose], gt: &[Pose]) -> Result<(f64, f64), EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if est.is_empty() {
        return Ok((0.0, 0.0));
    }
    let n = est.len() as f64;
    let mut t2 = 0.0;
    let mut r2 = 0.0;
    for (e, g) in est.iter().zip(gt) {
        t2 += (e.translation - g.translation).norm_squared();
        let angle = crate::geometry::rotation_angle(&(g.rotation.transpose() * e.rotation));
        r2 += angle * angle;
    }
    Ok(((t2 / n).sqrt(), (r2 / n).sqrt()))
}

fn check_threshold(t: f64) -> Result<(), EvalError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(EvalError::InvalidThreshold(t))
    }
}

fn sorted(records: &[TrackRecord]) -> Vec<&TrackRecord> {
    let mut v: Vec<&TrackRecord> = records.iter().collect();
    v.sort_by_key(|r| (r.frame, r.track_id, r.supplementary));
    v
}

fn by_frame<'a>(records: &[&'a TrackRecord]) -> BTreeMap<FrameId, Vec<&'a TrackRecord>> {
    let mut m: BTreeMap<FrameId, Vec<&TrackRecord>> = BTreeMap::new();
    for r in records {
        m.entry(r.frame).or_default().push(r);
    }
    m
}

/// Greedy nearest-center pairs `(est index, gt index)` within one frame.
fn match_frame(est: &[&TrackRecord], gt: &[&TrackRecord], thresh: f64) -> Vec<(usize, usize)> {
    let mut cands = Vec::new();
    for (i, e) in est.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            if e.class != g.class {
                continue;
            }
            let d = (e.position() - g.position()).norm();
            if d <= thresh {
                cands.push((d, e.track_id, g.track_id, i, j));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut est_used = vec![false; est.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut out = Vec::new();
    for (_, _, _, i, j) in cands {
        if !est_used[i] && !gt_used[j] {
            est_used[i] = true;
            gt_used[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Matched `(frame, track id, gt id)` triples plus unmatched counts.
struct Matching {
    pairs: Vec<(FrameId, TrackId, TrackId)>,
    est_total: usize,
    gt_total: usize,
}

fn match_all(est: &[TrackRecord], gt: &[TrackRecord], thresh: f64) -> Matching {
    let est_sorted = sorted(est);
    let gt_sorted = sorted(gt);
    let est_frames = by_frame(&est_sorted);
    let gt_frames = by_frame(&gt_sorted);
    let mut pairs = Vec::new();
    for (frame, g) in &gt_frames {
        let Some(e) = est_frames.get(frame) else {
            continue;
        };
        for (i, j) in match_frame(e, g, thresh) {
            pairs.push((*frame, e[i].track_id, g[j].track_id));
        }
    }
    Matching {
        pairs,
        est_total: est.len(),
        gt_total: gt.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    // An empty denominator means no mistakes of that kind were possible.
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision and recall of `est` against `gt` under greedy center matching.
pub fn tracking_pr(est: &[TrackRecord], gt: &[TrackRecord], dist_thresh: f64) -> Result<PrecisionRecall, EvalError> {
    check_threshold(dist_thresh)?;
    let m = match_all(est, gt, dist_thresh);
    let tp = m.pairs.len();
    Ok(PrecisionRecall {
        precision: ratio(tp, m.est_total),
        recall: ratio(tp, m.gt_total),
        true_positives: tp,
        false_positives: m.est_total - tp,
        false_negatives: m.gt_total - tp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearMot {
    pub mota: f64,
    pub ground_truth: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
    pub id_switches: usize,
}

/// CLEAR-MOT accuracy with its error counts. An identity switch is counted
/// whenever a ground-truth object is matched to a different track than at its
/// previous matched frame.
pub fn clear_mot(est: &[TrackRecord], gt: &[TrackRecord], dist_thresh: f64) -> Result<ClearMot, EvalError> {
    check_threshold(dist_thresh)?;
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let m = match_all(est, gt, dist_thresh);
    let mut last: HashMap<TrackId, TrackId> = HashMap::new();
    let mut idsw = 0;
    for &(_, track, gt_id) in &m.pairs {
        if let Some(prev) = last.insert(gt_id, track) {
            if prev != track {
                idsw += 1;
            }
        }
    }
    let tp = m.pairs.len();
    let fn_ = m.gt_total - tp;
    let fp = m.est_total - tp;
    Ok(ClearMot {
        mota: 1.0 - (fn_ + fp + idsw) as f64 / m.gt_total as f64,
        ground_truth: m.gt_total,
        false_negatives: fn_,
        false_positives: fp,
        id_switches: idsw,
    })
}

pub fn mota(est: &[TrackRecord], gt: &[TrackRecord], dist_thresh: f64) -> Result<f64, EvalError> {
    clear_mot(est, gt, dist_thresh).map(|c| c.mota)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMetrics {
    pub gt_id: TrackId,
    pub track_id: TrackId,
    pub frames: usize,
    pub trajectory_rmse: f64,
    pub v_true_kmh: f64,
    pub v_estimate_kmh: f64,
}

fn polyline_length(points: &[Vector3<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Speeds and position error of one estimated track against one object over
/// the frames they were matched in. Speeds are path length over elapsed time,
/// converted to km/h.
pub fn object_metrics(
    est: &[TrackRecord],
    gt: &[TrackRecord],
    frame_period: f64,
) -> Result<ObjectMetrics, EvalError> {
    let est = sorted(est);
    let gt = sorted(gt);
    let gt_at: BTreeMap<FrameId, &TrackRecord> = gt.iter().map(|r| (r.frame, *r)).collect();
    let common: Vec<(&TrackRecord, &TrackRecord)> =
        est.iter().filter_map(|e| gt_at.get(&e.frame).map(|g| (*e, *g))).collect();
    if common.len() < 2 {
        return Err(EvalError::TooShort(common.len()));
    }
    let (first, last) = (common[0].0.frame, common[common.len() - 1].0.frame);
    let seconds = (last - first) as f64 * frame_period;
    let within = |rs: &[&TrackRecord]| -> Vec<Vector3<f64>> {
        rs.iter()
            .filter(|r| (first..=last).contains(&r.frame))
            .map(|r| r.position())
            .collect()
    };
    let sq: f64 = common.iter().map(|(e, g)| (e.position() - g.position()).norm_squared()).sum();
    Ok(ObjectMetrics {
        gt_id: common[0].1.track_id,
        track_id: common[0].0.track_id,
        frames: common.len(),
        trajectory_rmse: (sq / common.len() as f64).sqrt(),
        v_true_kmh: polyline_length(&within(&gt)) / seconds * KMH_PER_MS,
        v_estimate_kmh: polyline_length(&within(&est)) / seconds * KMH_PER_MS,
    })
}

/// Per-object metrics, pairing each ground-truth object with the track it was
/// matched to most often (lowest track id on ties). Objects matched in fewer
/// than two frames are skipped.
pub fn velocity_metrics(
    est: &[TrackRecord],
    gt: &[TrackRecord],
    frame_period: f64,
    dist_thresh: f64,
) -> Result<Vec<ObjectMetrics>, EvalError> {
    check_threshold(dist_thresh)?;
    let m = match_all(est, gt, dist_thresh);
    let mut votes: BTreeMap<TrackId, BTreeMap<TrackId, Vec<FrameId>>> = BTreeMap::new();
    for &(frame, track, gt_id) in &m.pairs {
        votes.entry(gt_id).or_default().entry(track).or_default().push(frame);
    }
    let mut out = Vec::new();
    for (gt_id, tracks) in votes {
        let (track, frames) = tracks
            .iter()
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(a.0)))
            .expect("non-empty");
        let est_recs: Vec<TrackRecord> = est
            .iter()
            .filter(|r| r.track_id == *track && frames.contains(&r.frame))
            .cloned()
            .collect();
        let gt_recs: Vec<TrackRecord> = gt.iter().filter(|r| r.track_id == gt_id).cloned().collect();
        match object_metrics(&est_recs, &gt_recs, frame_period) {
            Ok(om) => out.push(om),
            Err(EvalError::TooShort(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ate_trans_rmse: f64,
    pub ate_rot_rmse: f64,
    /// Detector-stage scores: estimated records excluding supplementary ones.
    pub det_precision: f64,
    pub det_recall: f64,
    /// Tracker-stage scores over all estimated records.
    pub trk_precision: f64,
    pub trk_recall: f64,
    /// `None` when the ground truth has no objects.
    pub mota: Option<f64>,
    pub false_negatives: usize,
    pub false_positives: usize,
    pub id_switches: usize,
    pub objects: Vec<ObjectMetrics>,
    pub runtimes_ms: BTreeMap<String, f64>,
}

pub fn evaluate(
    est_ego: &[Pose],
    gt_ego: &[Pose],
    est: &[TrackRecord],
    gt: &[TrackRecord],
    dist_thresh: f64,
    frame_period: f64,
) -> Result<MetricsReport, EvalError> {
    check_threshold(dist_thresh)?;
    let (ate_t, ate_r) = ate_rmse(est_ego, gt_ego)?;
    let detections: Vec<TrackRecord> = est.iter().filter(|r| !r.supplementary).cloned().collect();
    let det = tracking_pr(&detections, gt, dist_thresh)?;
    let trk = tracking_pr(est, gt, dist_thresh)?;
    let mot = match clear_mot(est, gt, dist_thresh) {
        Ok(c) => Some(c),
        Err(EvalError::EmptyGroundTruth) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        ate_trans_rmse: ate_t,
        ate_rot_rmse: ate_r,
        det_precision: det.precision,
        det_recall: det.recall,
        trk_precision: trk.precision,
        trk_recall: trk.recall,
        mota: mot.map(|c| c.mota),
        false_negatives: mot.map_or(0, |c| c.false_negatives),
        false_positives: mot.map_or(trk.false_positives, |c| c.false_positives),
        id_switches: mot.map_or(0, |c| c.id_switches),
        objects: velocity_metrics(est, gt, frame_period, dist_thresh)?,
        runtimes_ms: BTreeMap::new(),
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>, EvalError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map(Some).map_err(|e| EvalError::Malformed {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Evaluates a run directory (`ego.txt`, `tracks.jsonl`, optional
/// `timings.json`) against a ground-truth directory (`ego.txt`,
/// `objects.jsonl`, optional `meta.json`).
pub fn evaluate_dirs(est_dir: &Path, gt_dir: &Path, dist_thresh: f64) -> Result<MetricsReport, EvalError> {
    let est_ego = read_poses(&est_dir.join("ego.txt"))?;
    let gt_ego = read_poses(&gt_dir.join("ego.txt"))?;
    let est = read_tracks(&est_dir.join("tracks.jsonl"))?;
    let gt = read_tracks(&gt_dir.join("objects.jsonl"))?;
    let meta: Option<GroundTruthMeta> = read_json(&gt_dir.join("meta.json"))?;
    let period = meta.map_or(0.1, |m| m.frame_period);
    let mut report = evaluate(&est_ego, &gt_ego, &est, &gt, dist_thresh, period)?;
    if let Some(t) = read_json::<TimingSummary>(&est_dir.join("timings.json"))? {
        let r = &mut report.runtimes_ms;
        r.insert("association".into(), t.mean.association_ms);
        r.insert("optimization".into(), t.mean.optimization_ms);
        r.insert("marginalization".into(), t.mean.marginalization_ms);
        r.insert("loop".into(), t.mean.loop_ms);
        r.insert("backend_median".into(), t.backend_ms_median);
    }
    Ok(report)
}
