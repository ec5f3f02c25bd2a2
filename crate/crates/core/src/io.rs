//! On-disk formats: the frame stream, KITTI-style pose files and track
//! record files.
//!
//! The frame stream is line-delimited JSON. Its first line is a header
//! `{"frame_period", "frame_count"}`; every following line is one frame with
//! its odometry, ego-frame detections and loop events. Poses are 12 floats,
//! the row-major `[R | t]` block.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{ClassLabel, Detection, MotionStatus};
use crate::factor_graph::{FrameId, TrackId};
use crate::geometry::{GeometryError, Pose};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("line {line}: {source}")]
    Pose {
        line: usize,
        source: GeometryError,
    },
}

impl IoError {
    fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.display().to_string(),
            source,
        }
    }

    fn format(line: usize, message: impl ToString) -> Self {
        IoError::Format {
            line,
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub frame_period: f64,
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamDetection {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub class: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamLoop {
    pub frame_old: FrameId,
    pub t_meas: [f64; 12],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: FrameId,
    pub odometry: [f64; 12],
    #[serde(default)]
    pub detections: Vec<StreamDetection>,
    #[serde(default)]
    pub loops: Vec<StreamLoop>,
}

impl FrameRecord {
    pub fn odometry_pose(&self) -> Result<Pose, GeometryError> {
        Pose::from_row_major_3x4(&self.odometry)
    }

    pub fn detections(&self) -> Vec<Detection> {
        self.detections
            .iter()
            .map(|d| Detection::new(self.frame, Vector3::new(d.x, d.y, d.z), d.yaw, d.class))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameStream {
    pub header: StreamHeader,
    pub frames: Vec<FrameRecord>,
}

pub fn write_stream(path: &Path, stream: &FrameStream) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| IoError::file(path, e))?);
    let mut put = |v: String| writeln!(w, "{v}").map_err(|e| IoError::file(path, e));
    put(serde_json::to_string(&stream.header).expect("header serializes"))?;
    for f in &stream.frames {
        put(serde_json::to_string(f).expect("frame serializes"))?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

pub fn read_stream(path: &Path) -> Result<FrameStream, IoError> {
    let reader = BufReader::new(File::open(path).map_err(|e| IoError::file(path, e))?);
    let mut header = None;
    let mut frames = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IoError::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: StreamHeader = serde_json::from_str(&line).map_err(|e| IoError::format(i + 1, e))?;
            if !(h.frame_period > 0.0 && h.frame_period.is_finite()) {
                return Err(IoError::format(i + 1, "frame_period must be positive"));
            }
            header = Some(h);
            continue;
        }
        let f: FrameRecord = serde_json::from_str(&line).map_err(|e| IoError::format(i + 1, e))?;
        f.odometry_pose().map_err(|source| IoError::Pose { line: i + 1, source })?;
        for l in &f.loops {
            Pose::from_row_major_3x4(&l.t_meas).map_err(|source| IoError::Pose { line: i + 1, source })?;
        }
        frames.push(f);
    }
    let header = header.ok_or_else(|| IoError::format(0, "missing stream header"))?;
    Ok(FrameStream { header, frames })
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| IoError::file(path, e))?);
    for p in poses {
        let row: Vec<String> = p.to_row_major_3x4().iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", row.join(" ")).map_err(|e| IoError::file(path, e))?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::format(i + 1, e))?;
        let arr: [f64; 12] = vals
            .try_into()
            .map_err(|v: Vec<f64>| IoError::format(i + 1, format!("expected 12 values, got {}", v.len())))?;
        out.push(Pose::from_row_major_3x4(&arr).map_err(|source| IoError::Pose { line: i + 1, source })?);
    }
    Ok(out)
}

/// One object state at one frame; used for both estimates and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub frame: FrameId,
    pub track_id: TrackId,
    pub class: ClassLabel,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub status: MotionStatus,
    pub supplementary: bool,
}

impl TrackRecord {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn speed(&self) -> f64 {
        Vector3::new(self.vx, self.vy, self.vz).norm()
    }
}

pub fn write_tracks(path: &Path, records: &[TrackRecord]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| IoError::file(path, e))?);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| IoError::file(path, e))?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

pub fn read_tracks(path: &Path) -> Result<Vec<TrackRecord>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| IoError::format(i + 1, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let odo = Pose::from_xyz_yaw(1.0, 0.5, 0.0, 0.3).to_row_major_3x4();
        let stream = FrameStream {
            header: StreamHeader {
                frame_period: 0.1,
                frame_count: 2,
            },
            frames: vec![
                FrameRecord {
                    frame: 0,
                    odometry: Pose::identity().to_row_major_3x4(),
                    detections: vec![],
                    loops: vec![],
                },
                FrameRecord {
                    frame: 1,
                    odometry: odo,
                    detections: vec![StreamDetection {
                        x: 3.0,
                        y: -1.0,
                        z: 0.2,
                        yaw: 0.1,
                        class: ClassLabel::Pedestrian,
                    }],
                    loops: vec![StreamLoop { frame_old: 0, t_meas: odo }],
                },
            ],
        };
        write_stream(&path, &stream).unwrap();
        let back = read_stream(&path).unwrap();
        assert_eq!(back, stream);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(2).unwrap().contains("\"class\":\"pedestrian\""));
        let dets = back.frames[1].detections();
        assert_eq!(dets[0].frame, 1);
        assert!(!dets[0].supplementary);
    }

    #[test]
    fn rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"frame_period\":0.1,\"frame_count\":1}\n{\"frame\":0}\n").unwrap();
        assert!(matches!(read_stream(&path), Err(IoError::Format { line: 2, .. })));
        std::fs::write(&path, "").unwrap();
        assert!(read_stream(&path).is_err());
        std::fs::write(&path, "1 0 0 0 0 1 0 0 0 0 1\n").unwrap();
        assert!(matches!(read_poses(&path), Err(IoError::Format { line: 1, .. })));
        // A non-rotation matrix block.
        std::fs::write(&path, "2 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        assert!(matches!(read_poses(&path), Err(IoError::Pose { .. })));
    }

    #[test]
    fn poses_and_tracks_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let poses = vec![Pose::identity(), Pose::from_xyz_yaw(1.5, -2.0, 0.1, 2.9)];
        let p = dir.path().join("ego.txt");
        write_poses(&p, &poses).unwrap();
        let back = read_poses(&p).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            assert!((a.to_matrix() - b.to_matrix()).abs().max() < 1e-12);
        }
        let rec = TrackRecord {
            frame: 3,
            track_id: 9,
            class: ClassLabel::Cyclist,
            x: 1.0,
            y: 2.0,
            z: 0.0,
            yaw: 0.5,
            vx: 3.0,
            vy: 4.0,
            vz: 0.0,
            status: MotionStatus::Dynamic,
            supplementary: true,
        };
        let p = dir.path().join("t.jsonl");
        write_tracks(&p, std::slice::from_ref(&rec)).unwrap();
        assert_eq!(read_tracks(&p).unwrap(), vec![rec.clone()]);
        assert_eq!(rec.speed(), 5.0);
    }
}
