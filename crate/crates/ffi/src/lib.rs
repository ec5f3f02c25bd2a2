//! C ABI over the slot back-end.
//!
//! A pipeline is an opaque handle created by [`slot_pipeline_new`] and
//! released with [`slot_pipeline_free`]. Every fallible call returns a
//! [`SlotStatus`]; on failure [`slot_last_error_message`] describes the error
//! for the calling thread. Poses cross the boundary as row-major 3×4
//! matrices `[R | t]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use slot_core::association::{ClassLabel, MotionStatus};
use slot_core::backend::{BackendError, FrameInput, RunOutput, SlotBackend, StageTimings, TimingSummary};
use slot_core::config::RunConfig;
use slot_core::io::{FrameRecord, StreamDetection, StreamLoop, TrackRecord};

pub const SLOT_CLASS_VEHICLE: u32 = 0;
pub const SLOT_CLASS_PEDESTRIAN: u32 = 1;
pub const SLOT_CLASS_CYCLIST: u32 = 2;

pub const SLOT_MOTION_UNKNOWN: u32 = 0;
pub const SLOT_MOTION_DYNAMIC: u32 = 1;
pub const SLOT_MOTION_STATIONARY: u32 = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Malformed config, out-of-order frame, bad rotation, unknown class.
    InvalidInput = 2,
    /// The solver or marginalization failed.
    Numerical = 3,
    Io = 4,
    /// Index past the end of an output sequence.
    OutOfRange = 5,
    /// A Rust panic was caught at the boundary; the handle should be freed.
    Panic = 6,
}

/// One detection in the ego frame of the current scan.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SlotDetection {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    /// One of the `SLOT_CLASS_*` constants.
    pub class_label: u32,
}

/// Loop event: pose of the current frame relative to `frame_old`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SlotLoop {
    pub frame_old: u32,
    pub t_meas: [f64; 12],
}

/// Estimated state of one track in one frame.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SlotTrackRecord {
    pub frame: u32,
    pub track_id: u32,
    pub class_label: u32,
    /// One of the `SLOT_MOTION_*` constants.
    pub motion_status: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub supplementary: bool,
}

pub struct SlotPipeline {
    backend: SlotBackend,
    timings: Vec<StageTimings>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

type Outcome = Result<(), (SlotStatus, String)>;

fn fail<T>(status: SlotStatus, msg: impl Into<String>) -> Result<T, (SlotStatus, String)> {
    Err((status, msg.into()))
}

fn from_backend(e: BackendError) -> (SlotStatus, String) {
    let status = if e.is_numerical() {
        SlotStatus::Numerical
    } else {
        SlotStatus::InvalidInput
    };
    (status, e.to_string())
}

/// Runs `f`, records its error message, and turns panics into a status.
fn guard(f: impl FnOnce() -> Outcome) -> SlotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SlotStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SlotStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], (SlotStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return fail(SlotStatus::NullPointer, format!("{what} is null but count is {len}"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn utf8<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, (SlotStatus, String)> {
    CStr::from_ptr(ptr)
        .to_str()
        .or_else(|_| fail(SlotStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

fn class_from(code: u32) -> Result<ClassLabel, (SlotStatus, String)> {
    match code {
        SLOT_CLASS_VEHICLE => Ok(ClassLabel::Vehicle),
        SLOT_CLASS_PEDESTRIAN => Ok(ClassLabel::Pedestrian),
        SLOT_CLASS_CYCLIST => Ok(ClassLabel::Cyclist),
        other => fail(SlotStatus::InvalidInput, format!("unknown class code {other}")),
    }
}

fn class_code(c: ClassLabel) -> u32 {
    match c {
        ClassLabel::Vehicle => SLOT_CLASS_VEHICLE,
        ClassLabel::Pedestrian => SLOT_CLASS_PEDESTRIAN,
        ClassLabel::Cyclist => SLOT_CLASS_CYCLIST,
    }
}

fn status_code(s: MotionStatus) -> u32 {
    match s {
        MotionStatus::Unknown => SLOT_MOTION_UNKNOWN,
        MotionStatus::Dynamic => SLOT_MOTION_DYNAMIC,
        MotionStatus::Stationary => SLOT_MOTION_STATIONARY,
    }
}

fn record_to_c(r: &TrackRecord) -> SlotTrackRecord {
    SlotTrackRecord {
        frame: r.frame,
        track_id: r.track_id,
        class_label: class_code(r.class),
        motion_status: status_code(r.status),
        x: r.x,
        y: r.y,
        z: r.z,
        yaw: r.yaw,
        vx: r.vx,
        vy: r.vy,
        vz: r.vz,
        supplementary: r.supplementary,
    }
}

/// Creates a pipeline. `config_toml` holds a run config document, or is null
/// for the defaults. On success `*out` owns the new handle.
///
/// # Safety
/// `config_toml` must be null or a NUL-terminated string; `out` must be a
/// valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn slot_pipeline_new(config_toml: *const c_char, out: *mut *mut SlotPipeline) -> SlotStatus {
    guard(|| {
        if out.is_null() {
            return fail(SlotStatus::NullPointer, "out is null");
        }
        *out = std::ptr::null_mut();
        let config = if config_toml.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_toml_str(utf8(config_toml, "config")?)
                .or_else(|e| fail(SlotStatus::InvalidInput, e.to_string()))?
        };
        let backend = SlotBackend::new(config).map_err(from_backend)?;
        *out = Box::into_raw(Box::new(SlotPipeline {
            backend,
            timings: Vec::new(),
        }));
        Ok(())
    })
}

/// Releases a pipeline. Null is ignored.
///
/// # Safety
/// `pipeline` must be null or a handle from [`slot_pipeline_new`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn slot_pipeline_free(pipeline: *mut SlotPipeline) {
    if !pipeline.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(pipeline))));
    }
}

/// Processes one scan. `odometry` is the 3×4 pose of this frame relative to
/// the previous one (ignored for the first frame). Frame numbers must
/// increase strictly.
///
/// # Safety
/// `pipeline` must be a live handle; `odometry` must point to 12 doubles;
/// `detections` and `loops` must point to `n_detections` and `n_loops`
/// elements (either may be null when its count is zero).
#[no_mangle]
pub unsafe extern "C" fn slot_pipeline_ingest(
    pipeline: *mut SlotPipeline,
    frame: u32,
    odometry: *const f64,
    detections: *const SlotDetection,
    n_detections: usize,
    loops: *const SlotLoop,
    n_loops: usize,
) -> SlotStatus {
    guard(|| {
        let Some(p) = pipeline.as_mut() else {
            return fail(SlotStatus::NullPointer, "pipeline is null");
        };
        if odometry.is_null() {
            return fail(SlotStatus::NullPointer, "odometry is null");
        }
        let odometry: [f64; 12] = std::slice::from_raw_parts(odometry, 12).try_into().expect("12 values");
        let detections = slice(detections, n_detections, "detections")?
            .iter()
            .map(|d| {
                Ok(StreamDetection {
                    x: d.x,
                    y: d.y,
                    z: d.z,
                    yaw: d.yaw,
                    class: class_from(d.class_label)?,
                })
            })
            .collect::<Result<_, _>>()?;
        let loops = slice(loops, n_loops, "loops")?
            .iter()
            .map(|l| StreamLoop {
                frame_old: l.frame_old,
                t_meas: l.t_meas,
            })
            .collect();
        let record = FrameRecord {
            frame,
            odometry,
            detections,
            loops,
        };
        let input = FrameInput::from_record(&record).or_else(|e| fail(SlotStatus::InvalidInput, e.to_string()))?;
        let summary = p.backend.ingest_frame(input).map_err(from_backend)?;
        p.timings.push(summary.timings);
        Ok(())
    })
}

/// Number of frames ingested so far; 0 for a null handle.
///
/// # Safety
/// `pipeline` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn slot_pipeline_frame_count(pipeline: *const SlotPipeline) -> usize {
    pipeline.as_ref().map_or(0, |p| p.timings.len())
}

/// Writes the current ego pose estimate of the `index`-th ingested frame.
///
/// # Safety
/// `pipeline` must be a live handle; `out` must point to 12 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn slot_pipeline_ego_pose(
    pipeline: *const SlotPipeline,
    index: usize,
    out: *mut f64,
) -> SlotStatus {
    guard(|| {
        let Some(p) = pipeline.as_ref() else {
            return fail(SlotStatus::NullPointer, "pipeline is null");
        };
        if out.is_null() {
            return fail(SlotStatus::NullPointer, "out is null");
        }
        let ego = p.backend.ego_trajectory();
        let Some(pose) = ego.get(index) else {
            return fail(SlotStatus::OutOfRange, format!("frame index {index} of {}", ego.len()));
        };
        std::slice::from_raw_parts_mut(out, 12).copy_from_slice(&pose.to_row_major_3x4());
        Ok(())
    })
}

/// Number of track records (one per track observation); 0 for a null handle.
///
/// # Safety
/// `pipeline` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn slot_pipeline_track_record_count(pipeline: *const SlotPipeline) -> usize {
    pipeline.as_ref().map_or(0, |p| p.backend.track_records().len())
}

/// Copies the `index`-th track record, in ingestion order.
///
/// # Safety
/// `pipeline` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn slot_pipeline_track_record(
    pipeline: *const SlotPipeline,
    index: usize,
    out: *mut SlotTrackRecord,
) -> SlotStatus {
    guard(|| {
        let Some(p) = pipeline.as_ref() else {
            return fail(SlotStatus::NullPointer, "pipeline is null");
        };
        if out.is_null() {
            return fail(SlotStatus::NullPointer, "out is null");
        }
        let records = p.backend.track_records();
        let Some(r) = records.get(index) else {
            return fail(SlotStatus::OutOfRange, format!("record index {index} of {}", records.len()));
        };
        *out = record_to_c(r);
        Ok(())
    })
}

/// Writes `ego.txt`, `tracks.jsonl` and `timings.json` into `dir`, creating
/// it if needed.
///
/// # Safety
/// `pipeline` must be a live handle; `dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn slot_pipeline_write_outputs(pipeline: *const SlotPipeline, dir: *const c_char) -> SlotStatus {
    guard(|| {
        let Some(p) = pipeline.as_ref() else {
            return fail(SlotStatus::NullPointer, "pipeline is null");
        };
        if dir.is_null() {
            return fail(SlotStatus::NullPointer, "dir is null");
        }
        let dir = utf8(dir, "dir")?;
        let (ego, tracks) = p.backend.export_state();
        let output = RunOutput {
            ego,
            tracks,
            timings: TimingSummary::from_frames(&p.timings),
        };
        output
            .write(Path::new(dir))
            .or_else(|e| fail(SlotStatus::Io, e.to_string()))
    })
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn slot_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn slot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
