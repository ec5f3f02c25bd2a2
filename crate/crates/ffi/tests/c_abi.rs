use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use slot_ffi::*;

const IDENTITY: [f64; 12] = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];

fn step(dx: f64) -> [f64; 12] {
    let mut m = IDENTITY;
    m[3] = dx;
    m
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(slot_last_error_message()) }.to_string_lossy().into_owned()
}

fn pipeline(config: Option<&str>) -> *mut SlotPipeline {
    let text = config.map(|c| CString::new(c).unwrap());
    let mut p = ptr::null_mut();
    let status = unsafe { slot_pipeline_new(text.as_ref().map_or(ptr::null(), |c| c.as_ptr()), &mut p) };
    assert_eq!(status, SlotStatus::Ok, "{}", last_error());
    assert!(!p.is_null());
    p
}

/// A parked car 10 m ahead, seen while driving 1 m per frame.
fn drive(p: *mut SlotPipeline, frames: u32) {
    for f in 0..frames {
        let det = SlotDetection {
            x: 10.0 - f as f64,
            y: 2.0,
            z: 0.0,
            yaw: 0.0,
            class_label: SLOT_CLASS_VEHICLE,
        };
        let odo = if f == 0 { IDENTITY } else { step(1.0) };
        let status = unsafe { slot_pipeline_ingest(p, f, odo.as_ptr(), &det, 1, ptr::null(), 0) };
        assert_eq!(status, SlotStatus::Ok, "frame {f}: {}", last_error());
    }
}

#[test]
fn exact_inputs_round_trip() {
    let p = pipeline(None);
    drive(p, 8);
    unsafe {
        assert_eq!(slot_pipeline_frame_count(p), 8);
        let mut pose = [0.0; 12];
        assert_eq!(slot_pipeline_ego_pose(p, 7, pose.as_mut_ptr()), SlotStatus::Ok);
        assert!((pose[3] - 7.0).abs() < 1e-9 && pose[7].abs() < 1e-9);

        assert_eq!(slot_pipeline_track_record_count(p), 8);
        let mut rec = std::mem::zeroed::<SlotTrackRecord>();
        assert_eq!(slot_pipeline_track_record(p, 7, &mut rec), SlotStatus::Ok);
        assert_eq!((rec.frame, rec.track_id, rec.class_label), (7, 0, SLOT_CLASS_VEHICLE));
        assert!((rec.x - 10.0).abs() < 1e-9 && (rec.y - 2.0).abs() < 1e-9);
        assert_eq!(rec.motion_status, SLOT_MOTION_STATIONARY);
        slot_pipeline_free(p);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let p = pipeline(None);
    drive(p, 2);
    unsafe {
        let det = SlotDetection {
            x: 1.0,
            y: 0.0,
            z: 0.0,
            yaw: 0.0,
            class_label: 9,
        };
        let status = slot_pipeline_ingest(p, 2, IDENTITY.as_ptr(), &det, 1, ptr::null(), 0);
        assert_eq!(status, SlotStatus::InvalidInput);
        assert!(last_error().contains("class"));

        let status = slot_pipeline_ingest(p, 1, IDENTITY.as_ptr(), ptr::null(), 0, ptr::null(), 0);
        assert_eq!(status, SlotStatus::InvalidInput);
        assert!(last_error().contains("frame 1"));

        let status = slot_pipeline_ingest(p, 5, IDENTITY.as_ptr(), ptr::null(), 3, ptr::null(), 0);
        assert_eq!(status, SlotStatus::NullPointer);
        assert_eq!(
            slot_pipeline_ingest(ptr::null_mut(), 5, IDENTITY.as_ptr(), ptr::null(), 0, ptr::null(), 0),
            SlotStatus::NullPointer
        );

        let mut skewed = IDENTITY;
        skewed[0] = 2.0;
        let status = slot_pipeline_ingest(p, 5, skewed.as_ptr(), ptr::null(), 0, ptr::null(), 0);
        assert_eq!(status, SlotStatus::InvalidInput);

        let mut pose = [0.0; 12];
        assert_eq!(slot_pipeline_ego_pose(p, 2, pose.as_mut_ptr()), SlotStatus::OutOfRange);
        let mut rec = std::mem::zeroed::<SlotTrackRecord>();
        assert_eq!(slot_pipeline_track_record(p, 99, &mut rec), SlotStatus::OutOfRange);

        assert_eq!(slot_pipeline_ego_pose(p, 0, pose.as_mut_ptr()), SlotStatus::Ok);
        assert_eq!(last_error(), "");
        slot_pipeline_free(p);
        slot_pipeline_free(ptr::null_mut());
    }
}

#[test]
fn bad_config_is_rejected() {
    let text = CString::new("window_size = \"ten\"").unwrap();
    let mut p = ptr::null_mut();
    let status = unsafe { slot_pipeline_new(text.as_ptr(), &mut p) };
    assert_eq!(status, SlotStatus::InvalidInput);
    assert!(p.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { slot_pipeline_new(ptr::null(), ptr::null_mut()) }, SlotStatus::NullPointer);
}

#[test]
fn outputs_are_written() {
    let p = pipeline(Some("window_size = 5"));
    drive(p, 6);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("run").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(slot_pipeline_write_outputs(p, path.as_ptr()), SlotStatus::Ok, "{}", last_error());
        slot_pipeline_free(p);
    }
    let ego = std::fs::read_to_string(dir.path().join("run/ego.txt")).unwrap();
    assert_eq!(ego.lines().count(), 6);
    let tracks = std::fs::read_to_string(dir.path().join("run/tracks.jsonl")).unwrap();
    assert_eq!(tracks.lines().count(), 6);
    assert!(dir.path().join("run/timings.json").exists());
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(slot_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn header_compiles_and_links() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // Test binaries live in target/<profile>/deps; the library one level up.
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    let lib = lib_dir.join("libslot_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let out = Command::new(cc)
        .arg(crate_dir.join("tests/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stdout));
    assert!(String::from_utf8_lossy(&run.stdout).contains("ok"));
}
