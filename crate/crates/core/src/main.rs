use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use slot_core::backend::{run_stream, BackendError};
use slot_core::config::RunConfig;
use slot_core::eval::{evaluate, evaluate_dirs, MetricsReport};
use slot_core::io::{read_stream, write_stream};
use slot_core::simulator::{emit_stream, generate_scene, SceneSpec};

#[derive(Parser)]
#[command(name = "slot", version, about = "Joint ego-pose and object-state estimation back-end")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a measurement stream and ground truth from a scene file.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Run the back-end over a stream and write estimates.
    Run {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Drop all detections (odometry-only baseline).
        #[arg(long)]
        no_objects: bool,
        /// Ignore loop events.
        #[arg(long)]
        no_loop: bool,
    },
    /// Score a run directory against ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        dist_thresh: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep seeds of one scene and tabulate medians and IQRs per variant.
    Bench {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        dist_thresh: f64,
    },
}

/// Exit status plus message.
struct Failure {
    code: u8,
    message: String,
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

fn from_backend(e: BackendError) -> Failure {
    Failure {
        code: if e.is_numerical() { 2 } else { 1 },
        message: e.to_string(),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(invalid),
        None => Ok(RunConfig::default()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn simulate(scene: &Path, seed: u64, out: &Path, gt: &Path) -> Result<(), Failure> {
    let spec = SceneSpec::load(scene).map_err(invalid)?;
    let scene = generate_scene(&spec, seed).map_err(invalid)?;
    let emitted = emit_stream(&scene);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
    }
    write_stream(out, &emitted.stream).map_err(invalid)?;
    scene.write_ground_truth(gt).map_err(invalid)
}

fn run(stream: &Path, config: Option<&Path>, out: &Path, no_objects: bool, no_loop: bool) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    cfg.use_objects &= !no_objects;
    cfg.use_loop &= !no_loop;
    let stream = read_stream(stream).map_err(invalid)?;
    let output = run_stream(&stream, cfg).map_err(from_backend)?;
    output.write(out).map_err(invalid)
}

const BENCH_METRICS: [&str; 7] = [
    "ate_trans_rmse",
    "ate_rot_rmse",
    "mota",
    "trk_precision",
    "trk_recall",
    "id_switches",
    "backend_ms_median",
];

fn metric_values(r: &MetricsReport, backend_ms: f64) -> [f64; 7] {
    [
        r.ate_trans_rmse,
        r.ate_rot_rmse,
        r.mota.unwrap_or(f64::NAN),
        r.trk_precision,
        r.trk_recall,
        r.id_switches as f64,
        backend_ms,
    ]
}

/// Linear-interpolated quantile of sorted, non-empty data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn bench(scene: &Path, seeds: u64, out: &Path, config: Option<&Path>, dist_thresh: f64) -> Result<(), Failure> {
    if seeds == 0 {
        return Err(invalid("--seeds must be at least 1"));
    }
    let spec = SceneSpec::load(scene).map_err(invalid)?;
    let base = load_config(config)?;
    let mut variants = vec![("full", base.clone())];
    let mut no_objects = base.clone();
    no_objects.use_objects = false;
    variants.push(("no_objects", no_objects));
    if !spec.loop_pairs.is_empty() {
        let mut no_loop = base.clone();
        no_loop.use_loop = false;
        variants.push(("no_loop", no_loop));
    }

    let rows: Vec<(u64, &str, [f64; 7])> = (0..seeds)
        .into_par_iter()
        .map(|seed| -> Result<Vec<(u64, &str, [f64; 7])>, Failure> {
            let scene = generate_scene(&spec, seed).map_err(invalid)?;
            let stream = emit_stream(&scene).stream;
            let gt = scene.ground_truth_records();
            let mut out = Vec::new();
            for (name, cfg) in &variants {
                let run = run_stream(&stream, cfg.clone()).map_err(from_backend)?;
                let report = evaluate(&run.ego, &scene.ego, &run.tracks, &gt, dist_thresh, spec.frame_period)
                    .map_err(invalid)?;
                out.push((seed, *name, metric_values(&report, run.timings.backend_ms_median)));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, Failure>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut runs = String::from("seed,variant");
    for m in BENCH_METRICS {
        write!(runs, ",{m}").unwrap();
    }
    runs.push('\n');
    for (seed, name, vals) in &rows {
        write!(runs, "{seed},{name}").unwrap();
        for v in vals {
            write!(runs, ",{v}").unwrap();
        }
        runs.push('\n');
    }

    let mut summary = String::from("variant,metric,median,q1,q3,iqr\n");
    for (name, _) in &variants {
        for (k, metric) in BENCH_METRICS.iter().enumerate() {
            let mut vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.1 == *name)
                .map(|r| r.2[k])
                .filter(|v| v.is_finite())
                .collect();
            if vals.is_empty() {
                continue;
            }
            vals.sort_by(f64::total_cmp);
            let (q1, med, q3) = (quantile(&vals, 0.25), quantile(&vals, 0.5), quantile(&vals, 0.75));
            writeln!(summary, "{name},{metric},{med},{q1},{q3},{}", q3 - q1).unwrap();
        }
    }

    write_text(out, &summary)?;
    let stem = out.file_stem().map_or("bench".into(), |s| s.to_string_lossy().into_owned());
    write_text(&out.with_file_name(format!("{stem}_runs.csv")), &runs)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { scene, seed, out, gt } => simulate(&scene, seed, &out, &gt),
        Command::Run {
            stream,
            config,
            out,
            no_objects,
            no_loop,
        } => run(&stream, config.as_deref(), &out, no_objects, no_loop),
        Command::Eval {
            est,
            gt,
            dist_thresh,
            out,
        } => {
            let report = evaluate_dirs(&est, &gt, dist_thresh).map_err(invalid)?;
            write_text(&out, &serde_json::to_string_pretty(&report).expect("report serializes"))
        }
        Command::Bench {
            scene,
            seeds,
            out,
            config,
            dist_thresh,
        } => bench(&scene, seeds, &out, config.as_deref(), dist_thresh),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
