//! Command-line front end: dataset simulation, filter runs, trajectory
//! evaluation, Jacobian audits and depth sweeps.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use po_msckf::eval::{align_umeyama, associate, ate_rmse, ASSOC_WINDOW};
use po_msckf::filter::{init_from_groundtruth, run_filter, FilterParams, RunConfig};
use po_msckf::io::{
    load_imu_csv, load_tracks_csv, load_trajectory_tum, save_diagnostics_csv, save_imu_csv,
    save_tracks_csv, save_trajectory_tum, TimedPose, TrackTable,
};
use po_msckf::propagation::{ImuNoiseSpec, WorldModel};
use po_msckf::sim::{simulate, SceneParams, TrajectoryKind, TrajectorySpec};
use po_msckf::update::NoiseModel;
use po_msckf::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Command outcome distinguishing data problems from numerical failures.
enum CliError {
    Core(Error),
    Numerical(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Numerical(_) => EXIT_NUMERICAL,
            Self::Core(e) => match e {
                Error::CovarianceCorrupt(_)
                | Error::NonPositiveDepth { .. }
                | Error::DegenerateParallax { .. } => EXIT_NUMERICAL,
                _ => EXIT_DATA,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Self::Numerical(msg) => msg.clone(),
            Self::Core(e) => e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "po-msckf",
    about = "Pose-only multi-state constrained Kalman filter toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (IMU CSV, tracks CSV, ground truth,
    /// run config) into a directory.
    Sim(SimArgs),
    /// Run the filter on an IMU/tracks dataset and write the estimated
    /// trajectory and diagnostics.
    Run(RunArgs),
    /// Align an estimated trajectory onto a reference (SE(3), least
    /// squares) and report the position RMSE.
    Eval(EvalArgs),
    /// Run every finite-difference Jacobian audit and print the table.
    AuditJacobians(AuditArgs),
    /// Monte-Carlo accuracy versus mean landmark depth, emitting a CSV.
    SweepDepth(SweepArgs),
}

#[derive(Args)]
struct SimArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Trajectory shape: circle, figure-eight or straight-turns
    #[arg(long, default_value = "circle", value_parser = parse_kind)]
    trajectory: TrajectoryKind,
    /// Circle radius / lemniscate half-width / turn offset, metres
    #[arg(long, default_value_t = 5.0)]
    radius: f64,
    /// Nominal speed along the path, m/s
    #[arg(long, default_value_t = 1.5)]
    speed: f64,
    /// Sequence length, seconds
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    /// IMU sample rate, Hz
    #[arg(long, default_value_t = 200.0)]
    imu_rate: f64,
    /// Camera frame rate, Hz
    #[arg(long, default_value_t = 10.0)]
    cam_rate: f64,
    /// Number of simulated landmarks
    #[arg(long, default_value_t = 120)]
    n_landmarks: usize,
    /// Closest landmark depth, metres
    #[arg(long, default_value_t = 3.0)]
    depth_min: f64,
    /// Farthest landmark depth, metres
    #[arg(long, default_value_t = 15.0)]
    depth_max: f64,
    /// Image noise, pixels (1 sigma)
    #[arg(long, default_value_t = 1.0)]
    sigma_px: f64,
    /// Focal length used to normalize pixel noise
    #[arg(long, default_value_t = 460.0)]
    focal: f64,
    /// Gyroscope noise density, rad/s/sqrt(Hz)
    #[arg(long, default_value_t = 1e-4)]
    sigma_g: f64,
    /// Accelerometer noise density, m/s^2/sqrt(Hz)
    #[arg(long, default_value_t = 1e-3)]
    sigma_a: f64,
    /// Gyroscope bias random walk
    #[arg(long, default_value_t = 1e-6)]
    sigma_wg: f64,
    /// Accelerometer bias random walk
    #[arg(long, default_value_t = 1e-5)]
    sigma_wa: f64,
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// key=value run configuration file
    #[arg(long)]
    config: PathBuf,
    /// Override the IMU CSV path from the config
    #[arg(long)]
    imu: Option<PathBuf>,
    /// Override the tracks CSV path from the config
    #[arg(long)]
    tracks: Option<PathBuf>,
    /// Override the ground-truth trajectory path from the config
    #[arg(long)]
    groundtruth: Option<PathBuf>,
    /// Override the output directory from the config
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated trajectory (TUM format)
    #[arg(long)]
    est: PathBuf,
    /// Reference trajectory (TUM format)
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Optionally write the aligned estimate here (TUM format)
    #[arg(long)]
    save_aligned: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    /// Number of random configurations per audited quantity
    #[arg(long, default_value_t = 100)]
    configs: usize,
    /// RNG seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// Mean landmark depths to sweep, metres (comma separated)
    #[arg(long, default_value = "5,50,500", value_delimiter = ',')]
    depths: Vec<f64>,
    /// Monte-Carlo runs per depth
    #[arg(long, default_value_t = 2)]
    runs: u64,
    /// Sequence length per run, seconds
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    /// Base RNG seed
    #[arg(long, default_value_t = 8)]
    seed: u64,
}

fn parse_kind(s: &str) -> Result<TrajectoryKind, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let result = match cli.command {
        Command::Sim(args) => cmd_sim(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::AuditJacobians(args) => cmd_audit(&args),
        Command::SweepDepth(args) => cmd_sweep(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn groundtruth_as_timed(gt: &[po_msckf::sim::TruePose]) -> Vec<TimedPose> {
    gt.iter()
        .map(|g| TimedPose {
            t: g.t,
            p_w: g.p_w,
            q_b_w: g.q_b_w,
        })
        .collect()
}

fn cmd_sim(args: &SimArgs) -> Result<(), CliError> {
    let spec = TrajectorySpec {
        kind: args.trajectory,
        radius: args.radius,
        speed: args.speed,
        duration: args.duration,
        imu_rate: args.imu_rate,
        cam_rate: args.cam_rate,
    };
    let noise = ImuNoiseSpec {
        sigma_g: args.sigma_g,
        sigma_a: args.sigma_a,
        sigma_wg: args.sigma_wg,
        sigma_wa: args.sigma_wa,
    };
    let scene = SceneParams {
        n_landmarks: args.n_landmarks,
        depth_min: args.depth_min,
        depth_max: args.depth_max,
        sigma_px: args.sigma_px,
        focal: args.focal,
        ..SceneParams::default()
    };
    let world = WorldModel::default();
    let out = simulate(&spec, &noise, &scene, &world, args.seed);

    std::fs::create_dir_all(&args.out).map_err(Error::from)?;
    save_imu_csv(&args.out.join("imu.csv"), &out.imu.samples)?;
    save_tracks_csv(&args.out.join("tracks.csv"), &out.tracks)?;
    save_trajectory_tum(
        &args.out.join("groundtruth.txt"),
        &groundtruth_as_timed(&out.groundtruth),
    )?;

    // a config ready for `run`, with paths relative to its own directory
    let mut cfg = String::from("# generated alongside the dataset\n");
    cfg.push_str("imu = imu.csv\n");
    cfg.push_str("tracks = tracks.csv\n");
    cfg.push_str("groundtruth = groundtruth.txt\n");
    cfg.push_str("output_dir = .\n");
    cfg.push_str("camera = forward\n");
    writeln!(cfg, "sigma_px = {}", args.sigma_px).expect("string write");
    writeln!(cfg, "focal = {}", args.focal).expect("string write");
    writeln!(cfg, "sigma_g = {}", args.sigma_g).expect("string write");
    writeln!(cfg, "sigma_a = {}", args.sigma_a).expect("string write");
    writeln!(cfg, "sigma_wg = {}", args.sigma_wg).expect("string write");
    writeln!(cfg, "sigma_wa = {}", args.sigma_wa).expect("string write");
    std::fs::write(args.out.join("run.cfg"), cfg).map_err(Error::from)?;

    println!(
        "wrote {} IMU samples, {} track rows, {} frames to {}",
        out.imu.samples.len(),
        out.tracks.len(),
        out.frames.len(),
        args.out.display()
    );
    Ok(())
}

/// Resolve a config-relative path against the config file's directory.
fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let base = args
        .config
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let pick = |over: &Option<PathBuf>, from_cfg: &Option<String>, what: &str| {
        over.clone()
            .or_else(|| from_cfg.as_ref().map(|p| resolve(&base, p)))
            .ok_or_else(|| Error::Config(format!("missing {what} path (config key or flag)")))
    };
    let imu_path = pick(&args.imu, &cfg.imu_path, "imu")?;
    let tracks_path = pick(&args.tracks, &cfg.tracks_path, "tracks")?;
    let gt_path = pick(&args.groundtruth, &cfg.groundtruth_path, "groundtruth")?;
    let out_dir = pick(&args.out, &cfg.output_dir, "output")?;

    let imu = load_imu_csv(&imu_path)?;
    let table = load_tracks_csv(&tracks_path)?;
    let gt = load_trajectory_tum(&gt_path)?;
    let init = init_from_groundtruth(&gt, None, table.frames[0].1)?;

    let run = run_filter(&cfg.params, &imu, &table, &init)?;

    std::fs::create_dir_all(&out_dir).map_err(Error::from)?;
    save_trajectory_tum(&out_dir.join("trajectory.txt"), &run.trajectory)?;
    save_diagnostics_csv(&out_dir.join("diagnostics.csv"), &run.diagnostics)?;

    if let Some(msg) = run.aborted {
        // dump the last valid state so the failure can be inspected
        let dump_path = out_dir.join("last_state.txt");
        let mut dump = String::from("# last valid state before numerical failure\n");
        writeln!(dump, "reason = {msg}").expect("string write");
        if let Some(e) = run.epochs.last() {
            let q = e.nav.q_b_w.quaternion();
            writeln!(dump, "t = {}", e.t).expect("string write");
            writeln!(dump, "p_w = {} {} {}", e.nav.p_w.x, e.nav.p_w.y, e.nav.p_w.z)
                .expect("string write");
            writeln!(dump, "v_w = {} {} {}", e.nav.v_w.x, e.nav.v_w.y, e.nav.v_w.z)
                .expect("string write");
            writeln!(dump, "q_b_w = {} {} {} {}", q.i, q.j, q.k, q.w).expect("string write");
            writeln!(dump, "b_g = {} {} {}", e.nav.b_g.x, e.nav.b_g.y, e.nav.b_g.z)
                .expect("string write");
            writeln!(dump, "b_a = {} {} {}", e.nav.b_a.x, e.nav.b_a.y, e.nav.b_a.z)
                .expect("string write");
            writeln!(dump, "pose_cov_trace = {}", e.pose_cov.trace()).expect("string write");
        }
        std::fs::write(&dump_path, dump).map_err(Error::from)?;
        return Err(CliError::Numerical(format!(
            "run aborted: {msg}; last valid state written to {}",
            dump_path.display()
        )));
    }

    println!(
        "wrote {} poses and {} diagnostic records to {}",
        run.trajectory.len(),
        run.diagnostics.len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let est = load_trajectory_tum(&args.est)?;
    let reference = load_trajectory_tum(&args.reference)?;
    let pairs = associate(&est, &reference, ASSOC_WINDOW).len();
    let (_, aligned) = align_umeyama(&est, &reference)?;
    let rmse = ate_rmse(&aligned, &reference)?;
    println!("alignment = SE3");
    println!("pairs = {pairs}");
    println!("ate_rmse_m = {rmse:.6}");
    if let Some(path) = &args.save_aligned {
        save_trajectory_tum(path, &aligned)?;
    }
    Ok(())
}

fn cmd_audit(args: &AuditArgs) -> Result<(), CliError> {
    let report = po_msckf::audit::run_jacobian_audit(args.configs, args.seed);
    print!("{}", report.render_table());
    if report.all_passed() {
        Ok(())
    } else {
        let failed = report.items.iter().filter(|i| !i.passed()).count();
        Err(CliError::Numerical(format!(
            "jacobian audit failed: {failed} quantities out of tolerance"
        )))
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    if args.depths.is_empty() || args.runs == 0 {
        return Err(CliError::Core(Error::Config(
            "sweep needs at least one depth and one run".into(),
        )));
    }
    let world = WorldModel::default();
    let imu_noise = ImuNoiseSpec {
        sigma_g: 1e-4,
        sigma_a: 1e-3,
        sigma_wg: 1e-6,
        sigma_wa: 1e-5,
    };
    let cases: Vec<(f64, u64)> = args
        .depths
        .iter()
        .flat_map(|&d| (0..args.runs).map(move |r| (d, r)))
        .collect();
    let results: Vec<(f64, u64, Result<f64, String>)> = cases
        .par_iter()
        .map(|&(depth, run_idx)| {
            let spec = TrajectorySpec {
                duration: args.duration,
                ..TrajectorySpec::default()
            };
            let scene = SceneParams {
                depth_min: depth * 0.6,
                depth_max: depth * 1.4,
                n_landmarks: 200,
                sigma_px: 1.0,
                focal: 450.0,
                ..SceneParams::default()
            };
            let seed = args.seed ^ (depth.to_bits()) ^ run_idx;
            let out = simulate(&spec, &imu_noise, &scene, &world, seed);
            let params = FilterParams {
                extrinsics: out.extrinsics,
                noise: NoiseModel {
                    sigma_px: scene.sigma_px,
                    focal: scene.focal,
                },
                imu_noise,
                ..FilterParams::default()
            };
            let outcome = (|| {
                let run = run_filter(
                    &params,
                    &out.imu.samples,
                    &table_from_sim(&out),
                    &out.initial_state(),
                )
                .map_err(|e| e.to_string())?;
                if let Some(msg) = run.aborted {
                    return Err(msg);
                }
                ate_rmse(&run.trajectory, &groundtruth_as_timed(&out.groundtruth))
                    .map_err(|e| e.to_string())
            })();
            (depth, run_idx, outcome)
        })
        .collect();

    let mut csv = String::from("# mean_depth_m,run,ate_rmse_m,status\n");
    let mut failures = Vec::new();
    for (depth, run_idx, outcome) in &results {
        match outcome {
            Ok(rmse) => {
                writeln!(csv, "{depth},{run_idx},{rmse:.6},ok").expect("string write")
            }
            Err(msg) => {
                writeln!(csv, "{depth},{run_idx},nan,failed").expect("string write");
                failures.push(format!("depth {depth} run {run_idx}: {msg}"));
            }
        }
    }
    std::fs::write(&args.out, csv).map_err(Error::from)?;

    for &depth in &args.depths {
        let rmses: Vec<f64> = results
            .iter()
            .filter(|(d, _, r)| *d == depth && r.is_ok())
            .map(|(_, _, r)| *r.as_ref().unwrap())
            .collect();
        if rmses.is_empty() {
            println!("depth {depth:>7.1} m: all runs failed");
        } else {
            let mean = rmses.iter().sum::<f64>() / rmses.len() as f64;
            println!("depth {depth:>7.1} m: mean RMSE {mean:.3} m over {} runs", rmses.len());
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "{} sweep runs failed: {}",
            failures.len(),
            failures.join("; ")
        )))
    }
}

/// Group simulator track rows into the run-loop's table form.
fn table_from_sim(out: &po_msckf::sim::SimOutput) -> TrackTable {
    let mut tracks: std::collections::BTreeMap<u64, po_msckf::update::FeatureTrack> =
        Default::default();
    for r in &out.tracks {
        tracks
            .entry(r.feature_id)
            .or_insert_with(|| po_msckf::update::FeatureTrack {
                feature_id: r.feature_id,
                observations: Vec::new(),
            })
            .observations
            .push((r.frame_id, r.obs));
    }
    TrackTable {
        tracks: tracks.into_values().collect(),
        frames: out.frames.clone(),
    }
}
