//! Command-line front end: `run`, `eval`, `synth` and `plot`.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 evaluation
//! infeasible.

mod svg;

pub use svg::render_svg;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::warn;
use serde::Serialize;

use crate::evaluation::{evaluate_drift, format_kitti, format_trajectory, read_trajectory, EvalError, Trajectory};
use crate::odometry::{Odometry, OdometryConfig};
use crate::scan_io::{load_polar_csv, load_polar_image, write_polar_csv, write_polar_image, RangeMeta};
use crate::synth::{scenario, SynthError};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;

/// Sidecar holding the range geometry of image scans.
pub const META_FILE: &str = "meta.txt";

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Infeasible(m) => m,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "cfear", version, about = "Spinning 2D radar odometry")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run odometry over a directory of scans.
    Run(RunArgs),
    /// Compute drift of an estimate against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic scan sequence with ground truth.
    Synth(SynthArgs),
    /// Plot trajectories as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanFormat {
    Csv,
    /// 8-bit polar PNG images with a `meta.txt` sidecar.
    Image,
}

impl ScanFormat {
    fn extension(self) -> &'static str {
        match self {
            ScanFormat::Csv => "csv",
            ScanFormat::Image => "png",
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Directory of scans, processed in filename order.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: ScanFormat,
    #[arg(long, default_value = "cfear-ctf-s10")]
    pub preset: String,
    /// Config override `key=value`, applied after the preset. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Estimated trajectory.
    #[arg(long)]
    pub input: PathBuf,
    /// Ground-truth trajectory.
    #[arg(long)]
    pub gt: PathBuf,
    /// Directory for `drift.json`; defaults to the estimate's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write at most this many frames.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: ScanFormat,
    /// Simulation override `sim.key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, clap::Args)]
pub struct PlotArgs {
    /// Estimated trajectory.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub svg: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

/// Mean rates over the processing loop.
#[derive(Debug, Clone, Serialize)]
pub struct TimingSummary {
    pub scans: usize,
    /// Wall-clock seconds of the loop, including scan loading.
    pub wall_clock_s: f64,
    /// Scans per wall-clock second.
    pub hz: f64,
    /// Scans per second of odometry processing (filter + features + registration).
    pub processing_hz: f64,
    pub filter_hz: f64,
    pub features_hz: f64,
    pub registration_hz: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub input: PathBuf,
    pub format: ScanFormat,
    pub preset: String,
    pub overrides: Vec<String>,
    pub output: PathBuf,
    pub trajectory: PathBuf,
    pub timing_csv: PathBuf,
    pub degenerate_scans: usize,
    pub keyframes_created: usize,
    pub config: OdometryConfig,
    pub timing: TimingSummary,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file and a rename so readers never see a
/// partial file.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    write_file(&tmp, contents)?;
    fs::rename(&tmp, path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn scan_files(dir: &Path, format: ScanFormat) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|x| x.eq_ignore_ascii_case(format.extension()))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Input(format!(
            "no .{} scans in {}",
            format.extension(),
            dir.display()
        )));
    }
    Ok(files)
}

pub fn build_config(preset: &str, overrides: &[String]) -> Result<OdometryConfig, CliError> {
    let mut cfg = OdometryConfig::preset(preset).map_err(input_err)?;
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("override `{kv}` is not key=value")))?;
        cfg.set(k.trim(), v.trim()).map_err(input_err)?;
    }
    cfg.validate().map_err(input_err)?;
    Ok(cfg)
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let config = build_config(&args.preset, &args.overrides)?;
    let files = scan_files(&args.input, args.format)?;
    let meta = match args.format {
        ScanFormat::Image => Some(RangeMeta::load(&args.input.join(META_FILE)).map_err(input_err)?),
        ScanFormat::Csv => None,
    };
    create_dir(&args.out)?;

    let mut odometry = Odometry::new(config.clone()).map_err(input_err)?;
    let mut trajectory = Trajectory::default();
    let mut timing_csv = String::from("scan_id,time,filter_ms,features_ms,register_ms,total_ms,degenerate,keyframe\n");
    let (mut filter_s, mut features_s, mut registration_s, mut total_s) = (0.0, 0.0, 0.0, 0.0);
    let (mut degenerate, mut keyframes) = (0, 0);
    let start = Instant::now();
    for (i, path) in files.iter().enumerate() {
        let scan = match &meta {
            Some(m) => load_polar_image(path, m).map(|s| s.with_scan_id(i as u64)),
            None => load_polar_csv(path),
        }
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let update = odometry
            .process_scan(&scan)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if update.degenerate {
            degenerate += 1;
        }
        keyframes += update.keyframe_created as usize;
        trajectory
            .push(update.time, update.pose)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let t = update.timing;
        filter_s += t.filter;
        features_s += t.features;
        registration_s += t.registration;
        total_s += t.total;
        let _ = writeln!(
            timing_csv,
            "{},{},{:.4},{:.4},{:.4},{:.4},{},{}",
            update.scan_id,
            update.time,
            t.filter * 1e3,
            t.features * 1e3,
            t.registration * 1e3,
            t.total * 1e3,
            update.degenerate as u8,
            update.keyframe_created as u8
        );
    }
    let wall = start.elapsed().as_secs_f64();
    if degenerate > 0 {
        warn!("{degenerate} of {} scans fell back to the motion prior", files.len());
    }

    let trajectory_path = args.out.join("trajectory.txt");
    let timing_path = args.out.join("timing.csv");
    write_file(&trajectory_path, format_trajectory(&trajectory))?;
    write_file(&args.out.join("trajectory_kitti.txt"), format_kitti(&trajectory))?;
    write_file(&timing_path, &timing_csv)?;

    let n = files.len() as f64;
    let rate = |s: f64| if s > 0.0 { n / s } else { f64::INFINITY };
    let manifest = RunManifest {
        input: args.input.clone(),
        format: args.format,
        preset: args.preset.clone(),
        overrides: args.overrides.clone(),
        output: args.out.clone(),
        trajectory: trajectory_path,
        timing_csv: timing_path,
        degenerate_scans: degenerate,
        keyframes_created: keyframes,
        config,
        timing: TimingSummary {
            scans: files.len(),
            wall_clock_s: wall,
            hz: rate(wall),
            processing_hz: rate(total_s),
            filter_hz: rate(filter_s),
            features_hz: rate(features_s),
            registration_hz: rate(registration_s),
        },
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(input_err)?;
    write_atomic(&args.out.join("manifest.json"), &json)?;
    println!(
        "{} scans, {:.1} Hz ({:.1} Hz processing), {} degenerate -> {}",
        files.len(),
        manifest.timing.hz,
        manifest.timing.processing_hz,
        degenerate,
        args.out.display()
    );
    Ok(())
}

fn read_traj(path: &Path) -> Result<Trajectory, CliError> {
    read_trajectory(path).map_err(|e| match e {
        EvalError::Io { .. } => input_err(e),
        other => CliError::Input(format!("{}: {other}", path.display())),
    })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let estimate = read_traj(&args.input)?;
    let gt = read_traj(&args.gt)?;
    let report = match evaluate_drift(&estimate, &gt) {
        Ok(r) => r,
        Err(e @ (EvalError::TooShort | EvalError::NoTimeOverlap)) => {
            return Err(CliError::Infeasible(format!("{e:?}: {e}")))
        }
        Err(e) => return Err(input_err(e)),
    };
    if report.unmatched_poses > 0 {
        warn!(
            "{} estimate poses had no ground truth within tolerance",
            report.unmatched_poses
        );
    }
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => args
            .input
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    create_dir(&dir)?;
    let json = serde_json::to_string_pretty(&report).map_err(input_err)?;
    write_atomic(&dir.join("drift.json"), &json)?;
    println!("{report}");
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut sc = scenario(&args.scenario, args.seed).map_err(input_err)?;
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("override `{kv}` is not key=value")))?;
        sc.sim.set(k.trim(), v.trim()).map_err(|e: SynthError| input_err(e))?;
    }
    if let Some(n) = args.frames {
        sc.frames = sc.frames.min(n);
    }
    let scans_dir = args.out.join("scans");
    create_dir(&scans_dir)?;
    if args.format == ScanFormat::Image {
        let meta = format!(
            "range_resolution={}\nrange_offset={}\nsweep_duration={}\nexpected_bins={}\n",
            sc.sim.range_resolution, sc.sim.range_offset, sc.sim.sweep_duration, sc.sim.n_bins
        );
        write_file(&scans_dir.join(META_FILE), meta)?;
    }
    let mut gt = Trajectory::default();
    for (i, (scan, stamped)) in sc.generator().enumerate() {
        let path = scans_dir.join(format!("{i:06}.{}", args.format.extension()));
        match args.format {
            ScanFormat::Csv => write_polar_csv(&path, &scan),
            ScanFormat::Image => write_polar_image(&path, &scan),
        }
        .map_err(input_err)?;
        gt.push(stamped.time, stamped.pose).map_err(input_err)?;
    }
    write_file(&args.out.join("ground_truth.txt"), format_trajectory(&gt))?;
    write_file(&args.out.join("world.txt"), sc.world.to_text())?;
    println!(
        "{} frames of {} (seed {}), {:.0} m -> {}",
        sc.frames,
        sc.name,
        args.seed,
        gt.path_length(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_plot(args: &PlotArgs) -> Result<(), CliError> {
    let estimate = read_traj(&args.input)?;
    if estimate.is_empty() {
        return Err(CliError::Input(format!("{} holds no poses", args.input.display())));
    }
    let gt = match &args.gt {
        Some(p) => {
            let t = read_traj(p)?;
            if t.is_empty() {
                return Err(CliError::Input(format!("{} holds no poses", p.display())));
            }
            Some(t)
        }
        None => None,
    };
    write_file(&args.svg, render_svg(&estimate, gt.as_ref()))
}
