//! Command-line front end: `calibrate`, `gyro` and `synth`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use selfcal::formats::{
    format_matches, read_gyro_csv, read_json, read_matches, to_json, write_gyro_csv, GroundTruth,
    MatchesFile, PairMatches,
};
use selfcal::gyro::{integrate, tau_from_angle, window};
use selfcal::pipeline::{matrix_rows, Rows3};
use selfcal::synth::{add_noise, generate_scene, run_trials, summarize, trial_rng, NoiseConfig, SceneConfig};
use selfcal::{calibrate_pair, CalibrationReport, Error, PairOptions};

/// Exit status for degenerate input or when every pair was filtered out.
const EXIT_DEGENERATE: u8 = 2;
/// Exit status for unreadable or malformed input.
const EXIT_PARSE: u8 = 3;

/// Gyro samples written per synthetic pair: constant rate over this window.
const SYNTH_GYRO_SECONDS: f64 = 1.0;
const SYNTH_GYRO_RATE_HZ: f64 = 200.0;

#[derive(Parser)]
#[command(name = "selfcal", version, about = "Camera self-calibration from two views and a known rotation angle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate from a matches file.
    Calibrate(CalibrateArgs),
    /// Integrate a gyro CSV over a time window.
    Gyro(GyroArgs),
    /// Write a synthetic pair, or run a synthetic benchmark with --trials.
    Synth(SynthArgs),
}

#[derive(Args)]
#[group(id = "rotation", multiple = false)]
struct RotationArgs {
    /// Rotation angle in degrees, for every pair.
    #[arg(long, group = "rotation")]
    angle_deg: Option<f64>,
    /// Rotation trace 2 cos(theta) + 1, for every pair.
    #[arg(long, group = "rotation")]
    tau: Option<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Matches file: `x1 y1 x2 y2` per line.
    matches: PathBuf,
    #[command(flatten)]
    rotation: RotationArgs,
    #[arg(long, default_value_t = 5.0)]
    min_angle_deg: f64,
    #[arg(long, default_value_t = 50.0)]
    pp_window_px: f64,
    /// Principal-point window center `x,y`; defaults to the image center
    /// from the file's `image_size`.
    #[arg(long, value_parser = parse_center)]
    center: Option<(f64, f64)>,
    /// Largest accepted median Sampson distance in pixels.
    #[arg(long, default_value_t = 2.0)]
    max_residual_px: f64,
    #[arg(long, default_value_t = selfcal::pose::TRACE_TOLERANCE)]
    trace_tolerance: f64,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GyroArgs {
    /// CSV with header `timestamp_s,wx,wy,wz`.
    csv: PathBuf,
    #[arg(long)]
    t_start: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON file with `scene` and `noise` sections; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_points: Option<usize>,
    /// Fixed rotation angle in degrees instead of the configured range.
    #[arg(long)]
    angle_deg: Option<f64>,
    #[arg(long)]
    image_sigma: Option<f64>,
    #[arg(long)]
    angle_sigma: Option<f64>,
    /// Run this many trials and write `summary.json` and `trials.csv`.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct SynthConfig {
    scene: SceneConfig,
    noise: NoiseConfig,
}

fn parse_center(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let x: f64 = x.trim().parse().map_err(|e| format!("{e}"))?;
    let y: f64 = y.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((x, y))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => EXIT_PARSE,
        _ => EXIT_DEGENERATE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Gyro(a) => gyro(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn pair_tau(pair: &PairMatches, rotation: &RotationArgs) -> Option<f64> {
    rotation
        .tau
        .or(rotation.angle_deg.map(|a| tau_from_angle(a.to_radians())))
        .or(pair.tau)
        .or(pair.angle_deg.map(|a| tau_from_angle(a.to_radians())))
}

fn calibrate(args: CalibrateArgs) -> selfcal::Result<u8> {
    let file = read_matches(&args.matches)?;
    if file.pairs.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no correspondences in matches file".into(),
        });
    }
    let center = args.center.or(file.image_center());
    if center.is_none() {
        eprintln!("warning: no --center and no image_size directive; principal-point window disabled");
    }
    let options = PairOptions {
        min_angle_deg: args.min_angle_deg,
        pp_window_px: args.pp_window_px,
        center,
        max_residual_px: args.max_residual_px,
        trace_tolerance: args.trace_tolerance,
    };
    let mut reports = Vec::with_capacity(file.pairs.len());
    for pair in &file.pairs {
        let tau = pair_tau(pair, &args.rotation).ok_or_else(|| Error::Parse {
            line: 0,
            message: format!(
                "pair {}: no rotation given (use --angle-deg, --tau, or an angle_deg/tau directive)",
                pair.name
            ),
        })?;
        reports.push(calibrate_pair(&pair.name, &pair.points, tau, &options));
    }
    let report = CalibrationReport::from_pairs(reports);
    let json = to_json(&report)?;
    if let Some(path) = &args.out {
        std::fs::write(path, &json)?;
    }
    if args.json {
        print!("{json}");
    } else {
        print_report(&report);
    }
    Ok(if report.n_accepted > 0 { 0 } else { EXIT_DEGENERATE })
}

fn fmt_k(k: &Rows3) -> String {
    format!("f = {:.6}, principal point = ({:.6}, {:.6})", k[0][0], k[0][2], k[1][2])
}

fn print_report(report: &CalibrationReport) {
    for p in &report.pairs {
        println!("pair {}: {} (theta {:.4} deg, tau {:.8})", p.name, p.message, p.theta_deg, p.tau);
        println!(
            "  solutions {} real {} feasible {}",
            p.n_solutions, p.n_real, p.n_feasible
        );
        if let Some(r) = p.epipolar_residual_px {
            println!("  median Sampson distance {r:.3e} px");
        }
        if let (Some(k), Some(dev)) = (&p.k, p.trace_deviation) {
            println!("  {}", fmt_k(k));
            println!("  tr R - tau = {dev:.3e}, points in front {}/{}", p.positive_depth.unwrap_or(0), p.n_points);
        }
    }
    match &report.aggregate_k {
        Some(k) => {
            println!("accepted {}/{} pairs", report.n_accepted, report.pairs.len());
            println!("K = [{:?}, {:?}, {:?}]", k[0], k[1], k[2]);
        }
        None => println!("no pair accepted"),
    }
}

#[derive(Serialize)]
struct GyroOutput {
    n_samples: usize,
    theta_deg: f64,
    tau: f64,
    r: Rows3,
}

fn gyro(args: GyroArgs) -> selfcal::Result<u8> {
    let samples = read_gyro_csv(File::open(&args.csv)?)?;
    let lo = args.t_start.unwrap_or(f64::NEG_INFINITY);
    let hi = args.t_end.unwrap_or(f64::INFINITY);
    let selected = window(&samples, lo, hi);
    if selected.is_empty() {
        return Err(Error::InvalidInput(format!("no gyro samples in [{lo}, {hi}]")));
    }
    let est = integrate(&selected)?;
    let out = GyroOutput {
        n_samples: selected.len(),
        theta_deg: est.theta_deg(),
        tau: est.tau,
        r: matrix_rows(&est.r),
    };
    if args.json {
        print!("{}", to_json(&out)?);
    } else {
        println!("samples {}", out.n_samples);
        println!("theta_deg {}", out.theta_deg);
        println!("tau {}", out.tau);
        for row in &out.r {
            println!("R {} {} {}", row[0], row[1], row[2]);
        }
    }
    Ok(0)
}

fn synth_config(args: &SynthArgs) -> selfcal::Result<SynthConfig> {
    let mut cfg: SynthConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.scene.seed = s;
    }
    if let Some(n) = args.n_points {
        cfg.scene.n_points = n;
    }
    if let Some(a) = args.angle_deg {
        cfg.scene.rotation_angle = Some(a.to_radians());
    }
    if let Some(s) = args.image_sigma {
        cfg.noise.image_sigma = s;
    }
    if let Some(s) = args.angle_sigma {
        cfg.noise.angle_sigma = s;
    }
    cfg.scene.validate()?;
    cfg.noise.validate()?;
    Ok(cfg)
}

fn synth(args: SynthArgs) -> selfcal::Result<u8> {
    let cfg = synth_config(&args)?;
    std::fs::create_dir_all(&args.out)?;
    match args.trials {
        Some(n) => synth_trials(&cfg, n, &args.out, args.json),
        None => synth_pair(&cfg, &args.out, args.json),
    }
}

fn synth_pair(cfg: &SynthConfig, out: &Path, json: bool) -> selfcal::Result<u8> {
    let mut rng = trial_rng(cfg.scene.seed, 0);
    let scene = generate_scene(&cfg.scene, &mut rng)?;
    let (points, theta) = add_noise(&scene.correspondences, &cfg.noise, scene.theta, &mut rng);
    let file = MatchesFile {
        k_gt: Some(scene.k),
        image_size: Some((cfg.scene.image_width, cfg.scene.image_height)),
        pairs: vec![PairMatches {
            name: "synth".into(),
            points,
            angle_deg: None,
            tau: None,
        }],
    };
    std::fs::write(out.join("matches.txt"), format_matches(&file))?;

    // The gyro encodes the (possibly noisy) angle about the true axis.
    let noisy = selfcal::synth::Scene { theta, ..scene.clone() };
    let samples = noisy.gyro_samples(SYNTH_GYRO_SECONDS, SYNTH_GYRO_RATE_HZ);
    write_gyro_csv(BufWriter::new(File::create(out.join("gyro.csv"))?), &samples)?;

    let gt = GroundTruth {
        k: matrix_rows(&scene.k),
        r: matrix_rows(&scene.r),
        t: [scene.t.x, scene.t.y, scene.t.z],
        theta_deg: scene.theta.to_degrees(),
        tau: scene.tau(),
        image_size: (cfg.scene.image_width, cfg.scene.image_height),
        n_points: scene.correspondences.len(),
    };
    let gt_json = to_json(&gt)?;
    std::fs::write(out.join("ground_truth.json"), &gt_json)?;
    if json {
        print!("{gt_json}");
    } else {
        println!("wrote matches.txt, gyro.csv, ground_truth.json to {}", out.display());
    }
    Ok(0)
}

fn synth_trials(cfg: &SynthConfig, n: usize, out: &Path, json: bool) -> selfcal::Result<u8> {
    let results = run_trials(&cfg.scene, &cfg.noise, n);
    let summary = summarize(&results);
    let summary_json = to_json(&summary)?;
    std::fs::write(out.join("summary.json"), &summary_json)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out.join("trials.csv"))?));
    for r in &results {
        w.serialize(r)?;
    }
    w.flush()?;
    if json {
        print!("{summary_json}");
    } else {
        println!("trials {} failures {}", summary.n_trials, summary.n_failures);
        println!("median relative K error {:e}", summary.median_rel_k_error);
        println!("median rotation error {:e} deg", summary.median_rotation_error_deg);
        println!("median translation error {:e} deg", summary.median_translation_error_deg);
        println!("real solutions histogram {:?}", summary.real_solutions_histogram);
        println!("feasible solutions histogram {:?}", summary.feasible_solutions_histogram);
    }
    Ok(0)
}
