//! `gaitkit` — command-line front end for the gait analysis toolkit.
//!
//! Subcommands: `simulate` (synthesize a session), `analyze` (sessions →
//! metrics table + box statistics), `plot` (bundle → SVG), `calibrate`
//! (standing session → mounting calibration file).
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use gait_core::kinematics::{static_calibrate, Joint, Side};
use gait_core::kv::KvFile;
use gait_core::math::Vec3;
use gait_core::pipeline::{analyze_session_dir, AnalyzedSession, PipelineError};
use gait_core::plot::{render_box_panel, render_cycle_overlay};
use gait_core::report::{
    assemble_report, box_report_json, cycle_traces_csv, metrics_csv, metrics_text, parse_box_report,
};
use gait_core::session::{calibration_to_kv, load_session, synchronize, SessionError, ShoeConfig};
use gait_core::synth::{simulate_session, write_session, SynthError};

use config::{parse_formats, OutputFormat, ToolConfig};

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidProfile(m) => CliError::Usage(m),
            SynthError::Session(s) => CliError::Data(s.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Parser)]
#[command(
    name = "gaitkit",
    version,
    about = "IMU gait analysis toolkit: simulate, analyze, plot, calibrate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key-value config file overriding built-in defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<ToolConfig, CliError> {
        let mut config = ToolConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let kv = KvFile::parse(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            config
                .apply_kv(&kv)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a walking session into a session directory.
    Simulate(SimulateArgs),
    /// Analyze session directories into a metrics table and box statistics.
    Analyze(AnalyzeArgs),
    /// Render SVG plots from an analysis output directory.
    Plot(PlotArgs),
    /// Derive a mounting calibration from a quiet-standing session.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output session directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of strides to walk.
    #[arg(long)]
    strides: Option<u32>,
    /// Stride period in seconds.
    #[arg(long)]
    period: Option<f64>,
    #[arg(long, value_name = "DEG")]
    hip_amplitude: Option<f64>,
    #[arg(long, value_name = "DEG")]
    knee_amplitude: Option<f64>,
    #[arg(long, value_name = "DEG")]
    ankle_amplitude: Option<f64>,
    /// Quiet standing before walking, seconds.
    #[arg(long, value_name = "S")]
    lead_in: Option<f64>,
    /// Disable sensor linear acceleration (gravity-only accelerometer).
    #[arg(long)]
    quasi_static: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Accelerometer noise std, m/s².
    #[arg(long, value_name = "STD")]
    accel_noise: Option<f64>,
    /// Gyro noise std, rad/s.
    #[arg(long, value_name = "STD")]
    gyro_noise: Option<f64>,
    /// Constant gyro bias, rad/s, as `x,y,z`.
    #[arg(long, value_name = "X,Y,Z")]
    gyro_bias: Option<String>,
    /// Randomize per-sensor mounting offsets up to this many degrees.
    #[arg(long, value_name = "DEG")]
    mount_offset_deg: Option<f64>,
    #[arg(long)]
    candidate: Option<String>,
    /// Shoe label, e.g. H1.
    #[arg(long)]
    shoe: Option<String>,
    /// Platform height, inches.
    #[arg(long, value_name = "IN")]
    platform: Option<f64>,
    /// Heel height, inches.
    #[arg(long, value_name = "IN")]
    heel: Option<f64>,
    /// Sample rate, Hz.
    #[arg(long, value_name = "HZ")]
    rate: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Session directories to analyze.
    #[arg(value_name = "SESSION")]
    sessions: Vec<PathBuf>,
    /// Output directory for the report bundle.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated output formats: csv,text,json.
    #[arg(long, value_name = "LIST")]
    formats: Option<String>,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Analysis output directory produced by `analyze`.
    #[arg(value_name = "BUNDLE")]
    bundle: Option<PathBuf>,
    /// Output directory for SVG files.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also render per-cycle joint-angle overlay plots.
    #[arg(long)]
    overlays: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Quiet-standing session directory.
    #[arg(value_name = "SESSION")]
    session: Option<PathBuf>,
    /// Output directory for `calibration.kv`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Standing window length to use, seconds.
    #[arg(long, value_name = "S", default_value_t = 2.0)]
    window: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let kind = e.kind();
            if kind == ErrorKind::DisplayHelp || kind == ErrorKind::DisplayVersion {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Plot(args) => cmd_plot(args),
        Command::Calibrate(args) => cmd_calibrate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut config = args.config.load()?;
    if let Some(v) = args.strides {
        config.profile.n_strides = v;
    }
    if let Some(v) = args.period {
        config.profile.stride_period_s = v;
    }
    if let Some(v) = args.hip_amplitude {
        config.profile.hip.amplitude_deg = v;
    }
    if let Some(v) = args.knee_amplitude {
        config.profile.knee.amplitude_deg = v;
    }
    if let Some(v) = args.ankle_amplitude {
        config.profile.ankle.amplitude_deg = v;
    }
    if let Some(v) = args.lead_in {
        config.profile.lead_in_s = v;
    }
    if args.quasi_static {
        config.profile.quasi_static = true;
    }
    if let Some(v) = args.seed {
        config.noise.seed = v;
    }
    if let Some(v) = args.accel_noise {
        config.noise.accel_noise_std = v;
    }
    if let Some(v) = args.gyro_noise {
        config.noise.gyro_noise_std = v;
    }
    if let Some(raw) = &args.gyro_bias {
        let parts: Vec<f64> = raw
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Usage(format!("--gyro-bias: `{raw}` is not `x,y,z`")))?;
        if parts.len() != 3 {
            return Err(CliError::Usage(format!(
                "--gyro-bias: `{raw}` is not `x,y,z`"
            )));
        }
        config.noise.gyro_bias = Vec3::new(parts[0], parts[1], parts[2]);
    }
    if let Some(v) = args.mount_offset_deg {
        config.mount_offset_max_deg = v;
    }
    if let Some(v) = &args.candidate {
        config.candidate = v.clone();
    }
    if let Some(v) = &args.shoe {
        config.shoe_label = v.clone();
    }
    if let Some(v) = args.platform {
        config.shoe_platform_in = v;
    }
    if let Some(v) = args.heel {
        config.shoe_heel_in = v;
    }
    if let Some(v) = args.rate {
        config.sample_rate_hz = v;
    }

    if args.config.print_config {
        print!("{}", config.to_kv().to_text());
        return Ok(());
    }
    let out = args
        .out
        .ok_or_else(|| CliError::Usage("--out <DIR> is required (see --help)".to_string()))?;

    // Flag-level validation so bad values name the flag, not the profile field.
    for (flag, v) in [
        ("--hip-amplitude", config.profile.hip.amplitude_deg),
        ("--knee-amplitude", config.profile.knee.amplitude_deg),
        ("--ankle-amplitude", config.profile.ankle.amplitude_deg),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(CliError::Usage(format!("{flag} must be >= 0, got {v}")));
        }
    }
    if !(config.profile.stride_period_s.is_finite() && config.profile.stride_period_s > 0.0) {
        return Err(CliError::Usage(format!(
            "--period must be > 0, got {}",
            config.profile.stride_period_s
        )));
    }

    let shoe = ShoeConfig::new(
        &config.shoe_label,
        config.shoe_platform_in,
        config.shoe_heel_in,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut noise = config.noise.clone();
    if config.mount_offset_max_deg > 0.0 {
        noise = noise.with_random_mounting(
            &gait_core::kinematics::SensorLayout::default(),
            config.mount_offset_max_deg,
        );
    }
    let sim = simulate_session(
        &config.profile,
        &noise,
        &config.candidate,
        shoe,
        config.sample_rate_hz,
    )?;
    write_session(&sim, &out)?;
    println!(
        "wrote session: {} ({} strides of {} s at {} Hz)",
        out.display(),
        config.profile.n_strides,
        config.profile.stride_period_s,
        config.sample_rate_hz
    );
    Ok(())
}

fn session_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let mut config = args.config.load()?;
    if let Some(raw) = &args.formats {
        config.formats = parse_formats(raw).map_err(CliError::Usage)?;
    }
    if args.config.print_config {
        print!("{}", config.to_kv().to_text());
        return Ok(());
    }
    if args.sessions.is_empty() {
        return Err(CliError::Usage(
            "no sessions given; usage: gaitkit analyze <SESSION>... --out <DIR>".to_string(),
        ));
    }
    let out = args
        .out
        .ok_or_else(|| CliError::Usage("--out <DIR> is required (see --help)".to_string()))?;

    // Sessions are independent; analyze them on a worker pool, then sort for
    // deterministic output.
    let results: Vec<(PathBuf, Result<AnalyzedSession, PipelineError>)> = args
        .sessions
        .par_iter()
        .map(|dir| (dir.clone(), analyze_session_dir(dir, &config.pipeline)))
        .collect();

    let mut pairs: Vec<(PathBuf, AnalyzedSession)> = Vec::new();
    let mut failures = 0usize;
    for (dir, result) in results {
        match result {
            Ok(a) => pairs.push((dir, a)),
            Err(e) => {
                failures += 1;
                eprintln!("warning: session {} skipped: {e}", dir.display());
            }
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Data(format!("all {failures} session(s) failed")));
    }
    pairs.sort_by(|(pa, a), (pb, b)| {
        (a.meta.candidate_id.as_str(), a.meta.shoe.label.as_str(), pa).cmp(&(
            b.meta.candidate_id.as_str(),
            b.meta.shoe.label.as_str(),
            pb,
        ))
    });
    let labels: Vec<String> = pairs.iter().map(|(dir, _)| session_label(dir)).collect();
    let analyzed: Vec<AnalyzedSession> = pairs.into_iter().map(|(_, a)| a).collect();

    let (rows, box_report) =
        assemble_report(&analyzed).map_err(|e| CliError::Internal(e.to_string()))?;
    if config.formats.contains(&OutputFormat::Csv) {
        write_file(&out.join("metrics.csv"), &metrics_csv(&rows))?;
    }
    if config.formats.contains(&OutputFormat::Text) {
        write_file(&out.join("metrics.txt"), &metrics_text(&rows))?;
    }
    if config.formats.contains(&OutputFormat::Json) {
        let json = box_report_json(&box_report).map_err(|e| CliError::Internal(e.to_string()))?;
        write_file(&out.join("boxstats.json"), &json)?;
    }

    // Per-session cycle traces feed the overlay plots.
    for (label, a) in labels.iter().zip(&analyzed) {
        for ((side, joint), traces) in &a.cycle_traces {
            let name = format!("cycles_{}_{}.csv", side.as_str(), joint.as_str());
            write_file(
                &out.join("sessions").join(label).join(name),
                &cycle_traces_csv(traces),
            )?;
        }
    }

    println!(
        "analyzed {} session(s) ({} skipped) -> {}",
        analyzed.len(),
        failures,
        out.display()
    );
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<(), CliError> {
    let config = args.config.load()?;
    if args.config.print_config {
        print!("{}", config.to_kv().to_text());
        return Ok(());
    }
    let bundle = args
        .bundle
        .ok_or_else(|| CliError::Usage("usage: gaitkit plot <BUNDLE> --out <DIR>".to_string()))?;
    let out = args
        .out
        .ok_or_else(|| CliError::Usage("--out <DIR> is required (see --help)".to_string()))?;

    let box_path = bundle.join("boxstats.json");
    let text = fs::read_to_string(&box_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", box_path.display())))?;
    let report = parse_box_report(&text).map_err(|e| CliError::Data(e.to_string()))?;

    let mut written = 0usize;
    for panel in &report.panels {
        let name = format!(
            "box_{}_{}_{}.svg",
            panel.candidate, panel.joint, panel.group
        );
        write_file(&out.join(name), &render_box_panel(panel))?;
        written += 1;
    }
    for (group, members) in gait_core::report::SHOE_GROUPS {
        let seen: Vec<&str> = report
            .panels
            .iter()
            .filter(|p| p.group == group)
            .flat_map(|p| p.boxes.iter().map(|b| b.shoe.as_str()))
            .collect();
        for member in members {
            if !seen.contains(member) {
                eprintln!("warning: group {group}: shoe {member} missing from bundle");
            }
        }
    }

    if args.overlays {
        let sessions_dir = bundle.join("sessions");
        if sessions_dir.is_dir() {
            let mut session_dirs: Vec<PathBuf> = fs::read_dir(&sessions_dir)
                .map_err(|e| CliError::Data(format!("{}: {e}", sessions_dir.display())))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            session_dirs.sort();
            for session in session_dirs {
                let label = session_label(&session);
                for side in Side::ALL {
                    for joint in Joint::ALL {
                        let name = format!("cycles_{}_{}.csv", side.as_str(), joint.as_str());
                        let path = session.join(&name);
                        if !path.is_file() {
                            continue;
                        }
                        let text = fs::read_to_string(&path)
                            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                        let traces = parse_cycle_traces(&text)
                            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                        let title = format!(
                            "{label} — {} {} angle over the gait cycle",
                            side.as_str(),
                            joint.as_str()
                        );
                        let svg = render_cycle_overlay(&title, &traces);
                        let out_name =
                            format!("overlay_{label}_{}_{}.svg", side.as_str(), joint.as_str());
                        write_file(&out.join(out_name), &svg)?;
                        written += 1;
                    }
                }
            }
        }
    }
    println!("wrote {written} plot(s) -> {}", out.display());
    Ok(())
}

fn parse_cycle_traces(text: &str) -> Result<Vec<Vec<f64>>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty cycle trace file")?;
    let n_cycles = header.split(',').count().saturating_sub(1);
    let mut traces = vec![Vec::with_capacity(101); n_cycles];
    for (idx, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cycles + 1 {
            return Err(format!(
                "line {}: expected {} fields",
                idx + 2,
                n_cycles + 1
            ));
        }
        for (k, field) in fields[1..].iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| format!("line {}: `{field}` is not a number", idx + 2))?;
            traces[k].push(v);
        }
    }
    Ok(traces)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let config = args.config.load()?;
    if args.config.print_config {
        print!("{}", config.to_kv().to_text());
        return Ok(());
    }
    let session_dir = args.session.ok_or_else(|| {
        CliError::Usage("usage: gaitkit calibrate <SESSION> --out <DIR>".to_string())
    })?;
    let out = args
        .out
        .ok_or_else(|| CliError::Usage("--out <DIR> is required (see --help)".to_string()))?;
    if !(args.window.is_finite() && args.window > 0.0) {
        return Err(CliError::Usage(format!(
            "--window must be > 0, got {}",
            args.window
        )));
    }

    let session = load_session(&session_dir)?;
    let synced = synchronize(&session.modules, &session.meta)?;
    let mut standing = BTreeMap::new();
    for (&sensor_id, stream) in &synced.streams {
        let samples: Vec<_> = stream
            .samples
            .iter()
            .copied()
            .take_while(|s| s.timestamp_s < args.window)
            .collect();
        standing.insert(sensor_id, samples);
    }
    let calib = static_calibrate(&standing, &session.meta.layout)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let path = out.join(gait_core::session::CALIBRATION_FILE);
    write_file(&path, &calibration_to_kv(&calib).to_text())?;
    println!("wrote calibration: {}", path.display());
    Ok(())
}
