//! `stance-odom`: replay sensor logs, run simulator presets and score
//! trajectories.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 malformed log or
//! trajectory data, 3 invalid configuration or plan.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use stance_core::metrics::compute_metrics;
use stance_core::replay::{run_replay, ReplayError};
use stance_core::sim::{degrade, generate_gait, preset, GaitPlan, Imperfections, SimError};
use stance_core::stream::{read_log, read_trajectory, write_log, write_trajectory, StreamError};
use stance_core::{Estimator, EstimatorConfig};

#[derive(Parser)]
#[command(name = "stance-odom", version, about = "Contact-anchored proprioceptive odometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sensor log through the estimator and write the trajectory CSV.
    Replay(ReplayArgs),
    /// Generate a sensor log and ground truth from a preset or plan file.
    Simulate(SimulateArgs),
    /// Closure error of a trajectory, plus per-axis MAE against ground truth.
    Metrics(MetricsArgs),
    /// Print support planes and contact anchors after replaying a log.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    /// Estimator configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trajectory CSV; diagnostics go to a sibling `.diag.jsonl` file.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth trajectory CSV; metrics are printed when given.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in plan name.
    #[arg(long, conflicts_with = "plan", required_unless_present = "plan")]
    preset: Option<String>,
    /// Plan file.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Sensor log (JSON lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Estimator configuration matching the simulated robot.
    #[arg(long)]
    config_out: Option<PathBuf>,
    /// Seed for touchdown noise and sensor imperfections.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drop the imperfections a preset ships with.
    #[arg(long)]
    clean: bool,
    /// Joint encoder resolution (rad).
    #[arg(long)]
    encoder_quantum: Option<f64>,
    /// Probability of a multiplicative joint-rate spike per channel and sample.
    #[arg(long)]
    spike_prob: Option<f64>,
    #[arg(long)]
    spike_gain: Option<f64>,
    /// IMU yaw drift rate (rad/s).
    #[arg(long)]
    yaw_drift: Option<f64>,
    /// Fractional wheel slip.
    #[arg(long)]
    wheel_slip: Option<f64>,
}

#[derive(Args)]
struct MetricsArgs {
    trajectory: PathBuf,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stop after the last frame at or before this stamp.
    #[arg(long)]
    at: Option<f64>,
}

enum Failure {
    Data(anyhow::Error),
    Config(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Data(_) => 2,
            Failure::Config(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Data(e) | Failure::Config(e) | Failure::Other(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

fn stream_failure(path: &Path, e: StreamError) -> Failure {
    match e {
        StreamError::Io(io) => Failure::Other(anyhow::Error::new(io).context(format!("reading {}", path.display()))),
        parse => Failure::Data(anyhow::Error::new(parse).context(format!("in {}", path.display()))),
    }
}

fn load_config(path: Option<&Path>) -> Result<EstimatorConfig, Failure> {
    match path {
        Some(p) => EstimatorConfig::from_path(p)
            .map_err(|e| Failure::Config(anyhow::Error::new(e).context(format!("config {}", p.display())))),
        None => Ok(EstimatorConfig::default()),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(Failure::Other)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::Other)
}

fn diagnostics_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.diag.jsonl"))
}

fn read_truth(path: &Path) -> Result<Vec<stance_core::BodyState>, Failure> {
    read_trajectory(open(path)?).map_err(|e| stream_failure(path, e))
}

/// Prints pretty JSON to stdout; a closed pipe is not an error.
fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_metrics(trajectory: &[stance_core::BodyState], truth: Option<&[stance_core::BodyState]>) -> Result<(), Failure> {
    let metrics = compute_metrics(trajectory, truth).map_err(|e| Failure::Data(e.into()))?;
    print_json(&metrics)
}

fn replay(args: ReplayArgs) -> Result<(), Failure> {
    let config = load_config(args.config.as_deref())?;
    let log = open(&args.log)?;
    let diag_path = diagnostics_path(&args.out);
    let mut diag = create(&diag_path)?;
    let summary = run_replay(log, &config, create(&args.out)?, Some(&mut diag)).map_err(|e| match e {
        ReplayError::Stream(s) => stream_failure(&args.log, s),
        ReplayError::Frame { .. } => Failure::Data(anyhow::Error::new(e).context(format!("in {}", args.log.display()))),
        ReplayError::Config(c) => Failure::Config(c.into()),
        ReplayError::Io(io) => Failure::Other(io.into()),
    })?;
    for warning in &summary.warnings {
        eprintln!("warning: {warning}");
    }
    eprintln!("replayed {} frames into {}", summary.frames, args.out.display());
    if let Some(gt) = args.ground_truth {
        let trajectory = read_truth(&args.out)?;
        let truth = read_truth(&gt)?;
        print_metrics(&trajectory, Some(&truth))?;
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let plan_failure = |e: SimError| Failure::Config(e.into());
    let (mut plan, mut imperfections) = match (&args.preset, &args.plan) {
        (Some(name), _) => preset(name).map_err(plan_failure)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let plan = GaitPlan::parse(&text)
                .map_err(|e| Failure::Config(anyhow::Error::new(e).context(format!("plan {}", path.display()))))?;
            (plan, Imperfections::default())
        }
        (None, None) => unreachable!("clap requires --preset or --plan"),
    };
    if args.clean {
        imperfections = Imperfections::default();
    }
    let overrides = [
        (args.encoder_quantum, &mut imperfections.encoder_quantum),
        (args.spike_prob, &mut imperfections.spike_probability),
        (args.spike_gain, &mut imperfections.spike_gain),
        (args.yaw_drift, &mut imperfections.yaw_drift),
        (args.wheel_slip, &mut imperfections.wheel_slip),
    ];
    for (value, slot) in overrides {
        if let Some(v) = value {
            *slot = v;
        }
    }
    imperfections.validate().map_err(|e| Failure::Config(e.into()))?;
    plan.seed = args.seed;

    let output = generate_gait(&plan).map_err(plan_failure)?;
    let frames = degrade(&output.frames, &imperfections, args.seed);
    write_log(create(&args.out)?, &frames)?;
    if let Some(path) = &args.ground_truth {
        write_trajectory(create(path)?, &output.truth)?;
    }
    if let Some(path) = &args.config_out {
        let radius = plan.legs.first().map_or(0.0, |l| l.wheel_radius);
        let mut out = create(path)?;
        writeln!(out, "# robot matching the simulated plan")?;
        writeln!(out, "robot.legs = {}", plan.legs.len())?;
        writeln!(out, "robot.wheel_radius = {radius}")?;
        out.flush()?;
    }
    eprintln!("wrote {} frames ({:.1} s) to {}", frames.len(), plan.duration(), args.out.display());
    Ok(())
}

fn metrics(args: MetricsArgs) -> Result<(), Failure> {
    let trajectory = read_truth(&args.trajectory)?;
    let truth = args.ground_truth.as_deref().map(read_truth).transpose()?;
    print_metrics(&trajectory, truth.as_deref())
}

fn inspect(args: InspectArgs) -> Result<(), Failure> {
    let config = load_config(args.config.as_deref())?;
    let frames = read_log(open(&args.log)?).map_err(|e| stream_failure(&args.log, e))?;
    let mut estimator = Estimator::new(config).map_err(|e| Failure::Config(e.into()))?;
    for frame in frames.iter().take_while(|f| args.at.map_or(true, |at| f.stamp <= at)) {
        estimator.step(frame).map_err(|e| Failure::Data(e.into()))?;
    }
    let report = serde_json::json!({
        "state": estimator.state(),
        "diagnostics": estimator.diagnostics(),
    });
    print_json(&report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Replay(a) => replay(a),
        Command::Simulate(a) => simulate(a),
        Command::Metrics(a) => metrics(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}
