use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use kvil_core::constraint::Thresholds;
use kvil_core::extract::{extract_task, ExtractConfig};
use kvil_core::ingest::{load_demonstration_set, load_scene, write_demonstration_set, LoadOptions};
use kvil_core::kac::ControllerGains;
use kvil_core::metrics::{evaluate, render_table, Metrics};
use kvil_core::pme::default_lambda_grid;
use kvil_core::sim::{simulate_reproduction, SceneInstance, SimConfig, SimLog};
use kvil_core::synth::{generate_synthetic, perturbed_scene, synthetic_scene, SyntheticKind, SyntheticTaskSpec};
use kvil_core::task::{load_task, write_task, TaskRepresentation};

#[derive(Parser)]
#[command(name = "kvil", version, about = "Keypoint constraint extraction and reproduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic demonstrations with a known constraint.
    Synth(SynthArgs),
    /// Extract a task representation from demonstrations.
    Extract(ExtractArgs),
    /// Run simulated reproductions of a task.
    Reproduce(ReproduceArgs),
    /// Recompute metrics from reproduction logs.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    kind: SyntheticKind,
    /// Number of demonstrations (defaults to the kind's minimum).
    #[arg(long)]
    n_demos: Option<usize>,
    /// Observation noise σ in meters.
    #[arg(long, default_value_t = 0.0015)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    time_steps: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the ground truth as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    demos: PathBuf,
    #[arg(long, default_value_t = 0.02)]
    xi1: f64,
    #[arg(long, default_value_t = 0.10)]
    xi2: f64,
    /// `auto` or a comma-separated list of smoothing weights.
    #[arg(long, default_value = "auto")]
    lambda_grid: String,
    /// Moving-average window applied on load (1 disables smoothing).
    #[arg(long, default_value_t = 5)]
    smooth: usize,
    /// Resample every demonstration to this many steps.
    #[arg(long)]
    time_steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["scene", "synth_scene"]))]
struct ReproduceArgs {
    #[arg(long)]
    task: PathBuf,
    /// Scene observation; slaves start at the observed positions.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Build the scene from the task's reference geometry.
    #[arg(long)]
    synth_scene: bool,
    /// Slave stretch along its main axis for `--synth-scene`.
    #[arg(long, default_value_t = 1.0)]
    slave_scale: f64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_priority: bool,
    /// Controller gains as JSON; the flags below override it.
    #[arg(long)]
    gains: Option<PathBuf>,
    /// Keypoint stiffness K̄p, critically damped.
    #[arg(long)]
    stiffness: Option<f64>,
    #[arg(long)]
    g1: Option<f64>,
    #[arg(long)]
    g2: Option<f64>,
    /// Movement primitive duration in seconds.
    #[arg(long, default_value_t = 3.0)]
    duration: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = kvil_core::metrics::DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    logs: PathBuf,
    #[arg(long, default_value_t = kvil_core::metrics::DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Write the metrics as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Extract(a) => extract(a),
        Command::Reproduce(a) => reproduce(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("KVIL_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().with_context(|| format!("KVIL_THREADS must be a count, got `{value}`"))?;
    if threads == 0 {
        bail!("KVIL_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let mut spec = SyntheticTaskSpec::new(a.kind);
    if let Some(n) = a.n_demos {
        spec.demos = n;
    }
    spec.noise = a.noise;
    spec.time_steps = a.time_steps;
    let (set, truth) = generate_synthetic(&spec, a.seed)?;
    write_demonstration_set(&set, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.truth {
        write_json(path, &truth)?;
    }
    println!(
        "{} demonstrations of `{}` ({} steps) written to {}",
        set.demo_count(),
        a.kind,
        set.time_steps(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn lambda_grid(text: &str) -> Result<Vec<f64>> {
    if text.trim() == "auto" {
        return Ok(default_lambda_grid());
    }
    let grid = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad lambda `{s}`")))
        .collect::<Result<Vec<f64>>>()?;
    if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        bail!("lambda grid needs non-negative finite values");
    }
    Ok(grid)
}

fn extract(a: ExtractArgs) -> Result<ExitCode> {
    let opts = LoadOptions {
        time_steps: a.time_steps,
        smoothing_window: a.smooth,
    };
    let demos = load_demonstration_set(&a.demos, opts).with_context(|| format!("reading {}", a.demos.display()))?;
    let mut cfg = ExtractConfig {
        thresholds: Thresholds::new(a.xi1, a.xi2)?,
        ..ExtractConfig::default()
    };
    cfg.pme.lambda_grid = lambda_grid(&a.lambda_grid)?;
    let task = extract_task(&demos, &cfg)?;
    write_task(&task, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    print!("{}", task_table(&task));
    Ok(ExitCode::SUCCESS)
}

fn task_table(task: &TaskRepresentation) -> String {
    let mut out = format!("{:<4} {:<14} {:<5} {:>9} {:>8} {:>10}\n", "k", "keypoint", "kind", "candidate", "frame", "score");
    for (i, k) in task.keypoints.iter().enumerate() {
        out.push_str(&format!(
            "{:<4} {:<14} {:<5} {:>9} {:>8} {:>10.3e}\n",
            format!("k{}", i + 1),
            format!("{}:{}", k.slave, k.descriptor_id),
            k.kind().as_str(),
            k.candidate,
            k.frame.origin_id,
            k.score
        ));
    }
    out
}

fn reproduce(a: ReproduceArgs) -> Result<ExitCode> {
    let task = load_task(&a.task).with_context(|| format!("reading {}", a.task.display()))?;
    let mut gains = match &a.gains {
        Some(path) => serde_json::from_str(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
            .with_context(|| format!("parsing {}", path.display()))?,
        None => ControllerGains::default(),
    };
    if let Some(k) = a.stiffness {
        gains = gains.with_stiffness(k);
    }
    if let Some(g) = a.g1 {
        gains.g1 = g;
    }
    if let Some(g) = a.g2 {
        gains.g2 = g;
    }
    gains.validate()?;
    let cfg = SimConfig {
        duration: a.duration,
        dt: a.dt,
        priority: !a.no_priority,
        ..SimConfig::default()
    };
    let base = match &a.scene {
        Some(path) => {
            let obs = load_scene(path).with_context(|| format!("reading {}", path.display()))?;
            Some(SceneInstance::from_observation(&task, &obs)?)
        }
        None => None,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let logs: Vec<SimLog> = (0..a.trials)
        .into_par_iter()
        .map(|i| -> Result<SimLog> {
            let seed = a.seed.wrapping_add(i as u64);
            let scene = match &base {
                Some(b) => perturbed_scene(&task, b, seed)?,
                None => synthetic_scene(&task, a.slave_scale, seed)?,
            };
            Ok(simulate_reproduction(&task, &scene, &gains, &cfg)?)
        })
        .collect::<Result<_>>()?;
    for (i, log) in logs.iter().enumerate() {
        log.save(a.out.join(trial_name(i)))?;
    }
    let metrics = evaluate(&logs, a.tolerance);
    write_json(&a.out.join("metrics.json"), &metrics)?;
    print!("{}", render_table(&metrics));
    report_failures(&logs)
}

fn trial_name(i: usize) -> String {
    format!("trial_{i:02}.ndjson")
}

fn report_failures(logs: &[SimLog]) -> Result<ExitCode> {
    let failed: Vec<String> = logs
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.header.failure.as_ref().map(|f| format!("trial {i}: {f}")))
        .collect();
    if failed.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for f in &failed {
        eprintln!("{f}");
    }
    eprintln!("{} of {} trials diverged", failed.len(), logs.len());
    Ok(ExitCode::from(2))
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let logs = read_logs(&a.logs)?;
    let metrics: Metrics = evaluate(&logs, a.tolerance);
    if let Some(path) = &a.out {
        write_json(path, &metrics)?;
    }
    print!("{}", render_table(&metrics));
    Ok(ExitCode::SUCCESS)
}

fn read_logs(dir: &Path) -> Result<Vec<SimLog>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
        .collect();
    if paths.is_empty() {
        bail!("no .ndjson logs in {}", dir.display());
    }
    paths.sort();
    paths
        .iter()
        .map(|p| SimLog::load(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
