//! `mtt`: run tracking scenarios and the accuracy, scaling and consensus
//! studies, emitting tidy CSV plus a manifest that replays the invocation.
//!
//! Exit status: 0 on success, 1 on configuration errors (with line/column for
//! malformed files), 2 on runtime failures (with the failing frame index).

mod jobs;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use mtt_core::scaling::{scaling_template, JPDAF_MAX_TARGETS};
use mtt_core::study::{ConsensusStudy, NoiseCell, ScenarioSource, StudyPlan};
use mtt_core::{FilterKind, MttError, NoiseAxis, ScenarioConfig};

use manifest::{Job, Manifest};

/// Above this many targets the JPDAF needs an explicit opt-in.
const JPDAF_GUARD: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "mtt", version, about = "Image-plane multi-target tracking: Kalman/ML, JPDAF and GM-PHD studies")]
struct Cli {
    /// Replay a manifest written by an earlier invocation instead of a subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    manifest: Option<PathBuf>,

    /// Directory receiving CSVs and the manifest.
    #[arg(long, global = true, env = "MTT_DEFAULT_OUTPUT", default_value = "mtt-output")]
    output_dir: PathBuf,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Track one scenario with one or more filters.
    Run(RunArgs),
    /// Accuracy under clutter, Gaussian noise and missed detections.
    NoiseStudy(NoiseArgs),
    /// Association+update time against the number of targets.
    ScalingStudy(ScalingArgs),
    /// Multi-observer ID consensus on random separated scenes.
    ConsensusStudy(ConsensusArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML) or builtin name such as `crossing3`.
    #[arg(long, default_value = "crossing3")]
    scenario: String,
    /// `all` or a comma-separated list of kalman, jpdaf, gmphd.
    #[arg(long, default_value = "all")]
    filter: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Allow the JPDAF on scenarios with more than 10 targets.
    #[arg(long)]
    allow_large_jpdaf: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Run filters on worker threads.
    #[arg(long)]
    parallel: bool,
    /// Fill `mean_iter_time_s` in the summary (makes it machine dependent).
    #[arg(long)]
    record_timing: bool,
    /// Abort after this many seconds.
    #[arg(long)]
    timeout_s: Option<f64>,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    #[command(flatten)]
    common: Common,
    /// clutter, gaussian or detection; all three preset axes when omitted.
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated levels for `--axis`; its preset levels when omitted.
    #[arg(long)]
    levels: Option<String>,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    record_timing: bool,
}

#[derive(Debug, Args)]
struct ScalingArgs {
    /// Template scenario file; the builtin crossing layout, 2 s long, when omitted.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value = "all")]
    filter: String,
    /// Strictly increasing target counts.
    #[arg(long, default_value = "2,4,8,16,32")]
    targets: String,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Budget per (filter, N) point; overruns are recorded as censored.
    #[arg(long, default_value_t = 60.0)]
    timeout_s: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Time the JPDAF beyond 8 targets instead of skipping those points.
    #[arg(long)]
    allow_large_jpdaf: bool,
}

#[derive(Debug, Args)]
struct ConsensusArgs {
    /// Comma-separated Gaussian noise fractions.
    #[arg(long, default_value = "0,0.25")]
    levels: String,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 3)]
    observers: usize,
    #[arg(long, default_value_t = 3)]
    drones: usize,
    /// Scenes keep distinct projections more than twice this far apart, pixels.
    #[arg(long, default_value_t = 10.0)]
    separation_px: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let manifest = match (&cli.manifest, cli.command) {
        (Some(path), None) => {
            let src = read(path)?;
            let m = Manifest::parse(&src).map_err(|e| located(path, e))?;
            if m.code_version != env!("CARGO_PKG_VERSION") {
                eprintln!("warning: manifest written by version {}, replaying with {}", m.code_version, env!("CARGO_PKG_VERSION"));
            }
            m
        }
        (Some(_), Some(_)) => return Err(anyhow!("--manifest replays a recorded job; do not combine it with a subcommand").into()),
        (None, None) => return Err(anyhow!("no subcommand given (see --help)").into()),
        (None, Some(cmd)) => Manifest::new(resolve(cmd)?),
    };
    jobs::run(&manifest, &cli.output_dir).map_err(|e| match e {
        MttError::AtFrame { frame, source } => Failure::Runtime(anyhow!("runtime failure at frame {frame}: {source}")),
        MttError::InvalidConfig(_) | MttError::Scenario(_) | MttError::Parse { .. } => Failure::Config(e.into()),
        e => Failure::Runtime(e.into()),
    })
}

/// Turns parsed arguments into a fully resolved job.
fn resolve(cmd: Command) -> anyhow::Result<Job> {
    Ok(match cmd {
        Command::Run(a) => {
            let filters = parse_filters(&a.common.filter)?;
            let source = scenario_source(&a.common.scenario)?;
            guard_jpdaf(&filters, source.n_targets(), a.common.allow_large_jpdaf)?;
            if let Some(t) = a.timeout_s {
                if !(t >= 0.0 && t.is_finite()) {
                    bail!("--timeout-s must be a non-negative number");
                }
            }
            Job::Run {
                filters,
                seed: a.common.seed,
                parallel: a.parallel,
                record_timing: a.record_timing,
                timeout_s: a.timeout_s,
                scenario: source.instantiate(a.common.seed)?,
            }
        }
        Command::NoiseStudy(a) => {
            let filters = parse_filters(&a.common.filter)?;
            let scenario = scenario_source(&a.common.scenario)?;
            guard_jpdaf(&filters, scenario.n_targets(), a.common.allow_large_jpdaf)?;
            let mut plan = StudyPlan::preset_noise_study();
            plan.cells = match (a.axis, a.levels) {
                (None, None) => plan.cells,
                (None, Some(_)) => bail!("--levels needs --axis"),
                (Some(axis), levels) => {
                    let axis: NoiseAxis = axis.parse()?;
                    let levels = match levels {
                        Some(l) => parse_list::<f64>(&l, "--levels")?,
                        None => axis.preset_levels().to_vec(),
                    };
                    levels.into_iter().map(|level| NoiseCell { axis, level }).collect()
                }
            };
            if a.seeds == 0 {
                bail!("--seeds must be at least 1");
            }
            plan.scenario = scenario;
            plan.filters = filters;
            plan.seeds = (a.common.seed..a.common.seed + a.seeds).collect();
            // Surface invalid levels now rather than mid-study.
            plan.runs()?;
            Job::NoiseStudy { parallel: a.parallel, record_timing: a.record_timing, plan }
        }
        Command::ScalingStudy(a) => {
            let filters = parse_filters(&a.filter)?;
            let targets = parse_list::<usize>(&a.targets, "--targets")?;
            if targets.is_empty() || targets[0] == 0 || targets.windows(2).any(|w| w[1] <= w[0]) {
                bail!("--targets must be positive and strictly increasing");
            }
            if a.repetitions < 3 {
                bail!("--repetitions must be at least 3");
            }
            if !(a.timeout_s > 0.0 && a.timeout_s.is_finite()) {
                bail!("--timeout-s must be positive");
            }
            let template = match &a.scenario {
                None => scaling_template(2.0),
                Some(s) => match scenario_source(s)? {
                    ScenarioSource::Config(cfg) => ScenarioConfig { trajectories: None, ..*cfg },
                    ScenarioSource::Crossing { .. } => scaling_template(2.0),
                },
            };
            let largest = *targets.last().expect("non-empty");
            let jpdaf_max_targets = if a.allow_large_jpdaf { largest } else { JPDAF_MAX_TARGETS };
            Job::ScalingStudy {
                filters,
                targets,
                repetitions: a.repetitions,
                seed: a.seed,
                timeout_s: a.timeout_s,
                jpdaf_max_targets,
                template,
            }
        }
        Command::ConsensusStudy(a) => {
            let levels = parse_list::<f64>(&a.levels, "--levels")?;
            if levels.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                bail!("--levels must be non-negative noise fractions");
            }
            if a.observers == 0 || a.drones == 0 {
                bail!("--observers and --drones must be at least 1");
            }
            Job::ConsensusStudy {
                levels,
                study: ConsensusStudy {
                    n_observers: a.observers,
                    n_targets: a.drones,
                    trials: a.trials,
                    separation_r_px: a.separation_px,
                    meas_noise_frac: 0.0,
                    seed: a.seed,
                },
            }
        }
    })
}

fn parse_filters(s: &str) -> anyhow::Result<Vec<FilterKind>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(FilterKind::ALL.to_vec());
    }
    let mut out: Vec<FilterKind> = Vec::new();
    for part in s.split(',') {
        let k: FilterKind = part.parse()?;
        if !out.contains(&k) {
            out.push(k);
        }
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr>(s: &str, flag: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| anyhow!("{flag}: cannot parse '{}': {e}", p.trim())))
        .collect()
}

fn guard_jpdaf(filters: &[FilterKind], n_targets: usize, allowed: bool) -> anyhow::Result<()> {
    if filters.contains(&FilterKind::Jpdaf) && n_targets > JPDAF_GUARD && !allowed {
        bail!("the JPDAF enumerates every joint event; {n_targets} targets needs --allow-large-jpdaf");
    }
    Ok(())
}

fn scenario_source(s: &str) -> anyhow::Result<ScenarioSource> {
    if let Some(b) = ScenarioSource::builtin(s) {
        if b.n_targets() < 2 {
            bail!("builtin crossing scenarios need at least 2 targets");
        }
        return Ok(b);
    }
    let path = Path::new(s);
    let src = read(path)?;
    let cfg = ScenarioConfig::from_toml_str(&src).map_err(|e| located(path, e))?;
    Ok(ScenarioSource::Config(Box::new(cfg)))
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Prefixes parse errors with `file:line:column`.
fn located(path: &Path, e: MttError) -> anyhow::Error {
    match e {
        MttError::Parse { line, column, message } => anyhow!("{}:{line}:{column}: {message}", path.display()),
        e => anyhow!("{}: {e}", path.display()),
    }
}
