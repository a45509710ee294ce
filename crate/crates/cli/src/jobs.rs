//! Executes a resolved job and writes its artifacts.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::{Duration, Instant};

use mtt_core::harness::{run_rows, run_tracking_with, tracker_config_for, write_csv};
use mtt_core::scaling::{run_benchmark, BenchOptions, BenchTarget, PointStatus};
use mtt_core::study::{execute, summarize, ConsensusStudy, RunResult, StudyRun};
use mtt_core::{MttError, Result};
use serde::Serialize;

use crate::manifest::{Job, Manifest, FILE_NAME};

/// Runs `manifest`'s job, writing CSVs and a copy of the manifest into `out`.
pub fn run(manifest: &Manifest, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    match &manifest.job {
        Job::Run { filters, seed, parallel, record_timing, timeout_s, scenario } => {
            let runs: Vec<StudyRun> = filters
                .iter()
                .map(|&filter| StudyRun { filter, cell: None, seed: *seed, config: scenario.clone() })
                .collect();
            let results = match timeout_s {
                None => execute(&runs, *parallel)?,
                Some(t) => {
                    let deadline = Instant::now() + Duration::from_secs_f64(*t);
                    runs.iter().map(|r| run_with_deadline(r, deadline)).collect::<Result<_>>()?
                }
            };
            write_rows(&out.join("runs.csv"), &results)?;
            write(&out.join("summary.csv"), &summarize(&results, *record_timing))?;
            report_summary(&results);
        }
        Job::NoiseStudy { parallel, record_timing, plan } => {
            let results = execute(&plan.runs()?, *parallel)?;
            let mut cells: Vec<_> = results.iter().map(|r| r.cell).collect();
            cells.dedup();
            for cell in cells {
                let name = match cell {
                    Some(c) => format!("runs_{}_{}.csv", c.axis, c.level),
                    None => "runs.csv".to_string(),
                };
                let subset: Vec<RunResult> = results.iter().filter(|r| r.cell == cell).cloned().collect();
                write_rows(&out.join(name), &subset)?;
            }
            write(&out.join("summary.csv"), &summarize(&results, *record_timing))?;
            report_summary(&results);
        }
        Job::ScalingStudy { filters, targets, repetitions, seed, timeout_s, jpdaf_max_targets, template } => {
            let options =
                BenchOptions { point_timeout: Duration::from_secs_f64(*timeout_s), jpdaf_max_targets: *jpdaf_max_targets };
            let mut points = Vec::new();
            let mut fits = Vec::new();
            for &f in filters {
                let report = run_benchmark(BenchTarget::Filter(f), targets, template, *repetitions, *seed, &options)?;
                for p in &report.points {
                    points.push(ScalingRow {
                        filter: f.name(),
                        n_targets: p.n_targets,
                        status: p.status,
                        mean_s: p.mean_s,
                        median_s: p.median_s,
                        repetitions: p.repetitions,
                    });
                    let shown = p.mean_s.map_or_else(|| format!("{:?}", p.status).to_lowercase(), |t| format!("{t:.3e} s"));
                    println!("{:<7} N={:<3} {shown}", f.name(), p.n_targets);
                }
                let segments: Vec<String> = report.segment_slopes.iter().map(|s| s.to_string()).collect();
                fits.push(FitRow {
                    filter: f.name(),
                    slope: report.slope,
                    segment_slopes: segments.join(";"),
                    curvature_increasing: report.curvature_increasing(),
                });
            }
            write(&out.join("scaling.csv"), &points)?;
            write(&out.join("scaling_fit.csv"), &fits)?;
        }
        Job::ConsensusStudy { levels, study } => {
            let mut rows = Vec::new();
            let mut summary = Vec::new();
            for &level in levels {
                let report = ConsensusStudy { meas_noise_frac: level, ..*study }.run()?;
                println!("noise {level}: {}/{} trials agree", report.agreeing, report.trials);
                summary.push(ConsensusSummaryRow {
                    noise_level: level,
                    trials: report.trials,
                    agreeing: report.agreeing,
                    agreement: report.agreement(),
                });
                rows.extend(report.rows.into_iter().map(|r| ConsensusCsvRow {
                    noise_level: level,
                    trial: r.trial,
                    observer: r.observer,
                    local_track: r.local_track,
                    assigned_id: r.assigned_id,
                    true_id: r.true_id,
                }));
            }
            write(&out.join("consensus.csv"), &rows)?;
            write(&out.join("consensus_summary.csv"), &summary)?;
        }
    }
    fs::write(out.join(FILE_NAME), manifest.to_toml()?)?;
    Ok(())
}

fn run_with_deadline(r: &StudyRun, deadline: Instant) -> Result<RunResult> {
    let tc = tracker_config_for(&r.config, r.filter)?;
    let out = run_tracking_with(&r.config, r.filter, &tc, Some(deadline))?;
    Ok(RunResult {
        filter: r.filter,
        cell: r.cell,
        seed: r.seed,
        n_targets: r.config.n_targets,
        rows: run_rows(&out),
        metrics: out.metrics,
    })
}

fn write<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let file = File::create(path).map_err(|e| MttError::Io(format!("{}: {e}", path.display())))?;
    write_csv(BufWriter::new(file), rows)
}

fn write_rows(path: &Path, results: &[RunResult]) -> Result<()> {
    let rows: Vec<_> = results.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    write(path, &rows)
}

fn report_summary(results: &[RunResult]) {
    for row in summarize(results, false) {
        let cell = row.noise_level.map_or(String::new(), |l| format!(" {}={l}", row.noise_axis));
        let sd = if row.seeds > 1 { format!(" (sd {:.3})", row.rmse_std) } else { String::new() };
        println!("{:<7}{cell}: rmse {:.3} px{sd}, {:.1} switches/run over {} seeds", row.filter, row.rmse, row.switches, row.seeds);
    }
}

#[derive(Serialize)]
struct ScalingRow {
    filter: &'static str,
    n_targets: usize,
    status: PointStatus,
    mean_s: Option<f64>,
    median_s: Option<f64>,
    repetitions: usize,
}

#[derive(Serialize)]
struct FitRow {
    filter: &'static str,
    slope: Option<f64>,
    segment_slopes: String,
    curvature_increasing: bool,
}

#[derive(Serialize)]
struct ConsensusSummaryRow {
    noise_level: f64,
    trials: usize,
    agreeing: usize,
    agreement: f64,
}

#[derive(Serialize)]
struct ConsensusCsvRow {
    noise_level: f64,
    trial: usize,
    observer: usize,
    local_track: usize,
    assigned_id: Option<u32>,
    true_id: u32,
}
