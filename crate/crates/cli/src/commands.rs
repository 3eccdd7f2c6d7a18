//! The `run`, `bench`, `plot` and `scenario` commands. Each returns a
//! process exit code and writes diagnostics to standard error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use ces_core::audit::{audit, AuditReport, AUDIT_TOL};
use ces_core::pipeline::{run_ces, CesError, CesResult};
use ces_core::scenarios::{lane_change_file, maze_file, moose_file, Scenario, ScenarioError, ScenarioFile};
use ces_core::stretch::write_trajectory_csv;
use rayon::prelude::*;
use serde_json::Value;

use crate::overrides::{apply_all, Override};
use crate::plot::plot_dir;
use crate::report::{BenchEntry, BenchReport, RunReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

/// A run that did not produce an audited trajectory.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: EXIT_INPUT, message: message.into() }
    }

    fn infeasible(message: impl Into<String>) -> Self {
        Failure { code: EXIT_INFEASIBLE, message: message.into() }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match &e {
            ScenarioError::Blocked { what: "goal", .. } | ScenarioError::Unreachable => Failure::infeasible(format!("unreachable goal: {e}")),
            _ if e.is_infeasible() => Failure::infeasible(e.to_string()),
            _ => Failure::input(e.to_string()),
        }
    }
}

impl From<CesError> for Failure {
    fn from(e: CesError) -> Self {
        match e {
            CesError::NoTrajectory(_) => Failure::infeasible(e.to_string()),
            _ => Failure::input(e.to_string()),
        }
    }
}

/// Parses scenario JSON text and applies overrides. Parse errors carry
/// their line and column.
pub fn parse_scenario(text: &str, overrides: &[Override]) -> Result<ScenarioFile, Failure> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| Failure::input(format!("malformed scenario JSON: {e}")))?;
    apply_all(&mut doc, overrides).map_err(Failure::input)?;
    serde_json::from_value(doc).map_err(|e| Failure::input(format!("invalid scenario: {e}")))
}

pub struct Outcome {
    pub scenario: Scenario,
    pub result: CesResult,
    pub audit: AuditReport,
    pub report: RunReport,
}

/// Resolves, smooths and audits one scenario.
pub fn execute(file: &ScenarioFile) -> Result<Outcome, Failure> {
    let sc = file.resolve()?;
    let started = Instant::now();
    let result = run_ces(&sc.reference, &sc.workspace, &sc.config)?;
    let wall = started.elapsed().as_secs_f64();
    let audit = audit(&result, &sc.workspace, &sc.config.vehicle, AUDIT_TOL);
    let report = RunReport::new(&sc, &result, &audit, wall);
    Ok(Outcome { scenario: sc, result, audit, report })
}

/// Writes `trajectory.csv`, `speed.csv`, `bubbles.csv`, `report.json` and
/// `plot.svg` into `dir`.
pub fn write_artifacts(dir: &Path, out: &Outcome) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let r = &out.result;
    let bounds = r.stretch.as_ref().map(|s| s.bounds.clone()).unwrap_or_default();
    write_trajectory_csv(&r.waypoints, &bounds, fs::File::create(dir.join("trajectory.csv"))?)?;
    r.profile.write_csv(fs::File::create(dir.join("speed.csv"))?)?;
    let bubbles = fs::File::create(dir.join("bubbles.csv"))?;
    match &r.stretch {
        Some(s) => s.bubbles.write_csv(bubbles)?,
        None => {
            let mut w = csv::Writer::from_writer(bubbles);
            w.write_record(["index", "center_x", "center_y", "radius"])?;
            w.flush()?;
        }
    }
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&out.report)?)?;
    for w in plot_dir(dir)? {
        log::warn!("{w}");
    }
    Ok(())
}

fn summary_line(out: &Outcome) -> String {
    let r = &out.report;
    let red = r.time_reduction_pct.map_or("n/a".to_string(), |v| format!("{v:.2}%"));
    format!(
        "{}: time {:.3} s (reduction {red}), length {:.2} m, {} of {} iterations accepted, {:.3} s wall, {}",
        r.id, r.final_time_s, r.final_length_m, r.accepted_iterations, r.iterations, r.wall_time_s, out.audit
    )
}

pub fn cmd_run(scenario: &Path, out_dir: &Path, overrides: &[Override], no_timings: bool) -> i32 {
    let text = match fs::read_to_string(scenario) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", scenario.display());
            return EXIT_INPUT;
        }
    };
    let outcome = parse_scenario(&text, overrides).and_then(|f| execute(&f));
    let mut out = match outcome {
        Ok(o) => o,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return f.code;
        }
    };
    if no_timings {
        out.report.strip_timings();
    }
    if let Err(e) = write_artifacts(out_dir, &out) {
        eprintln!("error: writing artifacts: {e:#}");
        return EXIT_INPUT;
    }
    println!("{}", summary_line(&out));
    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    if !out.audit.passed() {
        eprintln!("error: trajectory failed the constraint audit");
        return EXIT_INFEASIBLE;
    }
    EXIT_OK
}

pub struct BenchOptions {
    pub count: usize,
    pub seed_base: u64,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
    pub artifacts: bool,
    pub no_timings: bool,
}

/// Runs the maze batch and returns the aggregate.
pub fn bench(opts: &BenchOptions, overrides: &[Override]) -> anyhow::Result<BenchReport> {
    let seeds: Vec<u64> = (0..opts.count as u64).map(|i| opts.seed_base + i).collect();
    let one = |seed: u64| -> BenchEntry {
        let attempt = (|| {
            let mut doc = serde_json::to_value(maze_file(seed)).map_err(|e| Failure::input(e.to_string()))?;
            apply_all(&mut doc, overrides).map_err(Failure::input)?;
            let file: ScenarioFile = serde_json::from_value(doc).map_err(|e| Failure::input(format!("invalid scenario: {e}")))?;
            execute(&file)
        })();
        match attempt {
            Ok(mut out) => {
                if opts.no_timings {
                    out.report.strip_timings();
                }
                if opts.artifacts {
                    let dir = opts.out_dir.join(format!("maze-{seed:03}"));
                    if let Err(e) = write_artifacts(&dir, &out) {
                        log::warn!("seed {seed}: artifacts not written: {e:#}");
                    }
                }
                let mut report = out.report;
                report.scene = None;
                BenchEntry { seed, report: Some(report), error: None }
            }
            Err(f) => BenchEntry { seed, report: None, error: Some(f.message) },
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.jobs.unwrap_or(0)).build()?;
    let entries: Vec<BenchEntry> = pool.install(|| seeds.par_iter().map(|&s| one(s)).collect());
    Ok(BenchReport::new(opts.seed_base, entries))
}

pub fn cmd_bench(opts: &BenchOptions, overrides: &[Override]) -> i32 {
    let report = match bench(opts, overrides) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_INPUT;
        }
    };
    let written = fs::create_dir_all(&opts.out_dir)
        .map_err(anyhow::Error::from)
        .and_then(|_| Ok(serde_json::to_string_pretty(&report)?))
        .and_then(|json| Ok(fs::write(opts.out_dir.join("bench.json"), json)?));
    if let Err(e) = written {
        eprintln!("error: writing bench.json: {e:#}");
        return EXIT_INPUT;
    }
    print!("{}", report.table());
    for e in report.entries.iter().filter(|e| e.error.is_some()) {
        eprintln!("warning: seed {} failed: {}", e.seed, e.error.as_deref().unwrap_or_default());
    }
    if report.failed > 0 || report.audit_failures > 0 {
        EXIT_INFEASIBLE
    } else {
        EXIT_OK
    }
}

pub fn cmd_plot(dir: &Path) -> i32 {
    match plot_dir(dir) {
        Ok(warnings) => {
            for w in warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {}", dir.join("plot.svg").display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

/// Built-in scenario files, printed as JSON.
pub fn cmd_scenario(kind: &str, seed: u64) -> i32 {
    let file = match kind {
        "maze" => maze_file(seed),
        "lane-change" => lane_change_file(),
        "moose" => moose_file(),
        other => {
            eprintln!("error: unknown scenario '{other}' (expected maze, lane-change or moose)");
            return EXIT_INPUT;
        }
    };
    match serde_json::to_string_pretty(&file) {
        Ok(s) => {
            println!("{s}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}
