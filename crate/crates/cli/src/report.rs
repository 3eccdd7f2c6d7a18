//! Run and batch reports.

use ces_core::audit::AuditReport;
use ces_core::pipeline::{CesResult, IterationRecord, PhaseTimes};
use ces_core::scenarios::{Provenance, Scenario, WorkspaceSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub passed: bool,
    pub tolerance: f64,
    pub checks: usize,
    pub violations: usize,
    /// Worst relative excess per check (negative is slack).
    pub worst: std::collections::BTreeMap<String, f64>,
    /// First few violations, formatted.
    pub examples: Vec<String>,
    pub max_curvature: f64,
}

impl From<&AuditReport> for AuditSummary {
    fn from(a: &AuditReport) -> Self {
        AuditSummary {
            passed: a.passed(),
            tolerance: a.tolerance,
            checks: a.counts.values().sum(),
            violations: a.violations.len(),
            worst: a.worst.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            examples: a.violations.iter().take(10).map(|v| v.to_string()).collect(),
            max_curvature: a.max_curvature,
        }
    }
}

/// Obstacles and reference, enough to redraw a run without rerunning it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub workspace: WorkspaceSpec,
    pub reference: Vec<[f64; 2]>,
    pub r_min_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub id: String,
    pub seed: Option<u64>,
    pub provenance: Provenance,
    pub constant_speed: Option<f64>,
    pub initial_time_s: Option<f64>,
    pub final_time_s: f64,
    /// `100 (t_initial − t_final) / t_initial`.
    pub time_reduction_pct: Option<f64>,
    pub initial_length_m: f64,
    pub final_length_m: f64,
    pub length_reduction_pct: f64,
    pub iterations: usize,
    pub accepted_iterations: usize,
    /// Wall-clock per phase summed over all iterations.
    pub phase_times_s: PhaseTimes,
    pub wall_time_s: f64,
    pub audit: AuditSummary,
    pub history: Vec<IterationRecord>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<Scene>,
}

impl RunReport {
    pub fn new(sc: &Scenario, r: &CesResult, audit: &AuditReport, wall_time_s: f64) -> Self {
        let mut phases = PhaseTimes::default();
        for h in &r.history {
            phases.bubbles += h.times.bubbles;
            phases.stretch += h.times.stretch;
            phases.speed += h.times.speed;
        }
        RunReport {
            id: sc.id.clone(),
            seed: sc.provenance.seed,
            provenance: sc.provenance.clone(),
            constant_speed: sc.config.constant_speed,
            initial_time_s: r.initial_time,
            final_time_s: r.final_time,
            time_reduction_pct: r.initial_time.map(|t0| 100.0 * (t0 - r.final_time) / t0),
            initial_length_m: r.initial_length,
            final_length_m: r.final_length,
            length_reduction_pct: 100.0 * (r.initial_length - r.final_length) / r.initial_length,
            iterations: r.history.len(),
            accepted_iterations: r.accepted_iterations(),
            phase_times_s: phases,
            wall_time_s,
            audit: audit.into(),
            history: r.history.clone(),
            warnings: r.warnings.clone(),
            scene: Some(Scene {
                workspace: WorkspaceSpec::from_workspace(&sc.workspace),
                reference: sc.reference.waypoints().iter().map(|&p| p.into()).collect(),
                r_min_m: sc.config.vehicle.r_min_m,
            }),
        }
    }

    /// Zeroes every wall-clock field, leaving only what a fixed seed
    /// determines.
    pub fn strip_timings(&mut self) {
        self.wall_time_s = 0.0;
        self.phase_times_s = PhaseTimes::default();
        for h in &mut self.history {
            h.times = PhaseTimes::default();
        }
    }
}

/// Outcome of one batch entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<RunReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(v: &[f64]) -> Option<Stats> {
        if v.is_empty() {
            return None;
        }
        Some(Stats {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub count: usize,
    pub seed_base: u64,
    pub succeeded: usize,
    pub failed: usize,
    pub audit_failures: usize,
    pub time_reduction_pct: Option<Stats>,
    pub length_reduction_pct: Option<Stats>,
    /// Mean wall-clock per phase over successful runs.
    pub mean_phase_times_s: PhaseTimes,
    pub mean_wall_time_s: f64,
    pub entries: Vec<BenchEntry>,
}

impl BenchReport {
    pub fn new(seed_base: u64, entries: Vec<BenchEntry>) -> Self {
        let ok: Vec<&RunReport> = entries.iter().filter_map(|e| e.report.as_ref()).collect();
        let reductions: Vec<f64> = ok.iter().filter_map(|r| r.time_reduction_pct).collect();
        let lengths: Vec<f64> = ok.iter().map(|r| r.length_reduction_pct).collect();
        let m = ok.len().max(1) as f64;
        let mut phases = PhaseTimes::default();
        for r in &ok {
            phases.bubbles += r.phase_times_s.bubbles / m;
            phases.stretch += r.phase_times_s.stretch / m;
            phases.speed += r.phase_times_s.speed / m;
        }
        BenchReport {
            count: entries.len(),
            seed_base,
            succeeded: ok.len(),
            failed: entries.len() - ok.len(),
            audit_failures: ok.iter().filter(|r| !r.audit.passed).count(),
            time_reduction_pct: Stats::of(&reductions),
            length_reduction_pct: Stats::of(&lengths),
            mean_phase_times_s: phases,
            mean_wall_time_s: ok.iter().map(|r| r.wall_time_s).sum::<f64>() / m,
            entries,
        }
    }

    /// Plain-text table, one row per maze plus an aggregate line.
    pub fn table(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "{:>6} {:>10} {:>10} {:>8} {:>8} {:>5} {:>8} {:>6}", "seed", "t0 [s]", "t [s]", "dt [%]", "dL [%]", "iter", "wall [s]", "audit");
        for e in &self.entries {
            match &e.report {
                Some(r) => {
                    let t0 = r.initial_time_s.map_or("-".into(), |t| format!("{t:.3}"));
                    let red = r.time_reduction_pct.map_or("-".into(), |t| format!("{t:.2}"));
                    let _ = writeln!(
                        s,
                        "{:>6} {:>10} {:>10.3} {:>8} {:>8.2} {:>5} {:>8.3} {:>6}",
                        e.seed,
                        t0,
                        r.final_time_s,
                        red,
                        r.length_reduction_pct,
                        r.accepted_iterations,
                        r.wall_time_s,
                        if r.audit.passed { "ok" } else { "FAIL" }
                    );
                }
                None => {
                    let _ = writeln!(s, "{:>6} failed: {}", e.seed, e.error.as_deref().unwrap_or("unknown"));
                }
            }
        }
        if let Some(t) = &self.time_reduction_pct {
            let _ = writeln!(s, "time reduction [%]: mean {:.2}, min {:.2}, max {:.2}", t.mean, t.min, t.max);
        }
        let p = &self.mean_phase_times_s;
        let _ = writeln!(
            s,
            "mean phase times [s]: bubbles {:.4}, stretch {:.4}, speed {:.4}; mean run {:.3}",
            p.bubbles, p.stretch, p.speed, self.mean_wall_time_s
        );
        let _ = writeln!(s, "{} of {} runs succeeded, {} audit failures", self.succeeded, self.count, self.audit_failures);
        s
    }
}
