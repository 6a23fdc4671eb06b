//! Correctness machinery: quiescent audits, per-key linearizability
//! checking, directed race schedules and K-CAS torture.
//!
//! Every suite reports a list of [`CheckRecord`]s, which the command line
//! prints as text or JSON lines.

pub mod audit;
pub mod history;
pub mod races;
pub mod stress;
pub mod torture;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use audit::{audit_quiescent, audit_table, AuditReport, MembershipMismatch, MismatchKind, OrderingViolation};
pub use history::{check_per_key_history, HistoryEvent, KeyVerdict, Phase, StateSet};
pub use races::{run_directed_race, run_race, RaceOptions, RaceOutcome, RaceScenario};
pub use stress::{linearizability_stress, sampled_stress, LinearizabilityConfig, SampledStressConfig};
pub use torture::{kcas_torture, TortureConfig, TortureReport};

use crate::error::VerifyError;
use crate::kcas::PlantedFault;
use crate::oracle::probe_stats;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub suite: String,
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckRecord {
    fn new(suite: Suite, check: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckRecord {
            suite: suite.id().to_owned(),
            check: check.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}/{}: {}", self.suite, self.check, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Audit,
    Linearizability,
    Races,
    KcasTorture,
    ProbeStats,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Audit,
        Suite::Linearizability,
        Suite::Races,
        Suite::KcasTorture,
        Suite::ProbeStats,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Suite::Audit => "audit",
            Suite::Linearizability => "linearizability",
            Suite::Races => "races",
            Suite::KcasTorture => "kcas-torture",
            Suite::ProbeStats => "probe-stats",
        }
    }
}

impl FromStr for Suite {
    type Err = VerifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.id() == s)
            .ok_or_else(|| VerifyError::UnknownSuite(s.to_owned()))
    }
}

/// Size knobs shared by the suites; each suite reads the ones it needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub threads: usize,
    pub duration: Duration,
    /// Table size for the audit stress and the probe statistics.
    pub capacity_log2: u32,
    /// Key space of the linearizability stress.
    pub keys: u64,
    /// Repetitions: stress runs, race executions per scenario, or seeds.
    pub runs: usize,
    /// Cells of the K-CAS counter test.
    pub cells: usize,
    pub overlap_rounds: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            threads: 8,
            duration: Duration::from_secs(2),
            capacity_log2: 16,
            keys: 8,
            runs: 5,
            cells: 4,
            overlap_rounds: 10_000,
            seed: 1,
        }
    }
}

/// Minimum number of large tables filled for the unsuccessful-probe
/// comparison; the difference is a few hundredths of a probe.
pub const GROWTH_TABLES: usize = 20;

/// Mean unsuccessful probe count at load 0.8 for `tables` tables of size
/// `2^big_log2`, and for as many `2^small_log2` tables as cover the same
/// number of buckets in total.
pub fn unsuccessful_growth(big_log2: u32, small_log2: u32, tables: usize, seed: u64) -> (f64, f64) {
    let mean = |log2: u32, n: u64, base: u64| {
        (0..n).map(|i| probe_stats(log2, 0.8, base + i).mean_unsuccessful).sum::<f64>() / n as f64
    };
    let small_tables = (tables as u64) << big_log2.saturating_sub(small_log2);
    (mean(big_log2, tables as u64, seed), mean(small_log2, small_tables, seed + 1_000_000))
}

pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> Result<Vec<CheckRecord>, VerifyError> {
    let mut out = Vec::new();
    match suite {
        Suite::Audit => {
            for run in 0..opts.runs {
                let r = sampled_stress(&SampledStressConfig {
                    threads: opts.threads,
                    duration: opts.duration,
                    capacity_log2: opts.capacity_log2.min(20),
                    seed: opts.seed + run as u64,
                    ..SampledStressConfig::default()
                })?;
                out.push(CheckRecord::new(
                    suite,
                    format!("sampled-stress-{run}"),
                    r.passed,
                    format!(
                        "ops={} samples={} failed_samples={} final: {}",
                        r.ops,
                        r.samples,
                        r.failed_samples,
                        r.final_audit.summary()
                    ),
                ));
            }
        }
        Suite::Linearizability => {
            for run in 0..opts.runs {
                let r = linearizability_stress(&LinearizabilityConfig {
                    threads: opts.threads,
                    keys: opts.keys,
                    duration: opts.duration,
                    seed: opts.seed + run as u64,
                    ..LinearizabilityConfig::default()
                })?;
                let mut detail = format!(
                    "epochs={} calls={} retries={} violations={}",
                    r.epochs,
                    r.calls,
                    r.retries,
                    r.violations.len()
                );
                if let Some(v) = r.violations.first() {
                    detail += &format!(" first: epoch {} key {}: {}", v.epoch, v.key, v.reason);
                }
                out.push(CheckRecord::new(suite, format!("history-{run}"), r.passed, detail));
            }
        }
        Suite::Races => {
            for scenario in RaceScenario::ALL {
                let mut passes = 0;
                let mut first_failure = None;
                for _ in 0..opts.runs {
                    let r = run_race(scenario, RaceOptions::default())?;
                    if r.passed {
                        passes += 1;
                    } else if first_failure.is_none() {
                        first_failure = Some(r);
                    }
                }
                let mut detail = format!("{passes}/{} executions passed", opts.runs);
                if let Some(r) = first_failure {
                    detail += &format!(
                        "; first failure: result={} expected={} retries={} interleaved={} layout_matches={} audit: {}",
                        r.result,
                        r.expected,
                        r.retries,
                        r.interleaved,
                        r.layout_matches,
                        r.audit.summary()
                    );
                }
                out.push(CheckRecord::new(suite, scenario.id(), passes == opts.runs, detail));
            }
        }
        Suite::KcasTorture => {
            let r = kcas_torture(&TortureConfig {
                threads: opts.threads,
                cells: opts.cells,
                duration: opts.duration,
                overlap_rounds: opts.overlap_rounds,
                seed: opts.seed,
                fault: PlantedFault::None,
            });
            out.push(CheckRecord::new(
                suite,
                "counter",
                r.counter.passed,
                format!(
                    "threads={} cells={} attempts={} successes={} expected={:?} observed={:?} orphaned_refs={}",
                    r.counter.threads,
                    r.counter.cells,
                    r.counter.attempts,
                    r.counter.successes,
                    r.counter.expected,
                    r.counter.observed,
                    r.counter.orphaned_refs
                ),
            ));
            let mut detail = format!("{}/{} rounds match a serial order", r.overlap.matched, r.overlap.rounds);
            if let Some(m) = &r.overlap.first_mismatch {
                detail += &format!("; {m}");
            }
            out.push(CheckRecord::new(suite, "overlap", r.overlap.passed, detail));
        }
        Suite::ProbeStats => {
            let seeds = opts.seed..opts.seed + opts.runs.max(1) as u64;
            let big: Vec<_> = seeds.map(|s| probe_stats(opts.capacity_log2, 0.8, s)).collect();
            let in_range = big.iter().all(|s| (2.0..=3.2).contains(&s.mean_successful));
            out.push(CheckRecord::new(
                suite,
                "successful-probes",
                in_range,
                format!(
                    "capacity 2^{} load 0.8: per-seed means {:?}",
                    opts.capacity_log2,
                    big.iter().map(|s| format!("{:.3}", s.mean_successful)).collect::<Vec<_>>()
                ),
            ));
            let (u_big, u_small) = unsuccessful_growth(opts.capacity_log2, 10, opts.runs.max(GROWTH_TABLES), opts.seed);
            out.push(CheckRecord::new(
                suite,
                "unsuccessful-growth",
                u_big > u_small,
                format!(
                    "mean unsuccessful probes at load 0.8: 2^{} -> {u_big:.4}, 2^10 -> {u_small:.4}",
                    opts.capacity_log2
                ),
            ));
        }
    }
    Ok(out)
}
