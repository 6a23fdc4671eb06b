use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Barrier;
use std::thread;
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::affinity;
use super::emit::Record;
use super::workload::{OpStream, WorkloadSpec};
use crate::error::{HarnessError, TableError};
use crate::table::{OpKind, RobinHoodTable, TableConfig};
use crate::verify::{audit_table, AuditReport};

/// Builds an empty table sized for `spec`.
pub fn table_for(spec: &WorkloadSpec) -> Result<RobinHoodTable, HarnessError> {
    spec.validate()?;
    Ok(RobinHoodTable::new(TableConfig {
        capacity_log2: spec.capacity_log2,
        shard_log2: spec.shard_log2,
        // Workers plus one handle for prefill and auditing.
        max_threads: spec.threads + 1,
    })?)
}

/// Inserts `round(load_factor * capacity)` distinct keys drawn uniformly
/// from `1..=capacity`. Returns the inserted keys.
pub fn prefill(table: &RobinHoodTable, spec: &WorkloadSpec) -> Result<Vec<u64>, HarnessError> {
    let n = spec.prefill_count();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let keys: Vec<u64> = index::sample(&mut rng, spec.capacity(), n)
        .into_iter()
        .map(|i| i as u64 + 1)
        .collect();
    let mut h = table.handle()?;
    for &k in &keys {
        h.add(k)?;
    }
    Ok(keys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub spec: WorkloadSpec,
    pub trial: i64,
    pub per_thread_ops: Vec<u64>,
    pub total_ops: u64,
    pub elapsed_secs: f64,
    pub ops_per_us: f64,
    pub retries: u64,
    pub retries_per_op: f64,
    /// Mean successful-search probe length of the table after the run.
    pub mean_probe: f64,
    /// Occupancy over capacity after the run.
    pub final_load: f64,
    pub audit: Option<AuditReport>,
}

impl RunResult {
    pub fn audit_passed(&self) -> bool {
        self.audit.as_ref().is_none_or(AuditReport::passed)
    }

    pub fn record(&self) -> Record {
        Record {
            capacity_log2: self.spec.capacity_log2,
            load_factor: self.spec.load_factor,
            update_ratio: self.spec.update_ratio,
            threads: self.spec.threads,
            trial: self.trial,
            seed: self.spec.seed,
            total_ops: self.total_ops,
            ops_per_us: self.ops_per_us,
            retries_per_op: self.retries_per_op,
            mean_probe: self.mean_probe,
        }
    }
}

/// Runs one timed trial on a prefilled table.
///
/// Every worker pins itself, waits at a common start barrier, then issues
/// calls from its own [`OpStream`] until the stop flag is raised after
/// `spec.duration`. Counts stay thread-local until the workers are joined.
/// With `verify` the quiescent table is audited afterwards, including a
/// lookup of every key in the key space.
pub fn run_trial(
    table: &RobinHoodTable,
    spec: &WorkloadSpec,
    trial: usize,
    verify: bool,
) -> Result<RunResult, HarnessError> {
    spec.validate()?;
    let order = affinity::pinning_order();
    let start = Barrier::new(spec.threads + 1);
    let stop = AtomicBool::new(false);

    let (per_thread, elapsed) = thread::scope(|s| -> Result<_, HarnessError> {
        let workers: Vec<_> = (0..spec.threads)
            .map(|t| {
                let (start, stop, order) = (&start, &stop, &order);
                s.spawn(move || -> Result<(u64, u64), TableError> {
                    affinity::pin(order, t);
                    let mut h = table.handle()?;
                    h.set_backoff(spec.backoff);
                    let mut ops = OpStream::new(spec, t);
                    let mut count = 0u64;
                    start.wait();
                    while !stop.load(Ordering::Relaxed) {
                        let (op, key) = ops.next().expect("endless stream");
                        let r = match op {
                            OpKind::Add => h.add(key),
                            OpKind::Remove => h.remove(key),
                            OpKind::Contains => h.contains(key),
                        };
                        r?;
                        count += 1;
                    }
                    Ok((count, h.stats().retries))
                })
            })
            .collect();
        start.wait();
        let began = Instant::now();
        thread::sleep(spec.duration);
        stop.store(true, Ordering::Relaxed);
        let joined: Result<Vec<_>, TableError> = workers
            .into_iter()
            .map(|w| w.join().expect("worker panicked"))
            .collect();
        Ok((joined?, began.elapsed()))
    })?;

    let per_thread_ops: Vec<u64> = per_thread.iter().map(|&(c, _)| c).collect();
    let total_ops: u64 = per_thread_ops.iter().sum();
    let retries: u64 = per_thread.iter().map(|&(_, r)| r).sum();
    let elapsed_secs = elapsed.as_secs_f64();
    let snapshot = table.snapshot();
    let audit = if verify {
        Some(audit_table(table, None, Some(1..=spec.key_space()))?)
    } else {
        None
    };
    Ok(RunResult {
        spec: *spec,
        trial: trial as i64,
        total_ops,
        per_thread_ops,
        elapsed_secs,
        ops_per_us: total_ops as f64 / (elapsed_secs * 1e6),
        retries,
        retries_per_op: if total_ops == 0 { 0.0 } else { retries as f64 / total_ops as f64 },
        mean_probe: snapshot.mean_probe(),
        final_load: snapshot.len() as f64 / snapshot.capacity() as f64,
        audit,
    })
}

/// Ranges of a benchmark grid; every other field comes from `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub base: WorkloadSpec,
    pub load_factors: Vec<f64>,
    pub update_ratios: Vec<f64>,
    pub threads: Vec<usize>,
}

impl GridSpec {
    /// Every (load factor, update ratio, threads) cell in emission order.
    pub fn cells(&self) -> Vec<WorkloadSpec> {
        let mut out = Vec::new();
        for &load_factor in &self.load_factors {
            for &update_ratio in &self.update_ratios {
                for &threads in &self.threads {
                    out.push(WorkloadSpec {
                        load_factor,
                        update_ratio,
                        threads,
                        ..self.base
                    });
                }
            }
        }
        out
    }
}

/// Averages of a cell's trials, flagged with `trial = -1`.
pub fn average(results: &[RunResult]) -> Option<Record> {
    let first = results.first()?;
    let n = results.len() as f64;
    let mean = |f: fn(&RunResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    Some(Record {
        trial: -1,
        total_ops: (mean(|r| r.total_ops as f64)).round() as u64,
        ops_per_us: mean(|r| r.ops_per_us),
        retries_per_op: mean(|r| r.retries_per_op),
        mean_probe: mean(|r| r.mean_probe),
        ..first.record()
    })
}

/// Runs `trials` fresh prefilled trials per grid cell. `on_result` sees
/// every trial as it finishes; the returned stream holds each trial record
/// followed by the cell's average record.
pub fn run_grid(
    grid: &GridSpec,
    verify: bool,
    mut on_result: impl FnMut(&RunResult),
) -> Result<Vec<Record>, HarnessError> {
    let mut records = Vec::new();
    for spec in grid.cells() {
        spec.validate()?;
        let mut results = Vec::with_capacity(spec.trials);
        for trial in 0..spec.trials {
            let table = table_for(&spec)?;
            prefill(&table, &spec)?;
            let r = run_trial(&table, &spec, trial, verify)?;
            on_result(&r);
            records.push(r.record());
            results.push(r);
        }
        records.extend(average(&results));
    }
    Ok(records)
}
