//! Multi-threaded stress runs: history capture for the linearizability
//! checker, and a stop-the-world sampler that audits mid-run states.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Barrier, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::audit::{audit_table, AuditReport};
use super::history::{check_per_key_history_from, HistoryEvent, StateSet};
use crate::error::{TableError, VerifyError};
use crate::table::{OpKind, RobinHoodTable, TableConfig, TableHandle};

fn call(h: &mut TableHandle<'_>, op: OpKind, key: u64) -> Result<bool, TableError> {
    match op {
        OpKind::Add => h.add(key),
        OpKind::Remove => h.remove(key),
        OpKind::Contains => h.contains(key),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearizabilityConfig {
    pub threads: usize,
    /// Keys are `1..=keys`.
    pub keys: u64,
    pub duration: Duration,
    pub capacity_log2: u32,
    pub shard_log2: u32,
    /// Calls per thread between two quiescent checks.
    pub ops_per_epoch: usize,
    pub seed: u64,
}

impl Default for LinearizabilityConfig {
    fn default() -> Self {
        LinearizabilityConfig {
            threads: 8,
            keys: 8,
            duration: Duration::from_secs(5),
            capacity_log2: 4,
            shard_log2: 2,
            ops_per_epoch: 250,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearizabilityViolation {
    pub epoch: usize,
    pub key: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizabilityReport {
    pub epochs: usize,
    pub calls: u64,
    pub retries: u64,
    pub violations: Vec<LinearizabilityViolation>,
    pub final_audit: AuditReport,
    pub passed: bool,
}

/// Hammers a small key space from many threads while recording every
/// invocation and response against a shared counter.
///
/// The run is cut into epochs. After each epoch all threads park, every
/// key's sub-history is checked starting from the state observed at the
/// previous quiescent point, and the membership now observed must be one of
/// the final states the checker allows.
pub fn linearizability_stress(cfg: &LinearizabilityConfig) -> Result<LinearizabilityReport, VerifyError> {
    assert!(cfg.threads >= 1 && cfg.keys >= 1);
    let table = RobinHoodTable::new(TableConfig {
        capacity_log2: cfg.capacity_log2,
        shard_log2: cfg.shard_log2,
        max_threads: cfg.threads + 1,
    })?;
    let clock = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let start = Barrier::new(cfg.threads + 1);
    let end = Barrier::new(cfg.threads + 1);
    let events: Mutex<Vec<HistoryEvent>> = Mutex::new(Vec::new());
    let retries = AtomicU64::new(0);

    let mut present: BTreeMap<u64, bool> = (1..=cfg.keys).map(|k| (k, false)).collect();
    let mut violations = Vec::new();
    let mut epochs = 0;
    let mut calls = 0u64;
    let deadline = Instant::now() + cfg.duration;

    thread::scope(|s| -> Result<(), VerifyError> {
        let workers: Vec<_> = (0..cfg.threads)
            .map(|t| {
                let (table, clock, stop, start, end, events, retries) =
                    (&table, &clock, &stop, &start, &end, &events, &retries);
                s.spawn(move || -> Result<(), TableError> {
                    let mut h = table.handle()?;
                    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed ^ t as u64);
                    let mut local = Vec::with_capacity(cfg.ops_per_epoch * 2);
                    loop {
                        start.wait();
                        if stop.load(Ordering::SeqCst) {
                            break;
                        }
                        for _ in 0..cfg.ops_per_epoch {
                            let op = [OpKind::Add, OpKind::Remove, OpKind::Contains][rng.random_range(0..3)];
                            let key = rng.random_range(1..=cfg.keys);
                            local.push(HistoryEvent::invoke(t, op, key, clock.fetch_add(1, Ordering::SeqCst)));
                            let out = call(&mut h, op, key);
                            let index = clock.fetch_add(1, Ordering::SeqCst);
                            local.push(HistoryEvent::response(t, op, key, out?, index));
                        }
                        events.lock().unwrap().append(&mut local);
                        end.wait();
                    }
                    retries.fetch_add(h.stats().retries, Ordering::SeqCst);
                    Ok(())
                })
            })
            .collect();

        let mut checker = table.handle()?;
        loop {
            let finished = Instant::now() >= deadline && epochs > 0;
            stop.store(finished, Ordering::SeqCst);
            start.wait();
            if finished {
                break;
            }
            end.wait();
            let history = std::mem::take(&mut *events.lock().unwrap());
            calls += history.len() as u64 / 2;
            let verdicts = check_per_key_history_from(&history, |k| StateSet::exactly(present[&k]))?;
            for (verdict, finals) in verdicts {
                if !verdict.linearizable {
                    violations.push(LinearizabilityViolation {
                        epoch: epochs,
                        key: verdict.key,
                        reason: format!("no valid order for {} calls", verdict.calls),
                    });
                    continue;
                }
                let now = checker.contains(verdict.key)?;
                if !finals.contains(now) {
                    violations.push(LinearizabilityViolation {
                        epoch: epochs,
                        key: verdict.key,
                        reason: format!("observed present={now} after the epoch, allowed {finals:?}"),
                    });
                }
            }
            for (&k, p) in present.iter_mut() {
                *p = checker.contains(k)?;
            }
            epochs += 1;
        }
        for w in workers {
            w.join().expect("worker panicked")?;
        }
        Ok(())
    })?;

    let expected = present.iter().filter(|(_, &p)| p).map(|(&k, _)| k).collect();
    let final_audit = audit_table(&table, Some(&expected), Some(1..=cfg.keys))?;
    Ok(LinearizabilityReport {
        epochs,
        calls,
        retries: retries.into_inner(),
        passed: violations.is_empty() && final_audit.passed(),
        violations,
        final_audit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledStressConfig {
    pub threads: usize,
    pub duration: Duration,
    pub capacity_log2: u32,
    pub shard_log2: u32,
    pub load_factor: f64,
    pub update_ratio: f64,
    pub sample_interval: Duration,
    pub seed: u64,
}

impl Default for SampledStressConfig {
    fn default() -> Self {
        SampledStressConfig {
            threads: 8,
            duration: Duration::from_secs(10),
            capacity_log2: 12,
            shard_log2: 3,
            load_factor: 0.6,
            update_ratio: 0.5,
            sample_interval: Duration::from_millis(20),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledStressReport {
    pub samples: usize,
    pub failed_samples: usize,
    pub first_failure: Option<AuditReport>,
    pub ops: u64,
    pub final_audit: AuditReport,
    pub passed: bool,
}

/// Runs a mixed workload over keys `1..=capacity` and periodically stops
/// every worker between operations to audit the table, which then must
/// show no half-applied relocation.
pub fn sampled_stress(cfg: &SampledStressConfig) -> Result<SampledStressReport, VerifyError> {
    assert!(cfg.threads >= 1);
    let table = RobinHoodTable::new(TableConfig {
        capacity_log2: cfg.capacity_log2,
        shard_log2: cfg.shard_log2,
        max_threads: cfg.threads + 2,
    })?;
    let key_space: RangeInclusive<u64> = 1..=table.capacity() as u64;
    {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
        let mut h = table.handle()?;
        let target = (cfg.load_factor * table.capacity() as f64).round() as usize;
        let mut n = 0;
        while n < target {
            if h.add(rng.random_range(key_space.clone()))? {
                n += 1;
            }
        }
    }

    let stop = AtomicBool::new(false);
    let pause = AtomicBool::new(false);
    let parked = Barrier::new(cfg.threads + 1);
    let released = Barrier::new(cfg.threads + 1);
    let start = Barrier::new(cfg.threads + 1);
    let ops = AtomicU64::new(0);
    let mut samples = 0;
    let mut failed_samples = 0;
    let mut first_failure = None;

    thread::scope(|s| -> Result<(), VerifyError> {
        let workers: Vec<_> = (0..cfg.threads)
            .map(|t| {
                let (table, stop, pause, parked, released, start, ops, key_space) =
                    (&table, &stop, &pause, &parked, &released, &start, &ops, key_space.clone());
                s.spawn(move || -> Result<(), TableError> {
                    let mut h = table.handle()?;
                    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed ^ (t as u64 + 1));
                    let mut done = 0u64;
                    start.wait();
                    while !stop.load(Ordering::SeqCst) {
                        if pause.load(Ordering::SeqCst) {
                            parked.wait();
                            released.wait();
                            continue;
                        }
                        let r: f64 = rng.random();
                        let key = rng.random_range(key_space.clone());
                        let op = if r < cfg.update_ratio / 2.0 {
                            OpKind::Add
                        } else if r < cfg.update_ratio {
                            OpKind::Remove
                        } else {
                            OpKind::Contains
                        };
                        match call(&mut h, op, key) {
                            Ok(_) | Err(TableError::Saturated) => {}
                            Err(e) => return Err(e),
                        }
                        done += 1;
                    }
                    ops.fetch_add(done, Ordering::SeqCst);
                    Ok(())
                })
            })
            .collect();

        start.wait();
        let deadline = Instant::now() + cfg.duration;
        let mut outcome = Ok(());
        while Instant::now() < deadline {
            thread::sleep(cfg.sample_interval.min(deadline.saturating_duration_since(Instant::now())));
            pause.store(true, Ordering::SeqCst);
            parked.wait();
            let report = audit_table(&table, None, None);
            pause.store(false, Ordering::SeqCst);
            released.wait();
            match report {
                Ok(r) => {
                    samples += 1;
                    if !r.passed() {
                        failed_samples += 1;
                        first_failure.get_or_insert(r);
                    }
                }
                Err(e) => {
                    outcome = Err(e.into());
                    break;
                }
            }
        }
        stop.store(true, Ordering::SeqCst);
        for w in workers {
            w.join().expect("worker panicked")?;
        }
        outcome
    })?;

    let final_audit = audit_table(&table, None, Some(key_space))?;
    Ok(SampledStressReport {
        samples,
        failed_samples,
        first_failure,
        ops: ops.into_inner(),
        passed: failed_samples == 0 && final_audit.passed(),
        final_audit,
    })
}
