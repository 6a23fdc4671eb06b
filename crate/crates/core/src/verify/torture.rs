//! K-CAS atomicity torture: overlapping counter increments that must
//! reconcile exactly, and small randomized races whose outcome must match
//! some serial order.

use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};
use std::sync::{Barrier, Mutex};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::kcas::{Kcas, KcasDescriptor, PlantedFault, TaggedWord, MAX_ENTRIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TortureConfig {
    pub threads: usize,
    /// Cells shared by the counter test, at most [`MAX_ENTRIES`].
    pub cells: usize,
    pub duration: Duration,
    pub overlap_rounds: usize,
    pub seed: u64,
    pub fault: PlantedFault,
}

impl Default for TortureConfig {
    fn default() -> Self {
        TortureConfig {
            threads: 8,
            cells: 4,
            duration: Duration::from_secs(10),
            overlap_rounds: 10_000,
            seed: 1,
            fault: PlantedFault::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterReport {
    pub threads: usize,
    pub cells: usize,
    pub attempts: u64,
    pub successes: u64,
    /// Per cell, the number of successful operations that included it.
    pub expected: Vec<u64>,
    pub observed: Vec<u64>,
    pub orphaned_refs: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub rounds: usize,
    /// Rounds whose results and final cells match some serial order.
    pub matched: usize,
    pub first_mismatch: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TortureReport {
    pub counter: CounterReport,
    pub overlap: OverlapReport,
    pub passed: bool,
}

fn v(x: u64) -> TaggedWord {
    TaggedWord::value(x).expect("counter fits in 62 bits")
}

/// Every thread repeatedly increments a random non-empty subset of the
/// cells in one K-CAS. Afterwards each cell must equal the number of
/// successful operations that covered it, and no descriptor may linger.
pub fn counter_torture(threads: usize, cells: usize, duration: Duration, seed: u64, fault: PlantedFault) -> CounterReport {
    assert!((1..=MAX_ENTRIES).contains(&cells), "cells must be in 1..={MAX_ENTRIES}");
    assert!(threads >= 1);
    let arena = Kcas::new(cells, threads);
    arena.plant_fault(fault);
    let stop = AtomicBool::new(false);
    let start = Barrier::new(threads + 1);

    let per_thread: Vec<(u64, u64, Vec<u64>)> = thread::scope(|s| {
        let workers: Vec<_> = (0..threads)
            .map(|t| {
                let (arena, stop, start) = (&arena, &stop, &start);
                s.spawn(move || {
                    let h = arena.register().expect("one slot per thread");
                    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ t as u64);
                    let mut desc = KcasDescriptor::new();
                    let mut tally = vec![0u64; cells];
                    let (mut attempts, mut successes) = (0u64, 0u64);
                    start.wait();
                    while !stop.load(Ordering::Relaxed) {
                        let subset = loop {
                            let m: u64 = rng.random::<u64>() & ((1u128 << cells) - 1) as u64;
                            if m != 0 {
                                break m;
                            }
                        };
                        desc.clear();
                        for c in (0..cells).filter(|c| subset >> c & 1 == 1) {
                            let cur = h.read(c).payload();
                            desc.add(c, v(cur), v(cur + 1)).expect("at most MAX_ENTRIES cells");
                        }
                        attempts += 1;
                        if h.kcas(&mut desc).expect("valid descriptor") {
                            successes += 1;
                            for c in (0..cells).filter(|c| subset >> c & 1 == 1) {
                                tally[c] += 1;
                            }
                        }
                    }
                    (attempts, successes, tally)
                })
            })
            .collect();
        start.wait();
        thread::sleep(duration);
        stop.store(true, Ordering::Relaxed);
        workers.into_iter().map(|w| w.join().expect("worker panicked")).collect()
    });

    let attempts = per_thread.iter().map(|(a, _, _)| a).sum();
    let successes = per_thread.iter().map(|(_, s, _)| s).sum();
    let mut expected = vec![0u64; cells];
    for (_, _, tally) in &per_thread {
        for (e, t) in expected.iter_mut().zip(tally) {
            *e += t;
        }
    }
    let raw: Vec<TaggedWord> = (0..cells).map(|c| arena.load_raw(c)).collect();
    let orphaned_refs = raw.iter().filter(|w| !w.is_value()).count();
    let observed: Vec<u64> = raw.iter().map(|w| w.payload()).collect();
    CounterReport {
        threads,
        cells,
        attempts,
        successes,
        passed: orphaned_refs == 0 && observed == expected,
        expected,
        observed,
        orphaned_refs,
    }
}

const OVERLAP_CELLS: usize = 3;
const OVERLAP_OPS: usize = 3;
const OVERLAP_VALUES: u64 = 3;

#[derive(Debug, Clone, Default)]
struct RoundSpec {
    initial: [u64; OVERLAP_CELLS],
    /// Per operation: (cell, expected, new).
    ops: [Vec<(usize, u64, u64)>; OVERLAP_OPS],
    /// Per operation: spin iterations before starting.
    delays: [u32; OVERLAP_OPS],
}

fn random_round(rng: &mut Xoshiro256PlusPlus) -> RoundSpec {
    let mut spec = RoundSpec::default();
    for c in &mut spec.initial {
        *c = rng.random_range(0..OVERLAP_VALUES);
    }
    for i in 0..OVERLAP_OPS {
        let subset = rng.random_range(1..(1u8 << OVERLAP_CELLS));
        spec.ops[i] = (0..OVERLAP_CELLS)
            .filter(|c| subset >> c & 1 == 1)
            .map(|c| {
                // Mostly expect the initial value so that some ops succeed.
                let expected = if rng.random_bool(0.7) {
                    spec.initial[c]
                } else {
                    rng.random_range(0..OVERLAP_VALUES)
                };
                (c, expected, rng.random_range(0..OVERLAP_VALUES))
            })
            .collect();
        spec.delays[i] = rng.random_range(0..2_000);
    }
    spec
}

/// Serial K-CAS semantics: succeed iff all expected values match.
fn serial_kcas(cells: &mut [u64; OVERLAP_CELLS], op: &[(usize, u64, u64)]) -> bool {
    if op.iter().all(|&(c, e, _)| cells[c] == e) {
        for &(c, _, n) in op {
            cells[c] = n;
        }
        true
    } else {
        false
    }
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

fn explained(spec: &RoundSpec, results: &[bool; OVERLAP_OPS], finals: &[u64; OVERLAP_CELLS]) -> bool {
    PERMUTATIONS.iter().any(|order| {
        let mut cells = spec.initial;
        let mut out = [false; OVERLAP_OPS];
        for &i in order {
            out[i] = serial_kcas(&mut cells, &spec.ops[i]);
        }
        out == *results && cells == *finals
    })
}

/// Races three K-CAS operations over three cells `rounds` times with
/// random staggering, and checks every outcome against the six serial
/// orders.
pub fn overlap_enumeration(rounds: usize, seed: u64, fault: PlantedFault) -> OverlapReport {
    let arena = Kcas::new(OVERLAP_CELLS, OVERLAP_OPS + 1);
    arena.plant_fault(fault);
    let spec = Mutex::new(RoundSpec::default());
    let results: [AtomicU8; OVERLAP_OPS] = std::array::from_fn(|_| AtomicU8::new(0));
    let go = Barrier::new(OVERLAP_OPS + 1);
    let done = Barrier::new(OVERLAP_OPS + 1);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut matched = 0;
    let mut first_mismatch = None;

    thread::scope(|s| {
        for i in 0..OVERLAP_OPS {
            let (arena, spec, results, go, done) = (&arena, &spec, &results, &go, &done);
            s.spawn(move || {
                let h = arena.register().expect("one slot per thread");
                let mut desc = KcasDescriptor::new();
                for _ in 0..rounds {
                    go.wait();
                    let (op, delay) = {
                        let spec = spec.lock().unwrap();
                        (spec.ops[i].clone(), spec.delays[i])
                    };
                    for n in 0..delay {
                        if n % 256 == 255 {
                            thread::yield_now();
                        }
                        std::hint::spin_loop();
                    }
                    desc.clear();
                    for (c, e, n) in op {
                        desc.add(c, v(e), v(n)).expect("three distinct cells");
                    }
                    let ok = h.kcas(&mut desc).expect("valid descriptor");
                    results[i].store(u8::from(ok), Ordering::SeqCst);
                    done.wait();
                }
            });
        }

        let h = arena.register().expect("spare slot for the driver");
        for round in 0..rounds {
            let next = random_round(&mut rng);
            for (c, &x) in next.initial.iter().enumerate() {
                h.write(c, v(x)).expect("value in range");
            }
            *spec.lock().unwrap() = next.clone();
            go.wait();
            done.wait();
            let got: [bool; OVERLAP_OPS] = std::array::from_fn(|i| results[i].load(Ordering::SeqCst) == 1);
            let finals: [u64; OVERLAP_CELLS] = std::array::from_fn(|c| arena.load_raw(c).payload());
            if explained(&next, &got, &finals) {
                matched += 1;
            } else if first_mismatch.is_none() {
                first_mismatch = Some(format!(
                    "round {round}: initial {:?}, ops {:?}, results {got:?}, final {finals:?}",
                    next.initial, next.ops
                ));
            }
        }
    });

    OverlapReport {
        rounds,
        matched,
        passed: matched == rounds,
        first_mismatch,
    }
}

/// Runs the counter test and then the overlap test.
pub fn kcas_torture(cfg: &TortureConfig) -> TortureReport {
    let counter = counter_torture(cfg.threads, cfg.cells, cfg.duration, cfg.seed, cfg.fault);
    let overlap = overlap_enumeration(cfg.overlap_rounds, cfg.seed, cfg.fault);
    TortureReport {
        passed: counter.passed && overlap.passed,
        counter,
        overlap,
    }
}
