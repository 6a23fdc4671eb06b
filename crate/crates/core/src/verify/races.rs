//! Directed two-thread schedules that force the interleavings the shard
//! timestamps exist to catch.
//!
//! A victim thread runs one operation and is parked at a pause point; an
//! interferer then commits a conflicting update and lets the victim resume.
//! Every scenario is laid out on a 16-bucket table with 8-bucket shards.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::audit::{audit_table, AuditReport};
use crate::error::{TableError, VerifyError};
use crate::hash::keys_with_home;
use crate::oracle::SerialTable;
use crate::table::{
    OpKind, PauseHook, PausePoint, RobinHoodTable, TableConfig, TableFault, TableHandle,
    PAUSE_POINTS_ENABLED,
};

const CAPACITY_LOG2: u32 = 4;
const SHARD_LOG2: u32 = 3;
const MASK: usize = (1 << CAPACITY_LOG2) - 1;
const RESUME_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RaceScenario {
    /// A reader stands between two cells while a remove shifts its key
    /// back past it.
    ReaderVsRemoveShift,
    /// A reader looking for an absent key while an add displaces entries
    /// across its path.
    ReaderVsAddDisplacement,
    /// An add of a present key walks past it while a remove shifts it back.
    AddDuplicateVsShift,
    /// An add's descriptor is complete when an unrelated remove bumps a
    /// shard it observed.
    StaleTimestampAdd,
}

impl RaceScenario {
    pub const ALL: [RaceScenario; 4] = [
        RaceScenario::ReaderVsRemoveShift,
        RaceScenario::ReaderVsAddDisplacement,
        RaceScenario::AddDuplicateVsShift,
        RaceScenario::StaleTimestampAdd,
    ];

    pub fn id(self) -> &'static str {
        match self {
            RaceScenario::ReaderVsRemoveShift => "reader-vs-remove-shift",
            RaceScenario::ReaderVsAddDisplacement => "reader-vs-add-displacement",
            RaceScenario::AddDuplicateVsShift => "add-duplicate-vs-shift",
            RaceScenario::StaleTimestampAdd => "stale-timestamp-add",
        }
    }

    fn plan(self) -> Plan {
        let home = |b: usize, n: usize| keys_with_home(b, MASK, 1).nth(n).unwrap();
        let (x, y) = (home(4, 0), home(4, 1));
        match self {
            // 4:X 5:Y 6:V 7:Z. Removing Y moves V to 5 and Z to 6, so a
            // reader paused after cell 5 next meets Z closer to home than
            // its own distance and would stop short of V.
            RaceScenario::ReaderVsRemoveShift => Plan {
                initial: vec![x, y, home(4, 2), home(5, 0)],
                victim: (OpKind::Contains, home(4, 2)),
                point: PausePoint::AfterCellRead { op: OpKind::Contains, index: 5 },
                interferer: (OpKind::Remove, y),
            },
            // 4:X 5:Y 6:Z. Adding W (home 4) pushes Z to 7; a reader for
            // an absent home-4 key paused after cell 4 meets Z one cell
            // later and ends early.
            RaceScenario::ReaderVsAddDisplacement => Plan {
                initial: vec![x, y, home(5, 0)],
                victim: (OpKind::Contains, home(4, 3)),
                point: PausePoint::AfterCellRead { op: OpKind::Contains, index: 4 },
                interferer: (OpKind::Add, home(4, 2)),
            },
            // 4:X 5:Y 6:K. Removing Y moves K to 5 behind an add(K) paused
            // after cell 5, which then finds 6 empty.
            RaceScenario::AddDuplicateVsShift => Plan {
                initial: vec![x, y, home(5, 0)],
                victim: (OpKind::Add, home(5, 0)),
                point: PausePoint::AfterCellRead { op: OpKind::Add, index: 5 },
                interferer: (OpKind::Remove, y),
            },
            // 1:Q 4:X 5:Y 6:Z. Removing Q bumps shard 0, which the paused
            // add(W) observed before building its commit.
            RaceScenario::StaleTimestampAdd => Plan {
                initial: vec![home(1, 0), x, y, home(5, 0)],
                victim: (OpKind::Add, home(4, 2)),
                point: PausePoint::BeforeCommit { op: OpKind::Add },
                interferer: (OpKind::Remove, home(1, 0)),
            },
        }
    }
}

impl fmt::Display for RaceScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for RaceScenario {
    type Err = VerifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RaceScenario::ALL
            .into_iter()
            .find(|sc| sc.id() == s)
            .ok_or_else(|| VerifyError::UnknownScenario(s.to_owned()))
    }
}

struct Plan {
    initial: Vec<u64>,
    victim: (OpKind, u64),
    point: PausePoint,
    interferer: (OpKind, u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RaceOptions {
    /// Park the victim and run the interferer; without pauses only the
    /// victim runs.
    pub pauses: bool,
    pub fault: TableFault,
}

impl Default for RaceOptions {
    fn default() -> Self {
        RaceOptions {
            pauses: PAUSE_POINTS_ENABLED,
            fault: TableFault::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceOutcome {
    pub scenario: RaceScenario,
    /// The victim was parked and the interferer ran in between.
    pub interleaved: bool,
    pub result: bool,
    pub expected: bool,
    pub retries: u64,
    /// The final cells equal a serial replay of the interferer then the
    /// victim.
    pub layout_matches: bool,
    pub audit: AuditReport,
    pub passed: bool,
}

enum Signal {
    Parked,
    Finished,
}

struct Rendezvous {
    target: AtomicUsize,
    point: PausePoint,
    fired: AtomicBool,
    signal: Mutex<Sender<Signal>>,
    resume: Mutex<Receiver<()>>,
}

impl PauseHook for Rendezvous {
    fn pause(&self, slot: usize, point: PausePoint) {
        if slot != self.target.load(Ordering::SeqCst) || point != self.point {
            return;
        }
        if self.fired.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = self.signal.lock().unwrap().send(Signal::Parked);
        let _ = self.resume.lock().unwrap().recv_timeout(RESUME_TIMEOUT);
    }
}

fn apply(h: &mut TableHandle<'_>, (op, key): (OpKind, u64)) -> Result<bool, TableError> {
    match op {
        OpKind::Add => h.add(key),
        OpKind::Remove => h.remove(key),
        OpKind::Contains => h.contains(key),
    }
}

fn apply_serial(t: &mut SerialTable, (op, key): (OpKind, u64)) -> bool {
    match op {
        OpKind::Add => t.seq_add(key),
        OpKind::Remove => t.seq_remove(key),
        OpKind::Contains => t.seq_contains(key),
    }
    .expect("scenario keys are valid")
}

/// Runs one scenario.
///
/// With pauses the pass condition is: the victim returns the serially
/// correct answer, retried at least once, and the table afterwards audits
/// clean and matches the serial replay cell for cell. Without pauses only
/// the answer and the audit are checked.
pub fn run_race(scenario: RaceScenario, opts: RaceOptions) -> Result<RaceOutcome, VerifyError> {
    let plan = scenario.plan();
    let mut table = RobinHoodTable::new(TableConfig {
        capacity_log2: CAPACITY_LOG2,
        shard_log2: SHARD_LOG2,
        max_threads: 4,
    })?;
    let mut serial = SerialTable::new(CAPACITY_LOG2);
    {
        let mut h = table.handle()?;
        for &k in &plan.initial {
            h.add(k)?;
            serial.seq_add(k).expect("below capacity");
        }
    }
    table.plant_fault(opts.fault);

    let pauses = opts.pauses && PAUSE_POINTS_ENABLED;
    let (signal_tx, signal_rx) = mpsc::channel();
    let (resume_tx, resume_rx) = mpsc::channel();
    let hook = Arc::new(Rendezvous {
        target: AtomicUsize::new(usize::MAX),
        point: plan.point,
        fired: AtomicBool::new(false),
        signal: Mutex::new(signal_tx.clone()),
        resume: Mutex::new(resume_rx),
    });
    if pauses {
        table.set_pause_hook(hook.clone());
    }

    let table = &table;
    let (victim, interleaved, interfered) = thread::scope(|s| -> Result<_, VerifyError> {
        let victim = s.spawn(|| -> Result<(bool, u64), TableError> {
            let mut h = table.handle()?;
            hook.target.store(h.slot(), Ordering::SeqCst);
            let out = apply(&mut h, plan.victim);
            let _ = signal_tx.send(Signal::Finished);
            Ok((out?, h.stats().retries))
        });
        let mut interleaved = false;
        let mut interfered = None;
        if pauses {
            if let Ok(Signal::Parked) = signal_rx.recv() {
                interleaved = true;
                let mut h = table.handle()?;
                interfered = Some(apply(&mut h, plan.interferer)?);
                let _ = resume_tx.send(());
            }
        }
        let victim = victim.join().expect("victim thread panicked")?;
        Ok((victim, interleaved, interfered))
    })?;

    if interfered.is_some() {
        apply_serial(&mut serial, plan.interferer);
    }
    let expected = apply_serial(&mut serial, plan.victim);
    let (result, retries) = victim;
    let snapshot = table.snapshot();
    let layout_matches = snapshot
        .cells
        .iter()
        .map(|w| w.payload())
        .eq(serial.cells().iter().copied());
    let serial_keys: BTreeSet<u64> = serial.snapshot(SHARD_LOG2).keys();
    let audit = audit_table(table, Some(&serial_keys), None)?;

    let passed = result == expected
        && audit.passed()
        && (!pauses || (interleaved && retries >= 1 && layout_matches));
    Ok(RaceOutcome {
        scenario,
        interleaved,
        result,
        expected,
        retries,
        layout_matches,
        audit,
        passed,
    })
}

/// Runs the named scenario with pauses (when compiled in) and no faults.
pub fn run_directed_race(id: &str) -> Result<RaceOutcome, VerifyError> {
    run_race(id.parse()?, RaceOptions::default())
}
