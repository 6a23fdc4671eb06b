//! The concurrent Robin Hood hash set.
//!
//! Keys live directly in a power-of-two array of K-CAS managed words; Nil is
//! the value 0. Every relocation made by `add` or `remove` is committed by a
//! single multi-word CAS that also bumps a timestamp for each block of
//! `2^shard_log2` buckets it touches. A search that ends without finding its
//! key re-reads the timestamps of every block it crossed and starts over if
//! any of them moved, since an entry may have been shifted behind it.

mod pause;
mod probe;
mod snapshot;

use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;

use crossbeam_utils::Backoff;

pub use pause::{OpKind, PauseHook, PausePoint, PAUSE_POINTS_ENABLED};
pub use probe::{Dfb, ProbeState, ShardStamp};
pub use snapshot::TableSnapshot;

use crate::error::{KcasError, TableError};
use crate::hash;
use crate::kcas::{Kcas, KcasDescriptor, KcasHandle, TaggedWord, MAX_PAYLOAD};

pub const NIL: u64 = 0;

/// Largest supported `capacity_log2`.
pub const MAX_CAPACITY_LOG2: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableConfig {
    pub capacity_log2: u32,
    /// Buckets per timestamp, as a power of two.
    pub shard_log2: u32,
    /// Maximum number of simultaneously registered handles.
    pub max_threads: usize,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            capacity_log2: 10,
            shard_log2: 3,
            max_threads: 64,
        }
    }
}

impl TableConfig {
    pub fn with_capacity_log2(capacity_log2: u32) -> Self {
        TableConfig {
            capacity_log2,
            ..Self::default()
        }
    }
}

pub struct RobinHoodTable {
    arena: Kcas,
    mask: usize,
    capacity_log2: u32,
    shard_log2: u32,
    pause: Option<Arc<dyn PauseHook>>,
    fault: AtomicU8,
}

/// Deliberate defects used to check that the verifiers catch real bugs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[repr(u8)]
pub enum TableFault {
    #[default]
    None = 0,
    /// Lookups return "absent" without re-checking the shard timestamps.
    SkipReadValidation = 1,
    /// Adds commit without comparing the untouched shards they crossed.
    SkipAddValidation = 2,
}

impl std::fmt::Debug for RobinHoodTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RobinHoodTable")
            .field("capacity_log2", &self.capacity_log2)
            .field("shard_log2", &self.shard_log2)
            .finish_non_exhaustive()
    }
}

impl RobinHoodTable {
    pub fn new(config: TableConfig) -> Result<Self, TableError> {
        let TableConfig {
            capacity_log2,
            shard_log2,
            max_threads,
        } = config;
        if !(1..=MAX_CAPACITY_LOG2).contains(&capacity_log2) {
            return Err(TableError::InvalidConfig(format!(
                "capacity_log2 {capacity_log2} outside 1..={MAX_CAPACITY_LOG2}"
            )));
        }
        if shard_log2 > capacity_log2 {
            return Err(TableError::InvalidConfig(format!(
                "shard_log2 {shard_log2} exceeds capacity_log2 {capacity_log2}"
            )));
        }
        if !(1..=crate::kcas::MAX_THREADS).contains(&max_threads) {
            return Err(TableError::InvalidConfig(format!(
                "max_threads {max_threads} outside 1..={}",
                crate::kcas::MAX_THREADS
            )));
        }
        let capacity = 1usize << capacity_log2;
        let shards = capacity >> shard_log2;
        Ok(RobinHoodTable {
            arena: Kcas::new(capacity + shards, max_threads),
            mask: capacity - 1,
            capacity_log2,
            shard_log2,
            pause: None,
            fault: AtomicU8::new(TableFault::None as u8),
        })
    }

    pub fn capacity(&self) -> usize {
        self.mask + 1
    }

    pub fn capacity_log2(&self) -> u32 {
        self.capacity_log2
    }

    pub fn shard_log2(&self) -> u32 {
        self.shard_log2
    }

    pub fn shard_count(&self) -> usize {
        self.capacity() >> self.shard_log2
    }

    pub fn config(&self) -> TableConfig {
        TableConfig {
            capacity_log2: self.capacity_log2,
            shard_log2: self.shard_log2,
            max_threads: self.arena.max_threads(),
        }
    }

    /// Underlying word arena: cells first, then one word per shard.
    pub fn arena(&self) -> &Kcas {
        &self.arena
    }

    /// Registers the calling thread.
    pub fn handle(&self) -> Result<TableHandle<'_>, TableError> {
        Ok(TableHandle {
            table: self,
            kcas: self.arena.register()?,
            desc: KcasDescriptor::new(),
            probe: ProbeState::default(),
            stats: OpStats::default(),
            backoff: false,
            last_commit: Vec::new(),
        })
    }

    /// Installs a pause hook. Has no effect unless [`PAUSE_POINTS_ENABLED`].
    pub fn set_pause_hook(&mut self, hook: Arc<dyn PauseHook>) {
        self.pause = Some(hook);
    }

    pub fn plant_fault(&self, fault: TableFault) {
        self.fault.store(fault as u8, Ordering::Relaxed);
    }

    #[inline]
    fn has_fault(&self, fault: TableFault) -> bool {
        self.fault.load(Ordering::Relaxed) == fault as u8
    }

    pub fn clear_pause_hook(&mut self) {
        self.pause = None;
    }

    #[inline]
    pub fn home(&self, key: u64) -> usize {
        hash::home_bucket(key, self.mask)
    }

    /// Distance of `key` from its home bucket if it sat at `index`.
    #[inline]
    pub fn calc_dist(&self, key: u64, index: usize) -> Dfb {
        Dfb(hash::distance(key, index, self.mask))
    }

    #[inline]
    pub fn shard_of(&self, index: usize) -> usize {
        index >> self.shard_log2
    }

    #[inline]
    fn timestamp_loc(&self, shard: usize) -> usize {
        self.capacity() + shard
    }

    /// Raw copy of cells and timestamps. Callers must ensure quiescence.
    pub fn snapshot(&self) -> TableSnapshot {
        TableSnapshot {
            capacity_log2: self.capacity_log2,
            shard_log2: self.shard_log2,
            cells: (0..self.capacity()).map(|i| self.arena.load_raw(i)).collect(),
            timestamps: (0..self.shard_count())
                .map(|s| self.arena.load_raw(self.timestamp_loc(s)))
                .collect(),
        }
    }
}

/// Per-handle operation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpStats {
    pub ops: u64,
    /// Passes abandoned because a timestamp moved or the commit failed.
    pub retries: u64,
}

/// A thread's access point to a [`RobinHoodTable`].
pub struct TableHandle<'t> {
    table: &'t RobinHoodTable,
    kcas: KcasHandle<'t>,
    desc: KcasDescriptor,
    probe: ProbeState,
    stats: OpStats,
    backoff: bool,
    last_commit: Vec<crate::kcas::KcasEntry>,
}

fn check_key(key: u64) -> Result<u64, TableError> {
    if key == NIL || key > MAX_PAYLOAD {
        return Err(TableError::InvalidKey(key));
    }
    Ok(key)
}

#[inline]
fn word(v: u64) -> TaggedWord {
    TaggedWord::value(v).expect("keys and counters fit in 62 bits")
}

fn saturate(e: KcasError) -> TableError {
    match e {
        KcasError::CapacityExceeded { .. } => TableError::Saturated,
        other => TableError::Kcas(other),
    }
}

impl<'t> TableHandle<'t> {
    pub fn table(&self) -> &'t RobinHoodTable {
        self.table
    }

    /// Descriptor slot of this handle, as passed to pause hooks.
    pub fn slot(&self) -> usize {
        self.kcas.slot()
    }

    pub fn stats(&self) -> OpStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = OpStats::default();
    }

    /// Snoozes with exponential backoff before each retry.
    pub fn set_backoff(&mut self, on: bool) {
        self.backoff = on;
    }

    /// Entries of the last descriptor this handle committed successfully.
    pub fn last_commit(&self) -> &[crate::kcas::KcasEntry] {
        &self.last_commit
    }

    #[inline]
    fn pause(&self, point: PausePoint) {
        if PAUSE_POINTS_ENABLED {
            if let Some(hook) = &self.table.pause {
                hook.pause(self.kcas.slot(), point);
            }
        }
    }

    #[inline]
    fn read_cell(&self, index: usize) -> u64 {
        self.kcas.read(index).payload()
    }

    /// Current counter of the shard covering bucket `index`, helping any
    /// pending operation on it first.
    pub fn read_timestamp(&self, index: usize) -> (usize, u64) {
        let shard = self.table.shard_of(index);
        let loc = self.table.timestamp_loc(shard);
        (shard, self.kcas.read(loc).payload())
    }

    /// Reads the shard of `index` the first time this pass reaches it.
    #[inline]
    fn observe(&mut self, index: usize) {
        let shard = self.table.shard_of(index);
        if self.probe.stamp(shard).is_none() {
            let (_, ts) = self.read_timestamp(index);
            self.probe.record(shard, ts);
        }
    }

    fn timestamps_unchanged(&self) -> bool {
        self.probe.timestamps().iter().all(|s| {
            let loc = self.table.timestamp_loc(s.shard);
            self.kcas.read(loc).payload() == s.observed
        })
    }

    /// Marks the shard of `index` for an increment in this pass's commit.
    fn add_timestamp_increment(&mut self, index: usize) {
        let shard = self.table.shard_of(index);
        let observed = self
            .probe
            .stamp(shard)
            .map(|s| s.observed)
            .unwrap_or_else(|| self.read_timestamp(index).1);
        self.probe.mark_touched(shard, observed);
    }

    /// Appends the shard entries: touched shards are incremented, and with
    /// `validate_untouched` every other shard crossed is compared unchanged.
    fn push_timestamps(&mut self, validate_untouched: bool) -> Result<(), TableError> {
        for s in self.probe.timestamps() {
            if !s.touched && !validate_untouched {
                continue;
            }
            let bump = u64::from(s.touched);
            self.desc
                .add(
                    self.table.timestamp_loc(s.shard),
                    word(s.observed),
                    word(s.observed + bump),
                )
                .map_err(saturate)?;
        }
        Ok(())
    }

    fn push_cell(&mut self, index: usize, expected: u64, new: u64) -> Result<(), TableError> {
        self.desc
            .add(index, word(expected), word(new))
            .map_err(saturate)
    }

    fn commit(&mut self) -> Result<bool, TableError> {
        let ok = self.kcas.kcas(&mut self.desc)?;
        if ok {
            self.last_commit.clear();
            self.last_commit.extend_from_slice(self.desc.entries());
        }
        Ok(ok)
    }

    fn note_retry(&mut self, backoff: &Backoff) {
        self.stats.retries += 1;
        if self.backoff {
            backoff.snooze();
        }
    }

    pub fn contains(&mut self, key: u64) -> Result<bool, TableError> {
        let key = check_key(key)?;
        let mask = self.table.mask;
        let start = self.table.home(key);
        let backoff = Backoff::new();
        loop {
            self.probe.reset(start, key);
            let mut i = start;
            for dist in 0..=mask {
                self.probe.cur_dist = dist;
                self.observe(i);
                let cur = self.read_cell(i);
                self.pause(PausePoint::AfterCellRead {
                    op: OpKind::Contains,
                    index: i,
                });
                if cur == NIL {
                    break;
                }
                if cur == key {
                    self.stats.ops += 1;
                    return Ok(true);
                }
                if self.table.calc_dist(cur, i).0 < dist {
                    break;
                }
                i = (i + 1) & mask;
            }
            if self.table.has_fault(TableFault::SkipReadValidation) || self.timestamps_unchanged() {
                self.stats.ops += 1;
                return Ok(false);
            }
            self.note_retry(&backoff);
        }
    }

    pub fn add(&mut self, key: u64) -> Result<bool, TableError> {
        let key = check_key(key)?;
        let mask = self.table.mask;
        let start = self.table.home(key);
        let backoff = Backoff::new();
        loop {
            self.desc.clear();
            self.probe.reset(start, key);
            let mut i = start;
            let mut placed = false;
            for _ in 0..=mask {
                self.observe(i);
                let cur = self.read_cell(i);
                self.pause(PausePoint::AfterCellRead {
                    op: OpKind::Add,
                    index: i,
                });
                if cur == NIL {
                    self.push_cell(i, NIL, self.probe.active_key)?;
                    // Every crossed shard is validated so that a shift which
                    // moved `key` behind this walk fails the commit.
                    self.push_timestamps(!self.table.has_fault(TableFault::SkipAddValidation))?;
                    placed = true;
                    break;
                }
                if cur == key {
                    self.stats.ops += 1;
                    return Ok(false);
                }
                let dist = self.table.calc_dist(cur, i).0;
                if dist < self.probe.cur_dist {
                    self.push_cell(i, cur, self.probe.active_key)?;
                    self.add_timestamp_increment(i);
                    self.probe.active_key = cur;
                    self.probe.cur_dist = dist;
                }
                i = (i + 1) & mask;
                self.probe.cur_dist += 1;
            }
            if !placed {
                return Err(TableError::Saturated);
            }
            self.pause(PausePoint::BeforeCommit { op: OpKind::Add });
            if self.commit()? {
                self.stats.ops += 1;
                return Ok(true);
            }
            self.note_retry(&backoff);
        }
    }

    pub fn remove(&mut self, key: u64) -> Result<bool, TableError> {
        let key = check_key(key)?;
        let mask = self.table.mask;
        let start = self.table.home(key);
        let backoff = Backoff::new();
        loop {
            self.desc.clear();
            self.probe.reset(start, key);
            let mut i = start;
            let mut found = None;
            for dist in 0..=mask {
                self.probe.cur_dist = dist;
                self.observe(i);
                let cur = self.read_cell(i);
                self.pause(PausePoint::AfterCellRead {
                    op: OpKind::Remove,
                    index: i,
                });
                if cur == NIL {
                    break;
                }
                if cur == key {
                    found = Some(i);
                    break;
                }
                if self.table.calc_dist(cur, i).0 < dist {
                    break;
                }
                i = (i + 1) & mask;
            }
            match found {
                Some(at) => {
                    self.shuffle_items(at, key)?;
                    self.pause(PausePoint::BeforeCommit { op: OpKind::Remove });
                    if self.commit()? {
                        self.stats.ops += 1;
                        return Ok(true);
                    }
                }
                None => {
                    if self.table.has_fault(TableFault::SkipReadValidation)
                        || self.timestamps_unchanged()
                    {
                        self.stats.ops += 1;
                        return Ok(false);
                    }
                }
            }
            self.note_retry(&backoff);
        }
    }

    /// Builds the backward-shift descriptor for deleting `key` at `found_at`.
    ///
    /// Each following entry moves back one cell until the run ends at a Nil
    /// cell or at an entry sitting in its home bucket. That terminating cell
    /// is included unchanged, so the commit fails if something landed there
    /// in the meantime.
    fn shuffle_items(&mut self, found_at: usize, key: u64) -> Result<(), TableError> {
        let mask = self.table.mask;
        let mut j = found_at;
        let mut occupant = key;
        loop {
            let next = (j + 1) & mask;
            if next == found_at {
                // The run spans the whole table; `found_at` is already in
                // the descriptor.
                self.push_cell(j, occupant, NIL)?;
                self.add_timestamp_increment(j);
                break;
            }
            self.observe(next);
            let nxt = self.read_cell(next);
            if nxt == NIL || self.table.calc_dist(nxt, next).0 == 0 {
                self.push_cell(j, occupant, NIL)?;
                self.add_timestamp_increment(j);
                self.push_cell(next, nxt, nxt)?;
                break;
            }
            self.push_cell(j, occupant, nxt)?;
            self.add_timestamp_increment(j);
            j = next;
            occupant = nxt;
        }
        self.push_timestamps(false)
    }
}
