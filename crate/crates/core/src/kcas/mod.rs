//! Multi-word compare-and-swap over an arena of tagged 64-bit words.
//!
//! The construction is the classic two-phase one: every entry is first
//! installed with a restricted double-compare single-swap (RDCSS) that only
//! lands while the operation is undecided, then the status is decided with a
//! single CAS, then every installed reference is replaced by the new (or the
//! old) value. Any thread that meets a descriptor reference helps it finish.
//!
//! Descriptors are never allocated. Each registered thread owns one K-CAS
//! slot and one RDCSS slot, reused for every operation. A reference word
//! carries the slot index and the sequence stamp of the use it refers to;
//! helpers copy the slot contents and then re-check the stamp, discarding the
//! copy if the slot moved on in the meantime.
//!
//! Every atomic access is `SeqCst`.

mod descriptor;
mod word;

use std::cell::Cell;
use std::marker::PhantomData;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, AtomicUsize, Ordering::*};

use crossbeam_utils::CachePadded;

pub use descriptor::{KcasDescriptor, KcasEntry, MAX_ENTRIES};
pub use word::{Tag, TaggedWord, MAX_PAYLOAD, MAX_THREADS};

pub(crate) use word::DescRef;
use word::SEQ_MASK;

use crate::error::KcasError;

const UNDECIDED: u64 = 0;
const SUCCEEDED: u64 = 1;
const FAILED: u64 = 2;

#[inline]
fn pack_state(seq: u64, status: u64) -> u64 {
    (seq << 2) | status
}

#[inline]
fn state_seq(state: u64) -> u64 {
    state >> 2
}

#[inline]
fn state_status(state: u64) -> u64 {
    state & 0b11
}

/// Deliberate defects used to check that the verification suites notice
/// broken atomicity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PlantedFault {
    None = 0,
    /// A successful operation writes back the expected value instead of the
    /// new one for its last entry.
    DropLastWrite = 1,
}

struct KcasSlot {
    state: AtomicU64,
    len: AtomicUsize,
    locations: Box<[AtomicUsize]>,
    expected: Box<[AtomicU64]>,
    new: Box<[AtomicU64]>,
}

struct RdcssSlot {
    seq: AtomicU64,
    location: AtomicUsize,
    expected: AtomicU64,
    kcas_ref: AtomicU64,
}

struct ThreadSlot {
    claimed: AtomicBool,
    helps: AtomicU64,
    kcas: CachePadded<KcasSlot>,
    rdcss: CachePadded<RdcssSlot>,
}

impl ThreadSlot {
    fn new() -> Self {
        ThreadSlot {
            claimed: AtomicBool::new(false),
            helps: AtomicU64::new(0),
            kcas: CachePadded::new(KcasSlot {
                state: AtomicU64::new(pack_state(0, FAILED)),
                len: AtomicUsize::new(0),
                locations: (0..MAX_ENTRIES).map(|_| AtomicUsize::new(0)).collect(),
                expected: (0..MAX_ENTRIES).map(|_| AtomicU64::new(0)).collect(),
                new: (0..MAX_ENTRIES).map(|_| AtomicU64::new(0)).collect(),
            }),
            rdcss: CachePadded::new(RdcssSlot {
                seq: AtomicU64::new(0),
                location: AtomicUsize::new(0),
                expected: AtomicU64::new(0),
                kcas_ref: AtomicU64::new(0),
            }),
        }
    }
}

/// A fixed arena of K-CAS managed words plus the per-thread descriptor pool.
pub struct Kcas {
    words: Box<[AtomicU64]>,
    slots: Box<[ThreadSlot]>,
    fault: AtomicU8,
}

impl Kcas {
    /// Creates `len` zeroed words and room for `max_threads` concurrent handles.
    pub fn new(len: usize, max_threads: usize) -> Self {
        assert!(
            (1..=MAX_THREADS).contains(&max_threads),
            "max_threads must be in 1..={MAX_THREADS}"
        );
        Kcas {
            words: (0..len).map(|_| AtomicU64::new(0)).collect(),
            slots: (0..max_threads).map(|_| ThreadSlot::new()).collect(),
            fault: AtomicU8::new(PlantedFault::None as u8),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn max_threads(&self) -> usize {
        self.slots.len()
    }

    /// Claims a descriptor slot for the calling thread.
    pub fn register(&self) -> Result<KcasHandle<'_>, KcasError> {
        for (i, slot) in self.slots.iter().enumerate() {
            if slot
                .claimed
                .compare_exchange(false, true, SeqCst, SeqCst)
                .is_ok()
            {
                return Ok(KcasHandle {
                    kcas: self,
                    slot: i,
                    _not_sync: PhantomData,
                });
            }
        }
        Err(KcasError::NoFreeSlot {
            max: self.slots.len(),
        })
    }

    /// Reads a word without helping. Only meaningful when quiescent.
    pub fn load_raw(&self, loc: usize) -> TaggedWord {
        TaggedWord::from_raw_unchecked(self.words[loc].load(SeqCst))
    }

    #[cfg(test)]
    pub(crate) fn store_raw(&self, loc: usize, w: TaggedWord) {
        self.words[loc].store(w.raw(), SeqCst);
    }

    /// Total number of times any thread helped a foreign operation.
    pub fn help_count(&self) -> u64 {
        self.slots.iter().map(|s| s.helps.load(Relaxed)).sum()
    }

    pub fn plant_fault(&self, fault: PlantedFault) {
        self.fault.store(fault as u8, SeqCst);
    }

    fn fault(&self) -> PlantedFault {
        match self.fault.load(Relaxed) {
            1 => PlantedFault::DropLastWrite,
            _ => PlantedFault::None,
        }
    }

    #[inline]
    fn load(&self, loc: usize) -> TaggedWord {
        TaggedWord::from_raw_unchecked(self.words[loc].load(SeqCst))
    }

    #[inline]
    fn cas(&self, loc: usize, current: TaggedWord, new: TaggedWord) -> Result<(), TaggedWord> {
        self.words[loc]
            .compare_exchange(current.raw(), new.raw(), SeqCst, SeqCst)
            .map(drop)
            .map_err(TaggedWord::from_raw_unchecked)
    }

    fn read_word(&self, me: usize, loc: usize) -> TaggedWord {
        loop {
            let w = self.load(loc);
            if w.is_value() {
                return w;
            }
            self.help(me, w);
        }
    }

    fn write_word(&self, me: usize, loc: usize, v: TaggedWord) {
        loop {
            let cur = self.load(loc);
            if !cur.is_value() {
                self.help(me, cur);
                continue;
            }
            if self.cas(loc, cur, v).is_ok() {
                return;
            }
        }
    }

    fn help(&self, me: usize, w: TaggedWord) {
        match w.tag() {
            Tag::KcasRef => self.help_kcas(me, w),
            Tag::RdcssRef => self.complete_rdcss(w),
            Tag::Value => {}
        }
    }

    fn run_owned(&self, me: usize, desc: &mut KcasDescriptor) -> Result<bool, KcasError> {
        desc.prepare(self.words.len())?;
        if desc.is_empty() {
            return Ok(true);
        }
        let r = self.publish(me, desc.entries());
        Ok(self.run(me, r, desc.entries()))
    }

    fn publish(&self, me: usize, entries: &[KcasEntry]) -> DescRef {
        let slot = &self.slots[me].kcas;
        let seq = (state_seq(slot.state.load(SeqCst)) + 1) & SEQ_MASK;
        // Bumping the stamp first invalidates any helper still copying the
        // previous contents.
        slot.state.store(pack_state(seq, UNDECIDED), SeqCst);
        slot.len.store(entries.len(), SeqCst);
        for (i, e) in entries.iter().enumerate() {
            slot.locations[i].store(e.location, SeqCst);
            slot.expected[i].store(e.expected.raw(), SeqCst);
            slot.new[i].store(e.new.raw(), SeqCst);
        }
        DescRef { slot: me, seq }
    }

    fn snapshot(&self, r: DescRef) -> Option<Vec<KcasEntry>> {
        let slot = &self.slots[r.slot].kcas;
        if state_seq(slot.state.load(SeqCst)) != r.seq {
            return None;
        }
        let len = slot.len.load(SeqCst).min(MAX_ENTRIES);
        let snap: Vec<KcasEntry> = (0..len)
            .map(|i| KcasEntry {
                location: slot.locations[i].load(SeqCst),
                expected: TaggedWord::from_raw_unchecked(slot.expected[i].load(SeqCst)),
                new: TaggedWord::from_raw_unchecked(slot.new[i].load(SeqCst)),
            })
            .collect();
        if state_seq(slot.state.load(SeqCst)) != r.seq {
            return None;
        }
        Some(snap)
    }

    fn help_kcas(&self, me: usize, w: TaggedWord) {
        self.slots[me].helps.fetch_add(1, Relaxed);
        let r = w.desc_ref();
        if let Some(snap) = self.snapshot(r) {
            self.run(me, r, &snap);
        }
    }

    /// Drives the operation `r` to completion. `entries` is either the
    /// owner's own list or a validated copy of the slot.
    fn run(&self, me: usize, r: DescRef, entries: &[KcasEntry]) -> bool {
        let slot = &self.slots[r.slot].kcas;
        let kref = TaggedWord::descriptor(Tag::KcasRef, r);
        let undecided = pack_state(r.seq, UNDECIDED);

        if slot.state.load(SeqCst) == undecided {
            let mut outcome = SUCCEEDED;
            'entries: for e in entries {
                loop {
                    let seen = self.rdcss(me, e.location, e.expected, kref);
                    if seen == kref || seen == e.expected {
                        break;
                    }
                    if seen.tag() == Tag::KcasRef {
                        self.help_kcas(me, seen);
                        continue;
                    }
                    outcome = FAILED;
                    break 'entries;
                }
            }
            let _ = slot
                .state
                .compare_exchange(undecided, pack_state(r.seq, outcome), SeqCst, SeqCst);
        }

        let state = slot.state.load(SeqCst);
        if state_seq(state) != r.seq {
            // Finished and reused: the owner already cleaned every cell.
            debug_assert_ne!(r.slot, me, "owner observed its own slot being reused");
            return false;
        }
        debug_assert_ne!(state_status(state), UNDECIDED);
        let succeeded = state_status(state) == SUCCEEDED;
        let drop_last = succeeded && self.fault() == PlantedFault::DropLastWrite;
        let last = entries.len().saturating_sub(1);
        for (i, e) in entries.iter().enumerate() {
            let target = if succeeded && !(drop_last && i == last) {
                e.new
            } else {
                e.expected
            };
            self.release(e.location, kref, target);
        }
        succeeded
    }

    /// Replaces `kref` at `loc` with `target`. An RDCSS still parked on the
    /// cell may yet swing it to `kref`, so those are completed first.
    fn release(&self, loc: usize, kref: TaggedWord, target: TaggedWord) {
        loop {
            let cur = self.load(loc);
            if cur == kref {
                if self.cas(loc, cur, target).is_ok() {
                    return;
                }
            } else if cur.tag() == Tag::RdcssRef {
                self.complete_rdcss(cur);
            } else {
                return;
            }
        }
    }

    /// Installs `kref` at `loc` iff the cell holds `expected` and the
    /// operation behind `kref` is still undecided. Returns the value seen.
    fn rdcss(&self, me: usize, loc: usize, expected: TaggedWord, kref: TaggedWord) -> TaggedWord {
        let slot = &self.slots[me].rdcss;
        let seq = (slot.seq.load(SeqCst) + 1) & SEQ_MASK;
        slot.seq.store(seq, SeqCst);
        slot.location.store(loc, SeqCst);
        slot.expected.store(expected.raw(), SeqCst);
        slot.kcas_ref.store(kref.raw(), SeqCst);
        let mine = TaggedWord::descriptor(Tag::RdcssRef, DescRef { slot: me, seq });
        loop {
            match self.cas(loc, expected, mine) {
                Ok(()) => {
                    self.finish_rdcss(mine, loc, expected, kref);
                    return expected;
                }
                Err(cur) if cur.tag() == Tag::RdcssRef => self.complete_rdcss(cur),
                Err(cur) => return cur,
            }
        }
    }

    fn complete_rdcss(&self, w: TaggedWord) {
        let r = w.desc_ref();
        let slot = &self.slots[r.slot].rdcss;
        if slot.seq.load(SeqCst) != r.seq {
            return;
        }
        let loc = slot.location.load(SeqCst);
        let expected = TaggedWord::from_raw_unchecked(slot.expected.load(SeqCst));
        let kref = TaggedWord::from_raw_unchecked(slot.kcas_ref.load(SeqCst));
        if slot.seq.load(SeqCst) != r.seq {
            return;
        }
        self.finish_rdcss(w, loc, expected, kref);
    }

    fn finish_rdcss(&self, w: TaggedWord, loc: usize, expected: TaggedWord, kref: TaggedWord) {
        let kr = kref.desc_ref();
        let live = self.slots[kr.slot].kcas.state.load(SeqCst) == pack_state(kr.seq, UNDECIDED);
        let _ = self.cas(loc, w, if live { kref } else { expected });
    }
}

/// A registered thread's view of a [`Kcas`] arena.
///
/// Every operation, reads included, may have to help a foreign operation,
/// which needs the caller's own descriptor slot; hence all access goes
/// through a handle. Handles are `Send` but not `Sync`.
pub struct KcasHandle<'a> {
    kcas: &'a Kcas,
    slot: usize,
    _not_sync: PhantomData<Cell<()>>,
}

impl<'a> KcasHandle<'a> {
    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn arena(&self) -> &'a Kcas {
        self.kcas
    }

    /// Reads a plain value, helping any operation parked on the cell.
    pub fn read(&self, loc: usize) -> TaggedWord {
        self.kcas.read_word(self.slot, loc)
    }

    /// Stores a plain value, helping any operation parked on the cell first.
    pub fn write(&self, loc: usize, v: TaggedWord) -> Result<(), KcasError> {
        if !v.is_value() {
            return Err(KcasError::NotAValue(v));
        }
        if loc >= self.kcas.len() {
            return Err(KcasError::LocationOutOfBounds {
                loc,
                len: self.kcas.len(),
            });
        }
        self.kcas.write_word(self.slot, loc, v);
        Ok(())
    }

    /// Applies every entry of `desc` atomically, or none of them.
    ///
    /// The entries are sorted by location in place. Returns `Ok(false)` when
    /// some location did not hold its expected value.
    pub fn kcas(&self, desc: &mut KcasDescriptor) -> Result<bool, KcasError> {
        self.kcas.run_owned(self.slot, desc)
    }

    #[cfg(test)]
    pub(crate) fn help(&self, w: TaggedWord) {
        self.kcas.help(self.slot, w)
    }

    /// Publishes `desc` into this handle's slot without installing anything.
    #[cfg(test)]
    pub(crate) fn publish_only(&self, desc: &mut KcasDescriptor) -> TaggedWord {
        desc.prepare(self.kcas.len()).unwrap();
        let r = self.kcas.publish(self.slot, desc.entries());
        TaggedWord::descriptor(Tag::KcasRef, r)
    }

    #[cfg(test)]
    pub(crate) fn decide(&self, kref: TaggedWord, succeeded: bool) {
        let r = kref.desc_ref();
        let status = if succeeded { SUCCEEDED } else { FAILED };
        self.kcas.slots[r.slot]
            .kcas
            .state
            .store(pack_state(r.seq, status), SeqCst);
    }
}

impl Drop for KcasHandle<'_> {
    fn drop(&mut self) {
        self.kcas.slots[self.slot].claimed.store(false, SeqCst);
    }
}

#[cfg(test)]
mod tests;
