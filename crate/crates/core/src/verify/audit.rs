//! Quiescent invariant audit of a table snapshot.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::hash;
use crate::error::TableError;
use crate::table::{Dfb, RobinHoodTable, TableSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingViolation {
    pub index: usize,
    pub dfb: usize,
    /// DFB of the preceding cell, `None` if it was Nil.
    pub prev_dfb: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MismatchKind {
    /// Stored in a cell but a search from its home bucket misses it.
    Unreachable,
    /// Stored in more than one cell.
    Duplicate,
    /// Expected member not stored.
    Missing,
    /// Stored but not expected.
    Unexpected,
    /// A live lookup disagrees with the audited cells.
    LookupDisagrees,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipMismatch {
    pub key: u64,
    pub kind: MismatchKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub ordering_violations: Vec<OrderingViolation>,
    /// Cells or timestamps still holding a descriptor reference.
    pub orphaned_refs: usize,
    pub membership_mismatches: Vec<MembershipMismatch>,
    /// Member count per DFB.
    pub probe_histogram: Vec<u64>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.ordering_violations.is_empty()
            && self.orphaned_refs == 0
            && self.membership_mismatches.is_empty()
    }

    pub fn members(&self) -> u64 {
        self.probe_histogram.iter().sum()
    }

    pub fn summary(&self) -> String {
        format!(
            "members={} ordering_violations={} orphaned_refs={} membership_mismatches={}",
            self.members(),
            self.ordering_violations.len(),
            self.orphaned_refs,
            self.membership_mismatches.len()
        )
    }
}

/// Search over the raw snapshot using only the ordering invariant, written
/// independently of the table's own lookup.
fn snapshot_contains(snap: &TableSnapshot, key: u64) -> bool {
    let mask = snap.mask();
    let mut i = hash::home_bucket(key, mask);
    for dist in 0..snap.capacity() {
        let w = snap.cells[i];
        if w.is_value() {
            match w.payload() {
                0 => return false,
                k if k == key => return true,
                k if hash::distance(k, i, mask) < dist => return false,
                _ => {}
            }
        }
        i = (i + 1) & mask;
    }
    false
}

/// Checks the quiescent invariants on `snap`: Robin Hood ordering on every
/// run, no leftover descriptor references, and every stored key reachable,
/// stored once, and (if `expected` is given) exactly the expected set.
pub fn audit_quiescent(snap: &TableSnapshot, expected: Option<&BTreeSet<u64>>) -> AuditReport {
    let cap = snap.capacity();
    let mut report = AuditReport {
        probe_histogram: snap.probe_histogram(),
        ..AuditReport::default()
    };

    report.orphaned_refs = snap
        .cells
        .iter()
        .chain(&snap.timestamps)
        .filter(|w| !w.is_value())
        .count();

    for j in 0..cap {
        let Some(Dfb(d)) = snap.dfb_at(j) else { continue };
        let prev = (j + cap - 1) & snap.mask();
        let prev_dfb = snap.dfb_at(prev).map(|Dfb(p)| p);
        let bad = match prev_dfb {
            Some(p) => d > p + 1,
            None => d > 0,
        };
        if bad {
            report.ordering_violations.push(OrderingViolation { index: j, dfb: d, prev_dfb });
        }
    }

    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for (_, k) in snap.entries() {
        *counts.entry(k).or_default() += 1;
    }
    for (&key, &n) in &counts {
        if n > 1 {
            report.membership_mismatches.push(MembershipMismatch { key, kind: MismatchKind::Duplicate });
        }
        if !snapshot_contains(snap, key) {
            report.membership_mismatches.push(MembershipMismatch { key, kind: MismatchKind::Unreachable });
        }
    }
    if let Some(expected) = expected {
        for &key in expected {
            if !counts.contains_key(&key) {
                report.membership_mismatches.push(MembershipMismatch { key, kind: MismatchKind::Missing });
            }
        }
        for &key in counts.keys() {
            if !expected.contains(&key) {
                report.membership_mismatches.push(MembershipMismatch { key, kind: MismatchKind::Unexpected });
            }
        }
    }
    report
}

/// Audits a quiescent live table: the snapshot checks plus a `contains` call
/// for every stored key and for every key in `key_space`, each of which must
/// agree with the audited cells.
pub fn audit_table(
    table: &RobinHoodTable,
    expected: Option<&BTreeSet<u64>>,
    key_space: Option<RangeInclusive<u64>>,
) -> Result<AuditReport, TableError> {
    let snap = table.snapshot();
    let mut report = audit_quiescent(&snap, expected);
    let stored = snap.keys();
    let mut h = table.handle()?;
    let mut check = |key: u64, report: &mut AuditReport| -> Result<(), TableError> {
        if h.contains(key)? != stored.contains(&key) {
            report.membership_mismatches.push(MembershipMismatch { key, kind: MismatchKind::LookupDisagrees });
        }
        Ok(())
    };
    for &key in &stored {
        check(key, &mut report)?;
    }
    if let Some(range) = key_space {
        for key in range.filter(|k| !stored.contains(k)) {
            check(key, &mut report)?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::keys_with_home;
    use crate::kcas::TaggedWord;
    use crate::oracle::SerialTable;
    use crate::table::TableConfig;

    fn replayed(cap_log2: u32, keys: &[u64]) -> SerialTable {
        let mut t = SerialTable::new(cap_log2);
        for &k in keys {
            t.seq_add(k).unwrap();
        }
        t
    }

    #[test]
    fn oracle_replay_passes() {
        let keys: Vec<u64> = (1..=40).map(|k| k * 7919).collect();
        let t = replayed(6, &keys);
        let expected: BTreeSet<u64> = keys.iter().copied().collect();
        let r = audit_quiescent(&t.snapshot(3), Some(&expected));
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.members(), 40);
    }

    #[test]
    fn planted_dfb_jump_is_one_violation() {
        let mask = 15;
        let a = keys_with_home(3, mask, 1).next().unwrap();
        let b = keys_with_home(3, mask, 1).nth(1).unwrap();
        let mut cells = vec![0u64; 16];
        // Three keys homed at 3 fill cells 3..=5 with DFB 0, 1, 2.
        cells[3] = a;
        cells[4] = keys_with_home(3, mask, 1).nth(2).unwrap();
        cells[5] = b;
        let mut snap = TableSnapshot::from_keys(4, 2, &cells);
        let r = audit_quiescent(&snap, None);
        assert!(r.passed(), "{r:?}");
        // Drop the middle entry so b now jumps from a Nil cell.
        snap.cells[4] = TaggedWord::ZERO;
        let r = audit_quiescent(&snap, None);
        assert_eq!(r.ordering_violations.len(), 1);
        assert_eq!(r.ordering_violations[0].index, 5);
        // b is also unreachable: the search stops at the Nil in cell 4.
        assert!(r.membership_mismatches.contains(&MembershipMismatch { key: b, kind: MismatchKind::Unreachable }));
    }

    #[test]
    fn planted_plus_two_jump_after_occupied_cell() {
        let mask = 15;
        let a = keys_with_home(3, mask, 1).next().unwrap();
        let c = keys_with_home(2, mask, 1).next().unwrap();
        let mut cells = vec![0u64; 16];
        cells[3] = a;
        cells[4] = c; // DFB 2 right after a DFB 0 entry.
        let r = audit_quiescent(&TableSnapshot::from_keys(4, 2, &cells), None);
        assert_eq!(
            r.ordering_violations,
            [OrderingViolation { index: 4, dfb: 2, prev_dfb: Some(0) }]
        );
    }

    #[test]
    fn orphaned_refs_duplicates_and_membership_are_reported() {
        let mut t = replayed(4, &[11, 22, 33]);
        let mut snap = t.snapshot(2);
        snap.timestamps[1] = TaggedWord::from_raw(0b101).unwrap();
        let expected: BTreeSet<u64> = [11, 22, 44].into();
        let r = audit_quiescent(&snap, Some(&expected));
        assert_eq!(r.orphaned_refs, 1);
        assert!(r.membership_mismatches.contains(&MembershipMismatch { key: 44, kind: MismatchKind::Missing }));
        assert!(r.membership_mismatches.contains(&MembershipMismatch { key: 33, kind: MismatchKind::Unexpected }));

        t.seq_remove(33).unwrap();
        let mut snap = t.snapshot(2);
        let at = snap.entries().find(|&(_, k)| k == 11).unwrap().0;
        let spare = (0..16).find(|&i| snap.key_at(i).is_none() && i != at).unwrap();
        snap.cells[spare] = TaggedWord::value(11).unwrap();
        let r = audit_quiescent(&snap, None);
        assert!(r.membership_mismatches.contains(&MembershipMismatch { key: 11, kind: MismatchKind::Duplicate }));
    }

    #[test]
    fn live_table_audit_matches_lookups() {
        let table = RobinHoodTable::new(TableConfig { capacity_log2: 6, shard_log2: 3, max_threads: 2 }).unwrap();
        let mut h = table.handle().unwrap();
        for k in 1..=40 {
            h.add(k).unwrap();
        }
        drop(h);
        let expected: BTreeSet<u64> = (1..=40).collect();
        let r = audit_table(&table, Some(&expected), Some(1..=64)).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
