use std::collections::BTreeSet;

use super::probe::Dfb;
use crate::hash;
use crate::kcas::TaggedWord;

/// Raw copy of a table's cells and timestamps, taken while quiescent.
///
/// Words are copied without helping, so a leftover descriptor reference is
/// visible here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSnapshot {
    pub capacity_log2: u32,
    pub shard_log2: u32,
    pub cells: Vec<TaggedWord>,
    pub timestamps: Vec<TaggedWord>,
}

impl TableSnapshot {
    /// Builds a snapshot from plain keys (0 = Nil) with zeroed timestamps.
    pub fn from_keys(capacity_log2: u32, shard_log2: u32, keys: &[u64]) -> Self {
        assert_eq!(keys.len(), 1 << capacity_log2);
        TableSnapshot {
            capacity_log2,
            shard_log2,
            cells: keys
                .iter()
                .map(|&k| TaggedWord::value(k).expect("key out of range"))
                .collect(),
            timestamps: vec![TaggedWord::ZERO; (1 << capacity_log2) >> shard_log2],
        }
    }

    pub fn capacity(&self) -> usize {
        self.cells.len()
    }

    pub fn mask(&self) -> usize {
        self.cells.len() - 1
    }

    /// Plain key at `index`, `None` for Nil or a descriptor reference.
    pub fn key_at(&self, index: usize) -> Option<u64> {
        self.cells[index].as_value().filter(|&k| k != 0)
    }

    pub fn dfb_at(&self, index: usize) -> Option<Dfb> {
        self.key_at(index)
            .map(|k| Dfb(hash::distance(k, index, self.mask())))
    }

    /// `(index, key)` for every occupied cell.
    pub fn entries(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        (0..self.capacity()).filter_map(|i| self.key_at(i).map(|k| (i, k)))
    }

    pub fn len(&self) -> usize {
        self.entries().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keys(&self) -> BTreeSet<u64> {
        self.entries().map(|(_, k)| k).collect()
    }

    pub fn dfb_of(&self, key: u64) -> Option<Dfb> {
        self.entries()
            .find(|&(_, k)| k == key)
            .map(|(i, k)| Dfb(hash::distance(k, i, self.mask())))
    }

    /// Occupancy count per DFB value.
    pub fn probe_histogram(&self) -> Vec<u64> {
        let mut hist = Vec::new();
        for (i, _) in self.entries() {
            let Dfb(d) = self.dfb_at(i).unwrap();
            if hist.len() <= d {
                hist.resize(d + 1, 0);
            }
            hist[d] += 1;
        }
        hist
    }

    /// Mean successful-search probe length (DFB + 1) over all members.
    pub fn mean_probe(&self) -> f64 {
        let hist = self.probe_histogram();
        let n: u64 = hist.iter().sum();
        if n == 0 {
            return 0.0;
        }
        let total: u64 = hist
            .iter()
            .enumerate()
            .map(|(d, &c)| (d as u64 + 1) * c)
            .sum();
        total as f64 / n as f64
    }

    pub fn timestamp_values(&self) -> Vec<Option<u64>> {
        self.timestamps.iter().map(|w| w.as_value()).collect()
    }
}
