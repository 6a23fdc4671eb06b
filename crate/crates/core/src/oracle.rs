//! Single-threaded Robin Hood hash set used as the reference for
//! differential testing and for probe-length measurements.
//!
//! Same hash, same Nil, same tie-break as the concurrent table: an entry
//! with an equal DFB keeps its cell and the walker moves on.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::TableError;
use crate::hash;
use crate::kcas::MAX_PAYLOAD;
use crate::table::{Dfb, TableSnapshot, NIL};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerialTable {
    cells: Vec<u64>,
    mask: usize,
    capacity_log2: u32,
    count: usize,
}

fn check_key(key: u64) -> Result<u64, TableError> {
    if key == NIL || key > MAX_PAYLOAD {
        return Err(TableError::InvalidKey(key));
    }
    Ok(key)
}

impl SerialTable {
    pub fn new(capacity_log2: u32) -> Self {
        assert!(capacity_log2 <= crate::table::MAX_CAPACITY_LOG2);
        let capacity = 1usize << capacity_log2;
        SerialTable {
            cells: vec![NIL; capacity],
            mask: capacity - 1,
            capacity_log2,
            count: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.cells.len()
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn cells(&self) -> &[u64] {
        &self.cells
    }

    pub fn snapshot(&self, shard_log2: u32) -> TableSnapshot {
        TableSnapshot::from_keys(self.capacity_log2, shard_log2, &self.cells)
    }

    fn dist(&self, key: u64, index: usize) -> usize {
        hash::distance(key, index, self.mask)
    }

    pub fn dfb_at(&self, index: usize) -> Option<Dfb> {
        let k = self.cells[index];
        (k != NIL).then(|| Dfb(self.dist(k, index)))
    }

    /// Searches for `key`, returning where it sits (if present) and how many
    /// cells were examined.
    pub fn probe(&self, key: u64) -> (Option<usize>, usize) {
        let mut i = hash::home_bucket(key, self.mask);
        for dist in 0..self.capacity() {
            let cur = self.cells[i];
            if cur == NIL {
                return (None, dist + 1);
            }
            if cur == key {
                return (Some(i), dist + 1);
            }
            if self.dist(cur, i) < dist {
                return (None, dist + 1);
            }
            i = (i + 1) & self.mask;
        }
        (None, self.capacity())
    }

    /// Cells an unsuccessful search starting at `bucket` examines: it stops
    /// at the first Nil or at the first entry closer to home than the
    /// search has walked.
    pub fn miss_probes_from(&self, bucket: usize) -> usize {
        let mut i = bucket;
        for dist in 0..self.capacity() {
            let cur = self.cells[i];
            if cur == NIL || self.dist(cur, i) < dist {
                return dist + 1;
            }
            i = (i + 1) & self.mask;
        }
        self.capacity()
    }

    /// Expected unsuccessful-search probe count for a uniformly hashed
    /// absent key, i.e. the average of [`Self::miss_probes_from`] over all
    /// buckets.
    pub fn mean_miss_probes(&self) -> f64 {
        let total: usize = (0..self.capacity()).map(|b| self.miss_probes_from(b)).sum();
        total as f64 / self.capacity() as f64
    }

    pub fn seq_contains(&self, key: u64) -> Result<bool, TableError> {
        let key = check_key(key)?;
        Ok(self.probe(key).0.is_some())
    }

    pub fn seq_add(&mut self, key: u64) -> Result<bool, TableError> {
        let key = check_key(key)?;
        if self.probe(key).0.is_some() {
            return Ok(false);
        }
        if self.count == self.capacity() {
            return Err(TableError::Saturated);
        }
        let mut active = key;
        let mut active_dist = 0;
        let mut i = hash::home_bucket(key, self.mask);
        loop {
            let cur = self.cells[i];
            if cur == NIL {
                self.cells[i] = active;
                self.count += 1;
                return Ok(true);
            }
            let d = self.dist(cur, i);
            if d < active_dist {
                self.cells[i] = active;
                active = cur;
                active_dist = d;
            }
            i = (i + 1) & self.mask;
            active_dist += 1;
        }
    }

    pub fn seq_remove(&mut self, key: u64) -> Result<bool, TableError> {
        let key = check_key(key)?;
        let Some(found) = self.probe(key).0 else {
            return Ok(false);
        };
        let mut j = found;
        loop {
            let next = (j + 1) & self.mask;
            let nxt = self.cells[next];
            if next == found || nxt == NIL || self.dist(nxt, next) == 0 {
                self.cells[j] = NIL;
                break;
            }
            self.cells[j] = nxt;
            j = next;
        }
        self.count -= 1;
        Ok(true)
    }

    /// Indices `j` where the Robin Hood ordering breaks: the entry at `j`
    /// is more than one step further from home than its predecessor, or
    /// sits away from home right after a Nil cell.
    pub fn ordering_violations(&self) -> Vec<usize> {
        (0..self.capacity())
            .filter(|&j| {
                let Some(Dfb(d)) = self.dfb_at(j) else {
                    return false;
                };
                match self.dfb_at((j + self.capacity() - 1) & self.mask) {
                    Some(Dfb(prev)) => d > prev + 1,
                    None => d > 0,
                }
            })
            .collect()
    }
}

/// Probe-length statistics of a randomly filled table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub capacity_log2: u32,
    pub load_factor: f64,
    pub seed: u64,
    pub members: usize,
    pub mean_successful: f64,
    pub mean_unsuccessful: f64,
    pub max_dfb: usize,
}

/// Fills a fresh table to `load_factor` with uniform random keys, then
/// measures the mean probe count of a successful search (over every member)
/// and of an unsuccessful one (over every home bucket).
pub fn probe_stats(capacity_log2: u32, load_factor: f64, seed: u64) -> ProbeStats {
    assert!(
        load_factor > 0.0 && load_factor < 1.0,
        "load factor must be in (0, 1)"
    );
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut table = SerialTable::new(capacity_log2);
    let target = (load_factor * table.capacity() as f64).round() as usize;
    while table.len() < target {
        let key = rng.random_range(1..=MAX_PAYLOAD);
        table.seq_add(key).expect("below capacity");
    }

    let mut successful = 0usize;
    let mut max_dfb = 0;
    for i in 0..table.capacity() {
        if let Some(Dfb(d)) = table.dfb_at(i) {
            successful += d + 1;
            max_dfb = max_dfb.max(d);
        }
    }

    ProbeStats {
        capacity_log2,
        load_factor,
        seed,
        members: table.len(),
        mean_successful: if target == 0 {
            0.0
        } else {
            successful as f64 / table.len() as f64
        },
        mean_unsuccessful: table.mean_miss_probes(),
        max_dfb,
    }
}
