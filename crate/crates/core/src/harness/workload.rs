use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::table::{OpKind, MAX_CAPACITY_LOG2};

/// One benchmark configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub capacity_log2: u32,
    /// Fraction of the table filled before timing starts.
    pub load_factor: f64,
    /// Fraction of calls that are updates, split evenly between add and
    /// remove.
    pub update_ratio: f64,
    pub threads: usize,
    pub duration: Duration,
    pub trials: usize,
    pub seed: u64,
    pub shard_log2: u32,
    pub backoff: bool,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            capacity_log2: 18,
            load_factor: 0.6,
            update_ratio: 0.1,
            threads: 1,
            duration: Duration::from_secs(2),
            trials: 3,
            seed: 1,
            shard_log2: 3,
            backoff: false,
        }
    }
}

impl WorkloadSpec {
    pub fn capacity(&self) -> usize {
        1 << self.capacity_log2
    }

    /// Keys are drawn from `1..=key_space()`, one key per bucket.
    pub fn key_space(&self) -> u64 {
        self.capacity() as u64
    }

    /// Members after prefill.
    pub fn prefill_count(&self) -> usize {
        (self.load_factor * self.capacity() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::InvalidWorkload(msg));
        if !(1..=MAX_CAPACITY_LOG2).contains(&self.capacity_log2) {
            return bad(format!("capacity_log2 {} outside 1..={MAX_CAPACITY_LOG2}", self.capacity_log2));
        }
        if self.shard_log2 > self.capacity_log2 {
            return bad(format!("shard_log2 {} exceeds capacity_log2 {}", self.shard_log2, self.capacity_log2));
        }
        if !(0.0..1.0).contains(&self.load_factor) {
            return bad(format!("load factor {} outside [0, 1)", self.load_factor));
        }
        if !(0.0..=1.0).contains(&self.update_ratio) {
            return bad(format!("update ratio {} outside [0, 1]", self.update_ratio));
        }
        if self.threads == 0 || self.threads > crate::kcas::MAX_THREADS - 1 {
            return bad(format!("thread count {} outside 1..{}", self.threads, crate::kcas::MAX_THREADS));
        }
        if self.duration.is_zero() {
            return bad("duration must be positive".into());
        }
        Ok(())
    }
}

/// Deterministic per-thread call sequence.
///
/// Backed by SplitMix64 (golden-ratio increment 0x9e3779b97f4a7c15, mixing
/// multipliers 0xbf58476d1ce4e5b9 and 0x94d049bb133111eb) seeded with
/// `seed ^ thread`. Each call draws one uniform `f64` for the kind and one
/// key uniform over `1..=key_space`.
#[derive(Debug, Clone)]
pub struct OpStream {
    rng: SplitMix64,
    update_ratio: f64,
    key_space: u64,
}

impl OpStream {
    pub fn new(spec: &WorkloadSpec, thread: usize) -> Self {
        OpStream {
            rng: SplitMix64::seed_from_u64(spec.seed ^ thread as u64),
            update_ratio: spec.update_ratio,
            key_space: spec.key_space(),
        }
    }
}

impl Iterator for OpStream {
    type Item = (OpKind, u64);

    #[inline]
    fn next(&mut self) -> Option<(OpKind, u64)> {
        let r: f64 = self.rng.random();
        let op = if r < self.update_ratio / 2.0 {
            OpKind::Add
        } else if r < self.update_ratio {
            OpKind::Remove
        } else {
            OpKind::Contains
        };
        Some((op, self.rng.random_range(1..=self.key_space)))
    }
}
