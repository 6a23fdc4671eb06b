/// Distance of an entry from its home bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Dfb(pub usize);

/// A timestamp shard as first observed during the current pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardStamp {
    pub shard: usize,
    pub observed: u64,
    /// Whether this pass relocates an entry inside the shard.
    pub touched: bool,
}

/// Per-pass cursor state of one table operation.
///
/// `timestamps` keeps at most one stamp per shard, in probe order.
#[derive(Debug, Clone, Default)]
pub struct ProbeState {
    pub start_bucket: usize,
    pub cur_dist: usize,
    pub active_key: u64,
    timestamps: Vec<ShardStamp>,
}

impl ProbeState {
    pub fn reset(&mut self, start_bucket: usize, active_key: u64) {
        self.start_bucket = start_bucket;
        self.cur_dist = 0;
        self.active_key = active_key;
        self.timestamps.clear();
    }

    pub fn timestamps(&self) -> &[ShardStamp] {
        &self.timestamps
    }

    pub fn stamp(&self, shard: usize) -> Option<&ShardStamp> {
        // Probes are contiguous, so a repeat is nearly always the last shard.
        self.timestamps.iter().rev().find(|s| s.shard == shard)
    }

    /// Records `observed` for `shard` unless the shard is already known.
    pub fn record(&mut self, shard: usize, observed: u64) {
        if self.stamp(shard).is_none() {
            self.timestamps.push(ShardStamp {
                shard,
                observed,
                touched: false,
            });
        }
    }

    pub fn mark_touched(&mut self, shard: usize, observed: u64) {
        match self.timestamps.iter_mut().rev().find(|s| s.shard == shard) {
            Some(s) => s.touched = true,
            None => self.timestamps.push(ShardStamp {
                shard,
                observed,
                touched: true,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_stamp_per_shard() {
        let mut p = ProbeState::default();
        p.reset(3, 9);
        p.record(0, 4);
        p.record(0, 5);
        p.record(1, 7);
        p.mark_touched(0, 99);
        assert_eq!(
            p.timestamps(),
            [
                ShardStamp { shard: 0, observed: 4, touched: true },
                ShardStamp { shard: 1, observed: 7, touched: false },
            ]
        );
        p.reset(0, 1);
        assert!(p.timestamps().is_empty());
    }
}
