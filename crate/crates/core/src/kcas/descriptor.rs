use super::word::TaggedWord;
use crate::error::KcasError;

/// Upper bound on the entries of one multi-word operation.
///
/// Large enough for the relocation chains of a table filled to 0.95 at
/// 2^18 buckets; a table op that would need more reports saturation.
pub const MAX_ENTRIES: usize = 4096;

/// One `(location, expected, new)` triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KcasEntry {
    pub location: usize,
    pub expected: TaggedWord,
    pub new: TaggedWord,
}

/// Caller-side builder for a multi-word compare-and-swap.
///
/// The builder is plain owned data; [`KcasHandle::kcas`](super::KcasHandle::kcas)
/// copies it into the calling thread's shared descriptor slot, so one builder
/// can be cleared and refilled for every operation.
#[derive(Debug, Clone, Default)]
pub struct KcasDescriptor {
    entries: Vec<KcasEntry>,
}

impl KcasDescriptor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a triple. Both words must be plain values.
    pub fn add(
        &mut self,
        location: usize,
        expected: TaggedWord,
        new: TaggedWord,
    ) -> Result<(), KcasError> {
        for w in [expected, new] {
            if !w.is_value() {
                return Err(KcasError::NotAValue(w));
            }
        }
        if self.entries.len() == MAX_ENTRIES {
            return Err(KcasError::CapacityExceeded { max: MAX_ENTRIES });
        }
        self.entries.push(KcasEntry { location, expected, new });
        Ok(())
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[KcasEntry] {
        &self.entries
    }

    pub fn entry_for(&self, location: usize) -> Option<&KcasEntry> {
        self.entries.iter().find(|e| e.location == location)
    }

    /// Sorts by location and rejects duplicates and out-of-range locations.
    pub(crate) fn prepare(&mut self, arena_len: usize) -> Result<(), KcasError> {
        self.entries.sort_unstable_by_key(|e| e.location);
        for pair in self.entries.windows(2) {
            if pair[0].location == pair[1].location {
                return Err(KcasError::DuplicateLocation(pair[0].location));
            }
        }
        if let Some(last) = self.entries.last() {
            if last.location >= arena_len {
                return Err(KcasError::LocationOutOfBounds {
                    loc: last.location,
                    len: arena_len,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: u64) -> TaggedWord {
        TaggedWord::value(x).unwrap()
    }

    #[test]
    fn capacity_is_enforced() {
        let mut d = KcasDescriptor::new();
        for i in 0..MAX_ENTRIES {
            d.add(i, v(0), v(1)).unwrap();
        }
        assert_eq!(
            d.add(MAX_ENTRIES, v(0), v(1)),
            Err(KcasError::CapacityExceeded { max: MAX_ENTRIES })
        );
        assert_eq!(d.len(), MAX_ENTRIES);
    }

    #[test]
    fn prepare_sorts_and_rejects_duplicates() {
        let mut d = KcasDescriptor::new();
        d.add(5, v(0), v(1)).unwrap();
        d.add(2, v(0), v(1)).unwrap();
        d.prepare(8).unwrap();
        let locs: Vec<_> = d.entries().iter().map(|e| e.location).collect();
        assert_eq!(locs, [2, 5]);

        d.add(5, v(1), v(2)).unwrap();
        assert_eq!(d.prepare(8), Err(KcasError::DuplicateLocation(5)));
    }

    #[test]
    fn prepare_checks_bounds() {
        let mut d = KcasDescriptor::new();
        d.add(8, v(0), v(1)).unwrap();
        assert_eq!(
            d.prepare(8),
            Err(KcasError::LocationOutOfBounds { loc: 8, len: 8 })
        );
    }
}
