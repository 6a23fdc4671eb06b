//! Test-only pause points used to force specific interleavings.
//!
//! Hooks only fire when [`PAUSE_POINTS_ENABLED`] is true, i.e. in builds with
//! debug assertions or the `pause-points` feature; elsewhere the calls fold
//! away.

use serde::{Deserialize, Serialize};

pub const PAUSE_POINTS_ENABLED: bool = cfg!(any(debug_assertions, feature = "pause-points"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Add,
    Remove,
    Contains,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PausePoint {
    /// A cell was just read during the probe.
    AfterCellRead { op: OpKind, index: usize },
    /// The descriptor is complete and about to be committed.
    BeforeCommit { op: OpKind },
}

pub trait PauseHook: Send + Sync {
    /// Called on the operating thread; `slot` is its descriptor slot.
    fn pause(&self, slot: usize, point: PausePoint);
}
