use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KcasError {
    #[error("value {0:#x} does not fit in 62 bits")]
    ValueOutOfRange(u64),
    #[error("word {0:#x} carries the reserved tag 0b11")]
    InvalidTag(u64),
    #[error("word {0:?} is not a plain value")]
    NotAValue(crate::kcas::TaggedWord),
    #[error("descriptor is full ({max} entries)")]
    CapacityExceeded { max: usize },
    #[error("location {0} appears twice in one descriptor")]
    DuplicateLocation(usize),
    #[error("location {loc} is outside the {len}-word arena")]
    LocationOutOfBounds { loc: usize, len: usize },
    #[error("all {max} thread slots are in use")]
    NoFreeSlot { max: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("key {0} is outside [1, 2^62)")]
    InvalidKey(u64),
    /// The probe wrapped the whole table or the relocation chain outgrew one
    /// descriptor. The table needs to be resized, which is not supported.
    #[error("table saturated")]
    Saturated,
    #[error("invalid table configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kcas(#[from] KcasError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("thread {thread} responded at event {index} without a pending invocation")]
    UnmatchedResponse { thread: usize, index: u64 },
    #[error("thread {thread} invoked at event {index} while another call was pending")]
    NestedInvocation { thread: usize, index: u64 },
    #[error("response at event {index} does not match the pending invocation of thread {thread}")]
    MismatchedResponse { thread: usize, index: u64 },
    #[error("response at event {index} carries no result")]
    MissingResult { index: u64 },
    #[error("event index {0} appears more than once")]
    DuplicateIndex(u64),
    #[error("key {key} has more than {max} overlapping calls")]
    TooConcurrent { key: u64, max: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("unknown race scenario {0:?}")]
    UnknownScenario(String),
    #[error("unknown verify suite {0:?}")]
    UnknownSuite(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    History(#[from] HistoryError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
