//! Obstruction-free concurrent Robin Hood hash set built on a portable
//! multi-word compare-and-swap, plus the serial reference table, the
//! verification machinery and the benchmark harness that exercise it.

pub mod error;
pub mod harness;
pub mod hash;
pub mod kcas;
pub mod oracle;
pub mod table;
pub mod verify;

pub use error::{HarnessError, HistoryError, KcasError, TableError, VerifyError};
pub use kcas::{Kcas, KcasDescriptor, KcasEntry, KcasHandle, TaggedWord, MAX_ENTRIES};
pub use oracle::SerialTable;
pub use table::{OpKind, RobinHoodTable, TableConfig, TableFault, TableHandle, TableSnapshot};
