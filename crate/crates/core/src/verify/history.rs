//! Per-key linearizability checking of set histories.
//!
//! Keys of a set are independent, so a history is linearizable iff every
//! per-key sub-history is linearizable against a two-state register
//! (absent / present). Each sub-history is checked with a sweep over its
//! events in real-time order that tracks every reachable configuration:
//! the abstract state plus which of the currently pending calls have already
//! taken effect. With at most a few dozen overlapping calls per key this is
//! exact and cheap.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::HistoryError;
use crate::table::OpKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Invoke,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub thread: usize,
    pub op: OpKind,
    pub key: u64,
    pub phase: Phase,
    /// Return value; `None` for invocations.
    pub result: Option<bool>,
    /// Position in a total order consistent with real time.
    pub index: u64,
}

impl HistoryEvent {
    pub fn invoke(thread: usize, op: OpKind, key: u64, index: u64) -> Self {
        HistoryEvent {
            thread,
            op,
            key,
            phase: Phase::Invoke,
            result: None,
            index,
        }
    }

    pub fn response(thread: usize, op: OpKind, key: u64, result: bool, index: u64) -> Self {
        HistoryEvent {
            thread,
            op,
            key,
            phase: Phase::Response,
            result: Some(result),
            index,
        }
    }
}

/// Set of abstract states a key may be in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StateSet {
    pub absent: bool,
    pub present: bool,
}

impl StateSet {
    pub const ABSENT: StateSet = StateSet {
        absent: true,
        present: false,
    };
    pub const PRESENT: StateSet = StateSet {
        absent: false,
        present: true,
    };

    pub fn exactly(present: bool) -> Self {
        if present {
            Self::PRESENT
        } else {
            Self::ABSENT
        }
    }

    pub fn contains(self, present: bool) -> bool {
        if present {
            self.present
        } else {
            self.absent
        }
    }

    pub fn is_empty(self) -> bool {
        !self.absent && !self.present
    }

    fn insert(&mut self, present: bool) {
        if present {
            self.present = true;
        } else {
            self.absent = true;
        }
    }
}

/// One call with its invocation and (if any) response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompletedOp {
    pub thread: usize,
    pub op: OpKind,
    pub key: u64,
    pub invoke: u64,
    pub response: Option<u64>,
    pub result: Option<bool>,
}

/// Sequential set semantics of one call on one key. `None` means the call
/// cannot have returned `result` from `present`.
pub fn apply(op: OpKind, result: Option<bool>, present: bool) -> Option<bool> {
    let (ret, next) = match op {
        OpKind::Add => (!present, true),
        OpKind::Remove => (present, false),
        OpKind::Contains => (present, present),
    };
    match result {
        Some(r) if r != ret => None,
        _ => Some(next),
    }
}

/// Pairs invocations with responses. Calls still pending at the end keep
/// `response == None`.
pub fn pair_events(events: &[HistoryEvent]) -> Result<Vec<CompletedOp>, HistoryError> {
    let mut sorted: Vec<&HistoryEvent> = events.iter().collect();
    sorted.sort_by_key(|e| e.index);
    for pair in sorted.windows(2) {
        if pair[0].index == pair[1].index {
            return Err(HistoryError::DuplicateIndex(pair[0].index));
        }
    }
    let mut ops = Vec::with_capacity(events.len() / 2 + 1);
    let mut pending: BTreeMap<usize, usize> = BTreeMap::new();
    for e in sorted {
        match e.phase {
            Phase::Invoke => {
                if pending.contains_key(&e.thread) {
                    return Err(HistoryError::NestedInvocation {
                        thread: e.thread,
                        index: e.index,
                    });
                }
                pending.insert(e.thread, ops.len());
                ops.push(CompletedOp {
                    thread: e.thread,
                    op: e.op,
                    key: e.key,
                    invoke: e.index,
                    response: None,
                    result: None,
                });
            }
            Phase::Response => {
                let Some(at) = pending.remove(&e.thread) else {
                    return Err(HistoryError::UnmatchedResponse {
                        thread: e.thread,
                        index: e.index,
                    });
                };
                let op = &mut ops[at];
                if op.op != e.op || op.key != e.key {
                    return Err(HistoryError::MismatchedResponse {
                        thread: e.thread,
                        index: e.index,
                    });
                }
                let Some(result) = e.result else {
                    return Err(HistoryError::MissingResult { index: e.index });
                };
                op.response = Some(e.index);
                op.result = Some(result);
            }
        }
    }
    Ok(ops)
}

/// Most calls on one key that may overlap.
pub const MAX_OVERLAP: usize = 64;

/// Checks the calls on one key (all with the same key) starting from any
/// state in `initial`. Returns the possible final states; empty means the
/// sub-history is not linearizable.
pub fn check_key_ops(ops: &[CompletedOp], initial: StateSet) -> Result<StateSet, HistoryError> {
    #[derive(Clone, Copy)]
    enum Ev {
        Invoke(usize),
        Response(usize),
    }
    let mut timeline: Vec<(u64, Ev)> = Vec::with_capacity(ops.len() * 2);
    for (i, op) in ops.iter().enumerate() {
        timeline.push((op.invoke, Ev::Invoke(i)));
        if let Some(r) = op.response {
            timeline.push((r, Ev::Response(i)));
        }
    }
    timeline.sort_by_key(|&(idx, _)| idx);

    let mut slots: Vec<Option<usize>> = vec![None; MAX_OVERLAP];
    let mut slot_of = vec![usize::MAX; ops.len()];
    let mut configs: HashSet<(bool, u64)> = HashSet::new();
    for present in [false, true] {
        if initial.contains(present) {
            configs.insert((present, 0));
        }
    }

    let closure = |configs: &mut HashSet<(bool, u64)>, slots: &[Option<usize>]| {
        let mut work: Vec<(bool, u64)> = configs.iter().copied().collect();
        while let Some((state, mask)) = work.pop() {
            for (s, slot) in slots.iter().enumerate() {
                let Some(op) = *slot else { continue };
                if mask & (1 << s) != 0 {
                    continue;
                }
                if let Some(next) = apply(ops[op].op, ops[op].result, state) {
                    let c = (next, mask | (1 << s));
                    if configs.insert(c) {
                        work.push(c);
                    }
                }
            }
        }
    };

    for (_, ev) in timeline {
        match ev {
            Ev::Invoke(op) => {
                let Some(s) = slots.iter().position(Option::is_none) else {
                    return Err(HistoryError::TooConcurrent {
                        key: ops[op].key,
                        max: MAX_OVERLAP,
                    });
                };
                slots[s] = Some(op);
                slot_of[op] = s;
            }
            Ev::Response(op) => {
                closure(&mut configs, &slots);
                let bit = 1u64 << slot_of[op];
                configs = configs
                    .into_iter()
                    .filter(|&(_, mask)| mask & bit != 0)
                    .map(|(state, mask)| (state, mask & !bit))
                    .collect();
                slots[slot_of[op]] = None;
                if configs.is_empty() {
                    return Ok(StateSet::default());
                }
            }
        }
    }
    closure(&mut configs, &slots);
    let mut finals = StateSet::default();
    for (state, _) in configs {
        finals.insert(state);
    }
    Ok(finals)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyVerdict {
    pub key: u64,
    pub calls: usize,
    pub linearizable: bool,
}

/// Checks every key's sub-history from an initially empty set.
pub fn check_per_key_history(events: &[HistoryEvent]) -> Result<Vec<KeyVerdict>, HistoryError> {
    Ok(check_per_key_history_from(events, |_| StateSet::ABSENT)?
        .into_iter()
        .map(|(v, _)| v)
        .collect())
}

/// Like [`check_per_key_history`], with per-key initial states; also
/// returns each key's possible final states.
pub fn check_per_key_history_from(
    events: &[HistoryEvent],
    initial: impl Fn(u64) -> StateSet,
) -> Result<Vec<(KeyVerdict, StateSet)>, HistoryError> {
    let ops = pair_events(events)?;
    let mut by_key: BTreeMap<u64, Vec<CompletedOp>> = BTreeMap::new();
    for op in ops {
        by_key.entry(op.key).or_default().push(op);
    }
    by_key
        .into_iter()
        .map(|(key, ops)| {
            let finals = check_key_ops(&ops, initial(key))?;
            Ok((
                KeyVerdict {
                    key,
                    calls: ops.len(),
                    linearizable: !finals.is_empty(),
                },
                finals,
            ))
        })
        .collect()
}
