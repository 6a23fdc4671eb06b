#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rhkcas_core::hash::keys_with_home;
use rhkcas_core::{RobinHoodTable, SerialTable, TableConfig, TableHandle};

pub const CAPACITY_LOG2: u32 = 4;
pub const MASK: usize = (1 << CAPACITY_LOG2) - 1;
/// First bucket of every scripted run; keeps the runs inside one shard.
pub const BASE: usize = 3;

pub type Outcome = Result<(), String>;
pub type Replay = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Distinct keys, the i-th homed at `BASE + homes[i]`.
pub fn keys_homed(homes: &[usize]) -> Vec<u64> {
    let mut used = Vec::new();
    for &h in homes {
        let k = keys_with_home(BASE + h, MASK, 1)
            .find(|k| !used.contains(k))
            .unwrap();
        used.push(k);
    }
    used
}

pub fn table() -> RobinHoodTable {
    RobinHoodTable::new(TableConfig {
        capacity_log2: CAPACITY_LOG2,
        shard_log2: 3,
        max_threads: 2,
    })
    .unwrap()
}

/// The table's cells as plain keys, 0 for Nil.
pub fn table_cells(t: &RobinHoodTable) -> Vec<u64> {
    t.snapshot()
        .cells
        .iter()
        .map(|w| w.as_value().expect("quiescent cell holds a value"))
        .collect()
}

/// `run` laid out from `BASE`, Nil elsewhere.
pub fn layout(run: &[u64]) -> Vec<u64> {
    let mut cells = vec![0; 1 << CAPACITY_LOG2];
    cells[BASE..BASE + run.len()].copy_from_slice(run);
    cells
}

fn dfbs(o: &SerialTable, len: usize) -> Vec<Option<usize>> {
    (BASE..BASE + len).map(|i| o.dfb_at(i).map(|d| d.0)).collect()
}

/// Builds `[X0, Y1, Z1, W1, Nil]` in both implementations by inserting in
/// order.
fn four_entry_run() -> Result<(Vec<u64>, SerialTable, RobinHoodTable), String> {
    let keys = keys_homed(&[0, 0, 1, 2]);
    let mut o = SerialTable::new(CAPACITY_LOG2);
    let t = table();
    {
        let mut h = t.handle().unwrap();
        for &k in &keys {
            ensure!(o.seq_add(k).unwrap(), "oracle setup add {k}");
            ensure!(h.add(k).unwrap(), "table setup add {k}");
        }
    }
    ensure!(o.cells() == layout(&keys), "oracle setup layout {:?}", o.cells());
    ensure!(table_cells(&t) == layout(&keys), "table setup layout");
    ensure!(
        dfbs(&o, 5) == [Some(0), Some(1), Some(1), Some(1), None],
        "setup DFBs {:?}",
        dfbs(&o, 5)
    );
    Ok((keys, o, t))
}

/// Inserting V homed with X into `[X0, Y1, Z1, W1, Nil]` evicts Z, which
/// evicts W into the trailing Nil.
pub fn insertion_replay() -> Outcome {
    let (keys, mut o, t) = four_entry_run()?;
    let (x, y, z, w) = (keys[0], keys[1], keys[2], keys[3]);
    let v = keys_with_home(BASE, MASK, 1).find(|k| !keys.contains(k)).unwrap();
    let expected = layout(&[x, y, v, z, w]);

    ensure!(o.seq_add(v).unwrap(), "oracle add V returned false");
    ensure!(o.cells() == expected, "oracle layout {:?}", o.cells());
    ensure!(
        dfbs(&o, 5) == [Some(0), Some(1), Some(2), Some(2), Some(2)],
        "oracle DFBs {:?}",
        dfbs(&o, 5)
    );

    let mut h = t.handle().unwrap();
    let before = t.snapshot();
    ensure!(h.add(v).unwrap(), "table add V returned false");
    ensure!(table_cells(&t) == expected, "table layout {:?}", table_cells(&t));
    let commit = h.last_commit().to_vec();
    let cap = t.capacity();
    let cell_writes: Vec<_> = commit
        .iter()
        .filter(|e| e.location < cap && e.expected != e.new)
        .map(|e| (e.location, e.expected.as_value().unwrap(), e.new.as_value().unwrap()))
        .collect();
    ensure!(
        cell_writes == [(BASE + 2, z, v), (BASE + 3, w, z), (BASE + 4, 0, w)],
        "cell entries {cell_writes:?}"
    );
    let bumps: Vec<_> = commit.iter().filter(|e| e.location >= cap && e.expected != e.new).collect();
    ensure!(bumps.len() == 1, "expected one shard increment, got {bumps:?}");
    let shard = bumps[0].location - cap;
    let old = before.timestamps[shard].as_value().unwrap();
    ensure!(bumps[0].new.as_value() == Some(old + 1), "shard increment {:?}", bumps[0]);
    ensure!(!h.add(v).unwrap(), "second add of V returned true");
    ensure!(table_cells(&t) == expected, "second add changed the table");
    Ok(())
}

/// Searching for an absent U homed with X stops at the first entry whose
/// DFB is below the distance walked.
pub fn search_replay() -> Outcome {
    // X0, V1, Z2 share a home; W is homed one cell before Z, so it sits at
    // distance 1 right after Z.
    let keys = keys_homed(&[0, 0, 0, 2]);
    let u = keys_with_home(BASE, MASK, 1).find(|k| !keys.contains(k)).unwrap();
    let mut o = SerialTable::new(CAPACITY_LOG2);
    let t = table();
    let mut h = t.handle().unwrap();
    for &k in &keys {
        o.seq_add(k).unwrap();
        h.add(k).unwrap();
    }
    ensure!(o.cells() == layout(&keys), "oracle layout {:?}", o.cells());
    ensure!(table_cells(&t) == layout(&keys), "table layout");
    ensure!(
        dfbs(&o, 5) == [Some(0), Some(1), Some(2), Some(1), None],
        "DFBs {:?}",
        dfbs(&o, 5)
    );

    ensure!(o.probe(u) == (None, 4), "oracle probe {:?}", o.probe(u));
    ensure!(!o.seq_contains(u).unwrap(), "oracle finds U");
    ensure!(!h.contains(u).unwrap(), "table finds U");
    for &k in &keys {
        ensure!(o.seq_contains(k).unwrap() && h.contains(k).unwrap(), "resident {k} not found");
    }
    let fresh = table();
    let mut fh = fresh.handle().unwrap();
    ensure!(!fh.contains(u).unwrap(), "empty table finds U");
    ensure!(SerialTable::new(CAPACITY_LOG2).probe(u) == (None, 1), "empty probe is one cell");
    Ok(())
}

/// Removing Y from `[X0, Y1, Z1, W1, Nil]` shifts Z and W back to their
/// home buckets and leaves Nil behind them.
pub fn deletion_replay() -> Outcome {
    let (keys, mut o, t) = four_entry_run()?;
    let (x, y, z, w) = (keys[0], keys[1], keys[2], keys[3]);
    let expected = layout(&[x, z, w]);

    ensure!(o.seq_remove(y).unwrap(), "oracle remove Y returned false");
    ensure!(o.cells() == expected, "oracle layout {:?}", o.cells());
    ensure!(
        dfbs(&o, 4) == [Some(0), Some(0), Some(0), None],
        "oracle DFBs {:?}",
        dfbs(&o, 4)
    );

    let mut h = t.handle().unwrap();
    ensure!(h.remove(y).unwrap(), "table remove Y returned false");
    ensure!(table_cells(&t) == expected, "table layout {:?}", table_cells(&t));
    let cap = t.capacity();
    let cell_writes: Vec<_> = h
        .last_commit()
        .iter()
        .filter(|e| e.location < cap && e.expected != e.new)
        .map(|e| (e.location, e.expected.as_value().unwrap(), e.new.as_value().unwrap()))
        .collect();
    ensure!(
        cell_writes == [(BASE + 1, y, z), (BASE + 2, z, w), (BASE + 3, w, 0)],
        "cell entries {cell_writes:?}"
    );
    ensure!(!h.remove(y).unwrap() && !o.seq_remove(y).unwrap(), "second remove of Y returned true");
    ensure!(!h.contains(y).unwrap(), "Y still found");
    Ok(())
}

pub fn replays() -> [Replay; 3] {
    [
        ("insertion", insertion_replay),
        ("search", search_replay),
        ("deletion", deletion_replay),
    ]
}

fn apply(o: &mut SerialTable, h: &mut TableHandle<'_>, op: u8, key: u64) -> Result<(bool, bool), String> {
    let r = match op {
        0 => (o.seq_add(key), h.add(key)),
        1 => (o.seq_remove(key), h.remove(key)),
        _ => (o.seq_contains(key), h.contains(key)),
    };
    match r {
        (Ok(a), Ok(b)) => Ok((a, b)),
        (a, b) => Err(format!("op {op} key {key}: oracle {a:?}, table {b:?}")),
    }
}

/// Runs `ops` random operations against both implementations, comparing
/// every return value and the full cell array every `layout_every` ops and
/// at the end. Half the ops are adds, a quarter removes, so the table
/// settles near two thirds of the key space.
pub fn differential(seed: u64, capacity_log2: u32, ops: u64, layout_every: u64) -> Outcome {
    let cap = 1u64 << capacity_log2;
    let key_space = cap - cap / 20;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut o = SerialTable::new(capacity_log2);
    let t = RobinHoodTable::new(TableConfig {
        capacity_log2,
        shard_log2: 3,
        max_threads: 1,
    })
    .unwrap();
    let mut h = t.handle().unwrap();
    for i in 0..ops {
        let op = match rng.random_range(0..4u8) {
            0 | 1 => 0,
            2 => 1,
            _ => 2,
        };
        let key = rng.random_range(1..=key_space);
        let (a, b) = apply(&mut o, &mut h, op, key)?;
        ensure!(a == b, "seed {seed} op #{i} ({op}, {key}): oracle {a}, table {b}");
        if (i + 1) % layout_every == 0 || i + 1 == ops {
            ensure!(table_cells(&t) == o.cells(), "seed {seed}: layouts diverge after op #{i}");
        }
    }
    ensure!(h.stats().retries == 0, "single-threaded run retried");
    Ok(())
}

/// Replays an explicit op list; used by the property test.
pub fn differential_script(capacity_log2: u32, script: &[(u8, u64)]) -> Outcome {
    let mut o = SerialTable::new(capacity_log2);
    let t = RobinHoodTable::new(TableConfig {
        capacity_log2,
        shard_log2: 1,
        max_threads: 1,
    })
    .unwrap();
    let mut h = t.handle().unwrap();
    for (i, &(op, key)) in script.iter().enumerate() {
        let (a, b) = apply(&mut o, &mut h, op, key)?;
        ensure!(a == b, "op #{i} ({op}, {key}): oracle {a}, table {b}");
        ensure!(table_cells(&t) == o.cells(), "layouts diverge after op #{i}");
    }
    Ok(())
}
