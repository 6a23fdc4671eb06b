use std::sync::atomic::Ordering::SeqCst;

use proptest::prelude::*;

use super::*;

fn v(x: u64) -> TaggedWord {
    TaggedWord::value(x).unwrap()
}

fn values(k: &Kcas) -> Vec<TaggedWord> {
    (0..k.len()).map(|i| k.load_raw(i)).collect()
}

fn state_of(k: &Kcas, kref: TaggedWord) -> u64 {
    k.slots[kref.desc_ref().slot].kcas.state.load(SeqCst)
}

/// Sequential model: check every expected value, then write every new one.
fn model_kcas(cells: &mut [u64], ops: &[(usize, u64, u64)]) -> bool {
    if ops.iter().any(|&(l, e, _)| cells[l] != e) {
        return false;
    }
    for &(l, _, n) in ops {
        cells[l] = n;
    }
    true
}

#[test]
fn read_quiescent_value() {
    let k = Kcas::new(4, 2);
    let h = k.register().unwrap();
    h.write(1, v(7)).unwrap();
    assert_eq!(h.read(1), v(7));
}

#[test]
fn last_write_wins() {
    let k = Kcas::new(1, 1);
    let h = k.register().unwrap();
    h.write(0, v(3)).unwrap();
    h.write(0, v(4)).unwrap();
    assert_eq!(h.read(0), v(4));
}

#[test]
fn write_rejects_descriptor_words() {
    let k = Kcas::new(1, 1);
    let h = k.register().unwrap();
    let w = TaggedWord::descriptor(Tag::KcasRef, DescRef { slot: 0, seq: 1 });
    assert_eq!(h.write(0, w), Err(KcasError::NotAValue(w)));
}

#[test]
fn read_helps_decided_operation() {
    let k = Kcas::new(2, 2);
    let owner = k.register().unwrap();
    let reader = k.register().unwrap();
    owner.write(0, v(7)).unwrap();
    owner.write(1, v(1)).unwrap();

    let mut d = KcasDescriptor::new();
    d.add(0, v(7), v(9)).unwrap();
    d.add(1, v(1), v(2)).unwrap();
    let kref = owner.publish_only(&mut d);
    k.store_raw(0, kref);
    k.store_raw(1, kref);
    owner.decide(kref, true);

    // Replay of the helping rules: a decided success releases every
    // installed cell to its new value.
    assert_eq!(reader.read(0), v(9));
    assert_eq!(values(&k), [v(9), v(2)]);
    assert!(k.help_count() >= 1);
}

#[test]
fn read_completes_undecided_operation() {
    let k = Kcas::new(3, 2);
    let owner = k.register().unwrap();
    let reader = k.register().unwrap();
    for (i, x) in [4, 5, 6].into_iter().enumerate() {
        owner.write(i, v(x)).unwrap();
    }
    let mut d = KcasDescriptor::new();
    d.add(0, v(4), v(40)).unwrap();
    d.add(1, v(5), v(50)).unwrap();
    d.add(2, v(6), v(60)).unwrap();
    let kref = owner.publish_only(&mut d);
    // Only the first entry was installed before the owner stalled.
    k.store_raw(0, kref);

    assert_eq!(reader.read(0), v(40));
    assert_eq!(values(&k), [v(40), v(50), v(60)]);
    assert_eq!(state_status(state_of(&k, kref)), SUCCEEDED);
}

#[test]
fn read_fails_undecided_operation_on_mismatch() {
    let k = Kcas::new(2, 2);
    let owner = k.register().unwrap();
    let reader = k.register().unwrap();
    owner.write(0, v(4)).unwrap();
    owner.write(1, v(99)).unwrap();
    let mut d = KcasDescriptor::new();
    d.add(0, v(4), v(40)).unwrap();
    d.add(1, v(5), v(50)).unwrap();
    let kref = owner.publish_only(&mut d);
    k.store_raw(0, kref);

    assert_eq!(reader.read(0), v(4));
    assert_eq!(values(&k), [v(4), v(99)]);
    assert_eq!(state_status(state_of(&k, kref)), FAILED);
}

#[test]
fn write_over_pending_operation_helps_first() {
    let k = Kcas::new(2, 2);
    let owner = k.register().unwrap();
    let writer = k.register().unwrap();
    let mut d = KcasDescriptor::new();
    d.add(0, v(0), v(1)).unwrap();
    d.add(1, v(0), v(1)).unwrap();
    let kref = owner.publish_only(&mut d);
    k.store_raw(1, kref);

    writer.write(1, v(3)).unwrap();
    // The operation was decided (successfully) before the write landed.
    assert_eq!(state_status(state_of(&k, kref)), SUCCEEDED);
    assert_eq!(values(&k), [v(1), v(3)]);
}

#[test]
fn empty_descriptor_succeeds_vacuously() {
    let k = Kcas::new(2, 1);
    let h = k.register().unwrap();
    let mut d = KcasDescriptor::new();
    assert_eq!(h.kcas(&mut d), Ok(true));
    assert_eq!(values(&k), [v(0), v(0)]);
}

#[test]
fn uncontended_success() {
    let k = Kcas::new(2, 1);
    let h = k.register().unwrap();
    let mut d = KcasDescriptor::new();
    d.add(1, v(0), v(8)).unwrap();
    d.add(0, v(0), v(7)).unwrap();
    assert_eq!(h.kcas(&mut d), Ok(true));
    assert_eq!(values(&k), [v(7), v(8)]);
}

#[test]
fn second_mismatch_leaves_first_unchanged() {
    let k = Kcas::new(2, 1);
    let h = k.register().unwrap();
    h.write(1, v(5)).unwrap();
    let mut d = KcasDescriptor::new();
    d.add(0, v(0), v(7)).unwrap();
    d.add(1, v(4), v(8)).unwrap();
    let mut model = [0, 5];
    let expected = model_kcas(&mut model, &[(0, 0, 7), (1, 4, 8)]);
    assert!(!expected);
    assert_eq!(h.kcas(&mut d), Ok(false));
    assert_eq!(values(&k), [v(model[0]), v(model[1])]);
}

#[test]
fn descriptor_is_reusable_and_seq_advances() {
    let k = Kcas::new(1, 1);
    let h = k.register().unwrap();
    let mut d = KcasDescriptor::new();
    let mut last_seq = state_seq(k.slots[0].kcas.state.load(SeqCst));
    for i in 0..10 {
        d.clear();
        d.add(0, v(i), v(i + 1)).unwrap();
        assert_eq!(h.kcas(&mut d), Ok(true));
        let seq = state_seq(k.slots[0].kcas.state.load(SeqCst));
        assert!(seq > last_seq);
        last_seq = seq;
    }
    assert_eq!(h.read(0), v(10));
}

#[test]
fn help_on_decided_operation_is_idempotent() {
    let k = Kcas::new(2, 2);
    let owner = k.register().unwrap();
    let helper = k.register().unwrap();
    let mut d = KcasDescriptor::new();
    d.add(0, v(0), v(1)).unwrap();
    d.add(1, v(0), v(1)).unwrap();
    let kref = owner.publish_only(&mut d);
    k.store_raw(0, kref);
    k.store_raw(1, kref);
    owner.decide(kref, true);
    helper.help(kref);
    let after_first = values(&k);
    // Someone rewrites a cell; a late help must not touch it.
    owner.write(0, v(42)).unwrap();
    helper.help(kref);
    helper.help(kref);
    assert_eq!(after_first, [v(1), v(1)]);
    assert_eq!(values(&k), [v(42), v(1)]);
}

#[test]
fn many_helpers_match_single_helper_replay() {
    let setup = |k: &Kcas, owner: &KcasHandle<'_>| {
        for i in 0..4 {
            owner.write(i, v(i as u64 + 10)).unwrap();
        }
        let mut d = KcasDescriptor::new();
        for i in 0..4 {
            d.add(i, v(i as u64 + 10), v(i as u64 + 100)).unwrap();
        }
        let kref = owner.publish_only(&mut d);
        k.store_raw(0, kref);
        k.store_raw(2, kref);
        kref
    };

    let single = Kcas::new(4, 2);
    let owner = single.register().unwrap();
    let kref = setup(&single, &owner);
    single.register().unwrap().help(kref);
    let reference = values(&single);

    let multi = Kcas::new(4, 6);
    let owner = multi.register().unwrap();
    let kref = setup(&multi, &owner);
    let helpers: Vec<_> = (0..5).map(|_| multi.register().unwrap()).collect();
    let mut transitions = 0;
    for h in &helpers {
        let before = state_status(state_of(&multi, kref));
        h.help(kref);
        if before == UNDECIDED && state_status(state_of(&multi, kref)) != UNDECIDED {
            transitions += 1;
        }
    }
    assert_eq!(transitions, 1);
    assert_eq!(values(&multi), reference);
    assert_eq!(reference, [v(100), v(101), v(102), v(103)]);
}

#[test]
fn help_with_stale_seq_is_noop() {
    let k = Kcas::new(2, 2);
    let owner = k.register().unwrap();
    let helper = k.register().unwrap();
    let mut d = KcasDescriptor::new();
    d.add(0, v(0), v(1)).unwrap();
    let stale = owner.publish_only(&mut d);
    d.clear();
    d.add(1, v(0), v(5)).unwrap();
    let _fresh = owner.publish_only(&mut d);
    helper.help(stale);
    assert_eq!(values(&k), [v(0), v(0)]);
}

#[test]
fn registration_is_bounded_and_slots_recycle() {
    let k = Kcas::new(1, 2);
    let a = k.register().unwrap();
    let b = k.register().unwrap();
    assert_eq!(k.register().err(), Some(KcasError::NoFreeSlot { max: 2 }));
    let freed = a.slot();
    drop(a);
    let c = k.register().unwrap();
    assert_eq!(c.slot(), freed);
    drop(b);
}

#[test]
fn rejects_duplicate_and_out_of_range_locations() {
    let k = Kcas::new(2, 1);
    let h = k.register().unwrap();
    let mut d = KcasDescriptor::new();
    d.add(0, v(0), v(1)).unwrap();
    d.add(0, v(0), v(2)).unwrap();
    assert_eq!(h.kcas(&mut d), Err(KcasError::DuplicateLocation(0)));
    d.clear();
    d.add(2, v(0), v(1)).unwrap();
    assert!(matches!(
        h.kcas(&mut d),
        Err(KcasError::LocationOutOfBounds { loc: 2, len: 2 })
    ));
    assert_eq!(values(&k), [v(0), v(0)]);
}

#[test]
fn planted_fault_breaks_atomicity() {
    let k = Kcas::new(2, 1);
    k.plant_fault(PlantedFault::DropLastWrite);
    let h = k.register().unwrap();
    let mut d = KcasDescriptor::new();
    d.add(0, v(0), v(1)).unwrap();
    d.add(1, v(0), v(1)).unwrap();
    assert_eq!(h.kcas(&mut d), Ok(true));
    assert_eq!(values(&k), [v(1), v(0)]);
}

#[test]
fn concurrent_counters_reconcile() {
    const THREADS: usize = 4;
    const ROUNDS: u64 = 2_000;
    let k = Kcas::new(3, THREADS);
    std::thread::scope(|s| {
        for _ in 0..THREADS {
            s.spawn(|| {
                let h = k.register().unwrap();
                let mut d = KcasDescriptor::new();
                let mut done = 0;
                while done < ROUNDS {
                    d.clear();
                    for loc in 0..3 {
                        let cur = h.read(loc).payload();
                        d.add(loc, v(cur), v(cur + 1)).unwrap();
                    }
                    if h.kcas(&mut d).unwrap() {
                        done += 1;
                    }
                }
            });
        }
    });
    assert_eq!(values(&k), vec![v(THREADS as u64 * ROUNDS); 3]);
}

proptest! {
    #[test]
    fn sequential_kcas_matches_model(
        init in prop::collection::vec(0u64..3, 4),
        ops in prop::collection::vec(
            prop::collection::btree_map(0usize..4, (0u64..3, 0u64..3), 0..4),
            1..8,
        ),
    ) {
        let k = Kcas::new(4, 1);
        let h = k.register().unwrap();
        for (i, x) in init.iter().enumerate() {
            h.write(i, v(*x)).unwrap();
        }
        let mut model = init.clone();
        let mut d = KcasDescriptor::new();
        for op in ops {
            let triples: Vec<_> = op.iter().map(|(&l, &(e, n))| (l, e, n)).collect();
            d.clear();
            for &(l, e, n) in &triples {
                d.add(l, v(e), v(n)).unwrap();
            }
            let expected = model_kcas(&mut model, &triples);
            prop_assert_eq!(h.kcas(&mut d).unwrap(), expected);
            let got: Vec<_> = (0..4).map(|i| h.read(i).payload()).collect();
            prop_assert_eq!(&got, &model);
        }
    }
}
