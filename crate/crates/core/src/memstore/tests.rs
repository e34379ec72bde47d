use std::collections::VecDeque;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::SnapshotError;
use crate::numcore::Tensor;

fn schema() -> Vec<(String, Vec<usize>)> {
    vec![("w".into(), vec![2]), ("b".into(), vec![1])]
}

fn vals(v: f64) -> TensorSet {
    TensorSet::from_entries(vec![("w".into(), Tensor::vector(vec![v, -v])), ("b".into(), Tensor::vector(vec![v]))]).unwrap()
}

fn store(cap: usize, kind: ControllerKind) -> MemoryStore {
    MemoryStore::new(cap, 2, schema(), kind).unwrap()
}

#[test]
fn retrieve_nearest_two() {
    let mut s = store(3, ControllerKind::Fifo);
    for k in [[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]] {
        s.write(k.to_vec(), vals(0.0)).unwrap();
    }
    let hits: Vec<usize> = s.retrieve(&[0.0, 0.0], 2).unwrap().into_iter().map(|(i, _)| i).collect();
    assert_eq!(hits, vec![0, 2]);
}

#[test]
fn retrieve_more_than_stored_and_ties() {
    let mut s = store(4, ControllerKind::Lru);
    assert!(s.retrieve(&[0.0, 0.0], 3).unwrap().is_empty());
    s.write(vec![1.0, 0.0], vals(1.0)).unwrap();
    s.write(vec![-1.0, 0.0], vals(2.0)).unwrap();
    let hits: Vec<usize> = s.retrieve(&[0.0, 0.0], 10).unwrap().into_iter().map(|(i, _)| i).collect();
    assert_eq!(hits, vec![0, 1]);
    assert!(s.retrieve(&[0.0, 0.0], 0).is_err());
    assert!(s.retrieve(&[0.0], 1).is_err());
}

#[test]
fn first_write_appends_at_zero() {
    let mut s = store(2, ControllerKind::Clock);
    assert_eq!(s.write(vec![0.0, 0.0], vals(1.0)).unwrap(), WriteOutcome::Appended(0));
}

#[test]
fn fifo_replaces_oldest() {
    let mut s = store(2, ControllerKind::Fifo);
    s.write(vec![0.0, 0.0], vals(1.0)).unwrap();
    s.write(vec![1.0, 0.0], vals(2.0)).unwrap();
    s.retrieve(&[0.0, 0.0], 1).unwrap();
    assert_eq!(s.write(vec![2.0, 0.0], vals(3.0)).unwrap(), WriteOutcome::Replaced(0));
}

#[test]
fn lru_spares_recently_retrieved() {
    let mut s = store(2, ControllerKind::Lru);
    s.write(vec![0.0, 0.0], vals(1.0)).unwrap();
    s.write(vec![5.0, 0.0], vals(2.0)).unwrap();
    s.retrieve(&[0.0, 0.0], 1).unwrap();
    assert_eq!(s.write(vec![2.0, 0.0], vals(3.0)).unwrap(), WriteOutcome::Replaced(1));
}

#[test]
fn clock_second_chance() {
    let mut s = store(3, ControllerKind::Clock);
    for x in [0.0, 10.0, 20.0] {
        s.write(vec![x, 0.0], vals(x)).unwrap();
    }
    s.retrieve(&[0.0, 0.0], 1).unwrap();
    assert_eq!(s.write(vec![30.0, 0.0], vals(3.0)).unwrap(), WriteOutcome::Replaced(1));
}

#[test]
fn clock_all_clear_and_all_set() {
    let mut s = store(3, ControllerKind::Clock);
    for x in [0.0, 10.0, 20.0] {
        s.write(vec![x, 0.0], vals(x)).unwrap();
    }
    assert_eq!(s.clock_hand(), 0);
    let mut c = s.clone();
    assert_eq!(c.clock_victim(), 0);
    s.retrieve(&[0.0, 0.0], 3).unwrap();
    assert!(s.slots().iter().all(|x| x.ref_bit));
    assert_eq!(s.clock_victim(), 0);
    assert!(s.slots().iter().all(|x| !x.ref_bit));
    assert_eq!(s.clock_hand(), 1);
}

#[test]
fn frozen_store_ignores_writes_and_access() {
    let mut s = store(2, ControllerKind::Lru);
    s.write(vec![0.0, 0.0], vals(1.0)).unwrap();
    s.set_frozen(true);
    let before = s.snapshot();
    assert_eq!(s.write(vec![1.0, 1.0], vals(2.0)).unwrap(), WriteOutcome::Ignored);
    s.retrieve(&[0.0, 0.0], 1).unwrap();
    assert_eq!(s.snapshot(), before);
}

#[test]
fn zero_capacity_stays_empty() {
    let mut s = store(0, ControllerKind::Fifo);
    assert_eq!(s.write(vec![0.0, 0.0], vals(1.0)).unwrap(), WriteOutcome::Ignored);
    assert!(s.is_empty());
}

#[test]
fn schema_mismatch_rejected() {
    let mut s = store(2, ControllerKind::Fifo);
    let bad = TensorSet::from_entries(vec![("w".into(), Tensor::vector(vec![1.0]))]).unwrap();
    assert!(s.write(vec![0.0, 0.0], bad).is_err());
}

#[test]
fn snapshot_round_trip() {
    let mut s = store(3, ControllerKind::Clock);
    for i in 0..5 {
        s.write(vec![i as f64, 0.5], vals(i as f64 * 0.1)).unwrap();
        s.retrieve(&[1.0, 0.0], 2).unwrap();
    }
    let bytes = s.snapshot();
    let back = MemoryStore::load(&bytes).unwrap();
    assert_eq!(back, s);
    assert_eq!(back.snapshot(), bytes);
}

#[test]
fn empty_snapshot_keeps_capacity() {
    let s = store(7, ControllerKind::Lru);
    let back = MemoryStore::load(&s.snapshot()).unwrap();
    assert_eq!(back.capacity(), 7);
    assert!(back.is_empty());
}

#[test]
fn corrupted_snapshots() {
    let mut s = store(3, ControllerKind::Fifo);
    s.write(vec![1.0, 2.0], vals(1.0)).unwrap();
    let bytes = s.snapshot();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    let err = MemoryStore::load(&bad).unwrap_err();
    assert_eq!(err, EmoError::Snapshot(SnapshotError::BadMagic));
    assert!(err.to_string().contains("bad-magic"));
    let mut ver = bytes.clone();
    ver[4] = 9;
    assert!(matches!(MemoryStore::load(&ver), Err(EmoError::Snapshot(SnapshotError::Version { found: 9, .. }))));
    assert!(matches!(
        MemoryStore::load(&bytes[..bytes.len() - 3]),
        Err(EmoError::Snapshot(SnapshotError::Truncated(_)))
    ));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(MemoryStore::load(&long), Err(EmoError::Snapshot(SnapshotError::Trailing(1)))));
}

/// Textbook page-replacement simulators over page ids. Pages are loaded with
/// a clear reference bit; a hit sets it.
enum RefSim {
    Fifo { cap: usize, queue: VecDeque<u32> },
    Lru { cap: usize, recency: Vec<u32> },
    Clock { cap: usize, frames: Vec<(u32, bool)>, hand: usize },
}

impl RefSim {
    fn new(kind: ControllerKind, cap: usize) -> Self {
        match kind {
            ControllerKind::Fifo => RefSim::Fifo { cap, queue: VecDeque::new() },
            ControllerKind::Lru => RefSim::Lru { cap, recency: Vec::new() },
            ControllerKind::Clock => RefSim::Clock { cap, frames: Vec::new(), hand: 0 },
        }
    }

    fn hit(&mut self, page: u32) {
        match self {
            RefSim::Fifo { .. } => {}
            RefSim::Lru { recency, .. } => {
                let i = recency.iter().position(|&p| p == page).unwrap();
                recency.remove(i);
                recency.push(page);
            }
            RefSim::Clock { frames, .. } => {
                frames.iter_mut().find(|f| f.0 == page).unwrap().1 = true;
            }
        }
    }

    /// Loads a new page; returns the evicted page, if any.
    fn load(&mut self, page: u32) -> Option<u32> {
        match self {
            RefSim::Fifo { cap, queue } => {
                let out = if queue.len() == *cap { queue.pop_front() } else { None };
                queue.push_back(page);
                out
            }
            RefSim::Lru { cap, recency } => {
                let out = if recency.len() == *cap { Some(recency.remove(0)) } else { None };
                recency.push(page);
                out
            }
            RefSim::Clock { cap, frames, hand } => {
                if frames.len() < *cap {
                    frames.push((page, false));
                    return None;
                }
                loop {
                    if frames[*hand].1 {
                        frames[*hand].1 = false;
                        *hand = (*hand + 1) % frames.len();
                    } else {
                        let old = frames[*hand].0;
                        frames[*hand] = (page, false);
                        *hand = (*hand + 1) % frames.len();
                        return Some(old);
                    }
                }
            }
        }
    }
}

fn run_trace(kind: ControllerKind, seed: u64, len: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = rng.random_range(1..8);
    let mut s = store(cap, kind);
    let mut sim = RefSim::new(kind, cap);
    let mut page_at: Vec<u32> = Vec::new();
    let mut next_page = 0u32;
    for _ in 0..len {
        // small integer grid so equal distances are common
        let key = vec![rng.random_range(0..4) as f64, rng.random_range(0..4) as f64];
        if rng.random_bool(0.5) {
            let page = next_page;
            next_page += 1;
            let evicted = sim.load(page);
            match s.write(key, vals(page as f64)).unwrap() {
                WriteOutcome::Appended(i) => {
                    assert_eq!(evicted, None);
                    assert_eq!(i, page_at.len());
                    page_at.push(page);
                }
                WriteOutcome::Replaced(i) => {
                    assert_eq!(evicted, Some(page_at[i]), "{kind:?} seed {seed}");
                    page_at[i] = page;
                }
                WriteOutcome::Ignored => unreachable!(),
            }
        } else {
            let k = rng.random_range(1..4);
            for (i, _) in s.retrieve(&key, k).unwrap() {
                sim.hit(page_at[i]);
            }
        }
        assert!(s.len() <= cap);
    }
}

#[test]
fn victims_match_reference_simulators() {
    for kind in [ControllerKind::Fifo, ControllerKind::Lru, ControllerKind::Clock] {
        for seed in 0..1000 {
            run_trace(kind, seed, 200);
        }
    }
}

proptest! {
    #[test]
    fn store_invariants(ops in prop::collection::vec((any::<bool>(), 0u8..4, 0u8..4, 1usize..4), 1..80), cap in 1usize..6, kind in 0u8..3) {
        let kind = [ControllerKind::Fifo, ControllerKind::Lru, ControllerKind::Clock][kind as usize];
        let mut s = store(cap, kind);
        for (n, (is_write, a, b, k)) in ops.into_iter().enumerate() {
            let key = vec![a as f64, b as f64];
            let before = s.clone();
            if is_write {
                let out = s.write(key, vals(n as f64)).unwrap();
                let victim = match out { WriteOutcome::Replaced(i) | WriteOutcome::Appended(i) => Some(i), WriteOutcome::Ignored => None };
                for (i, old) in before.slots().iter().enumerate() {
                    if Some(i) != victim {
                        prop_assert_eq!(&old.key, &s.slot(i).key);
                        prop_assert_eq!(&old.values, &s.slot(i).values);
                    }
                }
            } else {
                s.retrieve(&key, k).unwrap();
                for (old, new) in before.slots().iter().zip(s.slots()) {
                    prop_assert_eq!(&old.values, &new.values);
                    prop_assert_eq!(&old.key, &new.key);
                }
            }
            prop_assert!(s.len() <= cap);
            prop_assert!(s.clock_hand() < s.len().max(1));
        }
    }
}
