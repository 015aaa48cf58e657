mod common;

use std::collections::BTreeMap;

use osalg::allocators::{
    swap_in, swap_out, translate, AllocatorKind, BackingStore, BindingLayer, Grant, MemoryState, TranslationFault,
    VictimPolicy,
};
use osalg::domain::{Address, ProcId, Procedure};
use osalg::oracle::{reference_buddy, reference_victim};
use proptest::prelude::*;
use rand::Rng;

fn kinds() -> Vec<AllocatorKind> {
    vec![
        AllocatorKind::FirstFit,
        AllocatorKind::Fixed { unit: 8 },
        AllocatorKind::Buddy,
        AllocatorKind::Paging { page_size: 4 },
        AllocatorKind::Segmentation,
    ]
}

fn random_procedure(rng: &mut impl Rng, id: u32, kind: AllocatorKind) -> Procedure {
    let max = if let AllocatorKind::Fixed { unit } = kind { unit } else { 40 };
    let size = rng.random_range(0..=max);
    let p = Procedure::new(id, size, 1).unwrap().with_priority(rng.random_range(0..4));
    if kind == AllocatorKind::Segmentation && size >= 2 {
        let cut = rng.random_range(1..size);
        p.with_segments(vec![cut, size - cut])
    } else {
        p
    }
}

fn partial_injection(rng: &mut impl Rng, domain: u64, range: u64) -> BTreeMap<u64, u64> {
    let mut targets: Vec<u64> = (0..range).collect();
    for i in (1..targets.len()).rev() {
        targets.swap(i, rng.random_range(0..=i));
    }
    (0..domain).zip(targets).filter(|_| rng.random_bool(0.8)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn buddy_matches_reference(seed in any::<u64>(), order in 0u32..=8) {
        let cap = 1u64 << order;
        let ops = common::random_buddy_ops(&mut common::rng(seed), cap, 200);
        let (ours, tree) = common::combinator_buddy(cap, &ops);
        prop_assert_eq!(ours, reference_buddy(cap, &ops).unwrap());
        prop_assert!(tree.free_sibling_pairs().is_empty());
        for (block, _) in tree.nodes() {
            prop_assert!(block.len().is_power_of_two());
        }
    }

    #[test]
    fn allocators_conserve_capacity(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        for kind in kinds() {
            let mut m = MemoryState::new(128, kind).unwrap();
            let d = m.discipline();
            let mut next_id = 1;
            for _ in 0..1_200 {
                let resident: Vec<ProcId> = m.residents().collect();
                if !resident.is_empty() && rng.random_bool(0.45) {
                    let pid = resident[rng.random_range(0..resident.len())];
                    m.try_deallocate(pid).unwrap();
                } else {
                    let p = random_procedure(&mut rng, next_id, kind);
                    next_id += 1;
                    let before = m.clone();
                    if m.try_allocate(&d, &p).is_err() {
                        prop_assert_eq!(&m, &before);
                    }
                }
                prop_assert_eq!(m.check_invariants(), Ok(()), "{} after {} procedures", kind, next_id);
                prop_assert_eq!(m.total_free() + m.total_allocated() + m.total_residue(), 128);
            }
        }
    }

    #[test]
    fn page_tables_translate_into_own_frames(sizes in prop::collection::vec(1u64..30, 1..8), page in 1u64..6) {
        let mut m = MemoryState::new(256, AllocatorKind::Paging { page_size: page }).unwrap();
        let d = m.discipline();
        for (i, &size) in sizes.iter().enumerate() {
            let p = Procedure::new(i as u32 + 1, size, 1).unwrap();
            let Ok(Grant::Pages(map)) = m.try_allocate(&d, &p) else { continue };
            let frames = map.frames();
            let mut seen = std::collections::BTreeSet::new();
            for a in 0..map.page_count() * page {
                let phys = map.translate(Address(a)).unwrap();
                prop_assert!(frames.iter().any(|f| f.contains(phys)));
                prop_assert!(seen.insert(phys));
            }
            prop_assert!(map.translate(Address(map.page_count() * page)).is_err());
        }
    }

    #[test]
    fn translation_chains_compose(seed in any::<u64>(), n in 1u64..=256, m in 1u64..=256, k in 1u64..=256) {
        let mut rng = common::rng(seed);
        let f = partial_injection(&mut rng, n, m);
        let g = partial_injection(&mut rng, m, k);
        let l1 = BindingLayer::new(f.clone()).unwrap();
        let l2 = BindingLayer::new(g.clone()).unwrap();
        for a in 0..n {
            let expected = match f.get(&a) {
                None => Err(TranslationFault { layer: 1, address: Address(a) }),
                Some(b) => g.get(b).map(|&c| Address(c)).ok_or(TranslationFault { layer: 2, address: Address(*b) }),
            };
            let chained = translate(Address(a), &[l1.clone(), l2.clone()]);
            prop_assert_eq!(&chained, &expected);
            if let Ok(mid) = translate(Address(a), std::slice::from_ref(&l1)) {
                if let Ok(end) = translate(mid, std::slice::from_ref(&l2)) {
                    prop_assert_eq!(chained, Ok(end));
                }
            }
        }
    }

    #[test]
    fn victim_choice_matches_reference(rows in prop::collection::vec((1u64..20, prop::option::of(0u64..5)), 1..10)) {
        let candidates: Vec<Procedure> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (size, pr))| {
                let p = Procedure::new(i as u32 + 1, size, 1).unwrap();
                match pr { Some(x) => p.with_priority(x), None => p }
            })
            .collect();
        prop_assert_eq!(VictimPolicy::default().choose(&candidates), reference_victim(&candidates));
    }

    #[test]
    fn swapped_out_procedures_are_not_resident(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let mut m = MemoryState::new(64, AllocatorKind::FirstFit).unwrap();
        let mut backing = BackingStore::new(64);
        let d = m.discipline();
        let mut procs = Vec::new();
        for id in 1..=12u32 {
            let p = Procedure::new(id, rng.random_range(1..16), 1).unwrap().with_priority(rng.random_range(0..3));
            if m.try_allocate(&d, &p).is_ok() {
                procs.push(p);
            }
        }
        for _ in 0..20 {
            let resident: Vec<Procedure> = procs.iter().filter(|p| m.is_resident(p.id)).cloned().collect();
            let oldest_swapped = backing.swapped().next();
            if rng.random_bool(0.5) {
                if let Ok((m2, b2, record)) = swap_out(&m, &backing, &resident, VictimPolicy::default()) {
                    prop_assert!(!m2.is_resident(record.pid));
                    prop_assert!(b2.record(record.pid).is_some());
                    m = m2;
                    backing = b2;
                }
            } else if let Some(pid) = oldest_swapped {
                let p = procs.iter().find(|p| p.id == pid).unwrap().clone();
                if let Ok((m2, b2, _)) = swap_in(&m, &backing, &p) {
                    prop_assert!(m2.is_resident(pid));
                    prop_assert!(b2.record(pid).is_none());
                    m = m2;
                    backing = b2;
                }
            }
            for pid in backing.swapped() {
                prop_assert!(!m.is_resident(pid));
            }
            prop_assert_eq!(m.check_invariants(), Ok(()));
            prop_assert_eq!(backing.memory().check_invariants(), Ok(()));
        }
    }
}

#[test]
fn full_memory_evicts_low_priority_procedure() {
    let mut m = MemoryState::new(12, AllocatorKind::FirstFit).unwrap();
    let d = m.discipline();
    let residents = vec![
        Procedure::new(1, 4, 1).unwrap().with_priority(5),
        Procedure::new(2, 4, 1).unwrap().with_priority(0),
        Procedure::new(3, 4, 1).unwrap().with_priority(3),
    ];
    for p in &residents {
        m.try_allocate(&d, p).unwrap();
    }
    let incoming = Procedure::new(4, 4, 1).unwrap();
    assert!(m.clone().try_allocate(&d, &incoming).is_err());
    let (m, _, record) = swap_out(&m, &BackingStore::new(12), &residents, VictimPolicy::default()).unwrap();
    assert_eq!(Some(record.pid), reference_victim(&residents));
    assert_eq!(record.pid, ProcId(2));
    assert!(m.clone().try_allocate(&d, &incoming).is_ok());
}
