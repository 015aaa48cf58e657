#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::BTreeMap;

use osalg::allocators::AllocatorKind;
use osalg::combinators::{compose, BuddyTree, Organize, Select, Selection, SortKey, Subject};
use osalg::domain::{Extent, ProcId, Procedure, ProcedureSet, Schedule};
use osalg::oracle::{BuddyOp, BuddyOutcome};
use osalg::schedulers::{ClassQuanta, Policy, Quantum};
use osalg::sim::SimConfig;
use osalg::workload::{generate, GenParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Batch of `1..=max_n` procedures, all arriving at 0, each with a priority.
pub fn random_batch(rng: &mut ChaCha8Rng, max_n: usize, max_time: u64) -> ProcedureSet {
    let n = rng.random_range(1..=max_n);
    let members = (1..=n as u32)
        .map(|id| {
            Procedure::new(id, rng.random_range(0..=32), rng.random_range(1..=max_time))
                .unwrap()
                .with_priority(rng.random_range(0..5))
        })
        .collect();
    ProcedureSet::new(members).unwrap()
}

// Reference orderings: plain sorts over the member list.

pub fn ref_fcfs(set: &ProcedureSet) -> Vec<ProcId> {
    let mut v: Vec<&Procedure> = set.iter().collect();
    v.sort_by_key(|a| (a.arrival, a.id));
    v.into_iter().map(|p| p.id).collect()
}

pub fn ref_sjf_size(set: &ProcedureSet) -> Vec<ProcId> {
    let mut v: Vec<&Procedure> = set.iter().collect();
    v.sort_by_key(|a| (a.size, a.id));
    v.into_iter().map(|p| p.id).collect()
}

pub fn ref_sjf_time(set: &ProcedureSet) -> Vec<ProcId> {
    let mut v: Vec<&Procedure> = set.iter().collect();
    v.sort_by_key(|a| (a.time, a.id));
    v.into_iter().map(|p| p.id).collect()
}

pub fn ref_priority(set: &ProcedureSet) -> Vec<ProcId> {
    let mut v: Vec<&Procedure> = set.iter().collect();
    v.sort_by_key(|p| (Reverse(p.priority.unwrap()), p.id));
    v.into_iter().map(|p| p.id).collect()
}

/// Checks that, after every slice, the quanta counts of any two unfinished
/// procedures of a batch differ by at most one. Returns the first offending
/// slice index.
pub fn rr_fairness_violation(set: &ProcedureSet, schedule: &Schedule) -> Option<usize> {
    let mut given: BTreeMap<ProcId, u64> = set.iter().map(|p| (p.id, 0)).collect();
    let mut quanta: BTreeMap<ProcId, u64> = set.iter().map(|p| (p.id, 0)).collect();
    let time: BTreeMap<ProcId, u64> = set.iter().map(|p| (p.id, p.time)).collect();
    for (i, s) in schedule.slices.iter().enumerate() {
        *given.get_mut(&s.pid).unwrap() += s.len;
        *quanta.get_mut(&s.pid).unwrap() += 1;
        let alive: Vec<u64> = quanta.iter().filter(|(p, _)| given[*p] < time[*p]).map(|(_, &q)| q).collect();
        if let (Some(lo), Some(hi)) = (alive.iter().min(), alive.iter().max()) {
            if hi - lo > 1 {
                return Some(i);
            }
        }
    }
    None
}

pub fn with_random_segments(rng: &mut ChaCha8Rng, set: &ProcedureSet) -> ProcedureSet {
    let members = set
        .iter()
        .map(|p| {
            if p.size < 2 {
                return p.clone();
            }
            let parts = rng.random_range(1..=p.size.min(3));
            let mut cuts: Vec<u64> = (0..parts - 1).map(|_| rng.random_range(1..p.size)).collect();
            cuts.sort();
            cuts.dedup();
            let mut lens = Vec::new();
            let mut prev = 0;
            for c in cuts.into_iter().chain([p.size]) {
                lens.push(c - prev);
                prev = c;
            }
            p.clone().with_segments(lens)
        })
        .collect();
    ProcedureSet::arrival_ordered(members).unwrap()
}

pub fn schedulers() -> Vec<(&'static str, Policy)> {
    vec![
        ("fcfs", Policy::Fcfs),
        ("sjf-size", Policy::Sjf(SortKey::Size)),
        ("sjf-time", Policy::Sjf(SortKey::Time)),
        ("priority", Policy::Priority),
        ("rr2", Policy::round_robin(2)),
        ("var-quantum", Policy::Chunked(Quantum::Variable(ClassQuanta::default()))),
    ]
}

pub fn allocators() -> Vec<(&'static str, AllocatorKind, u64)> {
    // (name, allocator, largest procedure size it can hold)
    vec![
        ("first-fit", AllocatorKind::FirstFit, 14),
        ("fixed8", AllocatorKind::Fixed { unit: 8 }, 8),
        ("buddy", AllocatorKind::Buddy, 14),
        ("paging4", AllocatorKind::Paging { page_size: 4 }, 14),
        ("segmentation", AllocatorKind::Segmentation, 14),
    ]
}

pub struct RegressionRun {
    pub name: String,
    pub workload: ProcedureSet,
    pub config: SimConfig,
}

/// Every scheduler against every allocator over a few seeded workloads, in
/// a 32-unit memory small enough to force swapping.
pub fn regression_corpus() -> Vec<RegressionRun> {
    let mut runs = Vec::new();
    for seed in 0..4u64 {
        for (aname, kind, max_size) in allocators() {
            let params = GenParams { count: 12, max_size, max_time: 7, max_gap: 2, priorities: true, classes: true };
            let mut workload = generate(seed, &params);
            if kind == AllocatorKind::Segmentation {
                workload = with_random_segments(&mut rng(seed), &workload);
            }
            for (sname, policy) in schedulers() {
                let mut config = SimConfig::new(policy, kind, 32).strict(true);
                config.seed = seed;
                runs.push(RegressionRun {
                    name: format!("{sname}/{aname}/seed{seed}"),
                    workload: workload.clone(),
                    config,
                });
            }
        }
    }
    runs
}

/// Replays buddy operations through the combinator discipline, returning
/// outcomes in the reference oracle's vocabulary plus the final tree.
pub fn combinator_buddy(capacity: u64, ops: &[BuddyOp]) -> (Vec<BuddyOutcome>, BuddyTree) {
    let d = compose(Select::BuddyFit, Organize::BuddyTree).unwrap();
    let mut tree = BuddyTree::new(capacity).unwrap();
    let mut live: BTreeMap<usize, Extent> = BTreeMap::new();
    let mut out = Vec::with_capacity(ops.len());
    for (i, op) in ops.iter().enumerate() {
        out.push(match *op {
            BuddyOp::Alloc(q) => match d.apply(Subject::Tree(tree.clone()), Some(q)) {
                Ok(Selection::Block { extent, tree: next }) => {
                    tree = next;
                    live.insert(i, extent);
                    BuddyOutcome::Allocated(extent)
                }
                _ => BuddyOutcome::Failed,
            },
            BuddyOp::Free(j) => match live.remove(&j) {
                Some(e) => {
                    tree.free(&e).unwrap();
                    BuddyOutcome::Freed(e)
                }
                None => BuddyOutcome::Ignored,
            },
        });
    }
    (out, tree)
}

pub fn random_buddy_ops(rng: &mut ChaCha8Rng, capacity: u64, max_ops: usize) -> Vec<BuddyOp> {
    let n = rng.random_range(1..=max_ops);
    let mut ops = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.random_bool(0.4) {
            ops.push(BuddyOp::Free(rng.random_range(0..i)));
        } else {
            // Skew toward small requests so the tree fills up gradually.
            let max = capacity >> rng.random_range(0..=capacity.ilog2());
            ops.push(BuddyOp::Alloc(rng.random_range(1..=max.max(1))));
        }
    }
    ops
}
