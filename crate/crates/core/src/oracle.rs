//! Brute-force reference implementations.
//!
//! Nothing here goes through the combinator path: schedules come from
//! exhaustive enumeration or a plain queue replay, buddy allocations from a
//! free-list-per-order allocator. Only the data types in [`crate::domain`]
//! are shared with the code under test.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use itertools::Itertools;
use thiserror::Error;

use crate::domain::{Extent, ProcId, Procedure, ProcedureSet, Schedule, Slice};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("enumeration limited to {max} procedures, got {got}")]
    TooLarge { got: usize, max: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

pub const MAX_ENUMERATION: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleResult {
    pub order: Vec<ProcId>,
    pub schedule: Schedule,
    pub total_wait: u64,
}

/// Runs `order` non-preemptively, idling until each procedure has arrived.
fn run_in_order(set: &ProcedureSet, order: &[usize]) -> (Schedule, u64) {
    let members = set.members();
    let mut clock = 0u64;
    let mut wait = 0u64;
    let mut slices = Vec::with_capacity(order.len());
    for &i in order {
        let p = &members[i];
        let start = clock.max(p.arrival);
        wait += start - p.arrival;
        slices.push(Slice { pid: p.id, start, len: p.time });
        clock = start + p.time;
    }
    (Schedule::new(slices), wait)
}

/// Minimum total-wait non-preemptive schedule by enumerating all orders.
/// Ties go to the lexicographically smallest id sequence.
pub fn brute_schedule(set: &ProcedureSet) -> Result<OracleResult, OracleError> {
    let n = set.len();
    if n > MAX_ENUMERATION {
        return Err(OracleError::TooLarge { got: n, max: MAX_ENUMERATION });
    }
    let mut by_id: Vec<usize> = (0..n).collect();
    by_id.sort_by_key(|&i| set.members()[i].id);

    let mut best: Option<(u64, Vec<usize>)> = None;
    // permutations() yields index orders lexicographically; with ids
    // pre-sorted that is lexicographic in ids, so strict < keeps the first.
    for perm in by_id.iter().copied().permutations(n) {
        let (_, wait) = run_in_order(set, &perm);
        if best.as_ref().is_none_or(|(w, _)| wait < *w) {
            best = Some((wait, perm));
        }
    }
    let (total_wait, order) = best.unwrap_or((0, Vec::new()));
    let (schedule, _) = run_in_order(set, &order);
    Ok(OracleResult { order: order.iter().map(|&i| set.members()[i].id).collect(), schedule, total_wait })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuddyOp {
    Alloc(u64),
    /// Frees the block handed out by the op at this position in the sequence.
    Free(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuddyOutcome {
    Allocated(Extent),
    Failed,
    Freed(Extent),
    /// The referenced op did not hold a live block.
    Ignored,
}

/// Textbook binary buddy allocator with one free list per order.
///
/// Allocation takes the lowest-addressed block from the smallest non-empty
/// order that fits and splits it, keeping the lower half. Freeing merges
/// with the buddy (`addr ^ size`) for as long as the buddy is free.
pub fn reference_buddy(capacity: u64, ops: &[BuddyOp]) -> Result<Vec<BuddyOutcome>, OracleError> {
    if capacity == 0 || !capacity.is_power_of_two() {
        return Err(OracleError::Parameter(format!("capacity {capacity} is not a power of two")));
    }
    let top = capacity.trailing_zeros();
    let mut free: BTreeMap<u32, BTreeSet<u64>> = (0..=top).map(|k| (k, BTreeSet::new())).collect();
    free.get_mut(&top).unwrap().insert(0);
    let mut live: BTreeMap<usize, (u64, u32)> = BTreeMap::new();
    let mut out = Vec::with_capacity(ops.len());

    for (pos, op) in ops.iter().enumerate() {
        match *op {
            BuddyOp::Alloc(q) => {
                if q == 0 {
                    return Err(OracleError::Parameter("demand must be ≥ 1".into()));
                }
                let want = if q > capacity { top + 1 } else { q.next_power_of_two().trailing_zeros() };
                let Some(k) = (want..=top).find(|k| !free[k].is_empty()) else {
                    out.push(BuddyOutcome::Failed);
                    continue;
                };
                let addr = free.get_mut(&k).unwrap().pop_first().unwrap();
                for j in (want..k).rev() {
                    free.get_mut(&j).unwrap().insert(addr + (1u64 << j));
                }
                live.insert(pos, (addr, want));
                out.push(BuddyOutcome::Allocated(Extent::at(addr, 1u64 << want)));
            }
            BuddyOp::Free(target) => {
                let Some((mut addr, mut k)) = live.remove(&target) else {
                    out.push(BuddyOutcome::Ignored);
                    continue;
                };
                out.push(BuddyOutcome::Freed(Extent::at(addr, 1u64 << k)));
                while k < top {
                    let buddy = addr ^ (1u64 << k);
                    if !free.get_mut(&k).unwrap().remove(&buddy) {
                        break;
                    }
                    addr = addr.min(buddy);
                    k += 1;
                }
                free.get_mut(&k).unwrap().insert(addr);
            }
        }
    }
    Ok(out)
}

/// Queue-based round-robin replay with a per-procedure quantum.
///
/// Procedures join the queue in `(arrival, id)` order. At a slice boundary,
/// arrivals from inside the slice join first, then the preempted procedure,
/// then arrivals at the boundary instant itself. An empty queue idles the
/// CPU until the next arrival.
pub fn replay_rr(set: &ProcedureSet, quantum: impl Fn(&Procedure) -> u64) -> Result<Schedule, OracleError> {
    let mut pending: Vec<&Procedure> = set.iter().collect();
    pending.sort_by_key(|p| (p.arrival, p.id));
    let mut pending: VecDeque<&Procedure> = pending.into();
    let mut queue: VecDeque<(&Procedure, u64)> = VecDeque::new();
    let mut clock = 0u64;
    let mut slices = Vec::new();

    loop {
        while pending.front().is_some_and(|p| p.arrival <= clock) {
            let p = pending.pop_front().unwrap();
            queue.push_back((p, p.time));
        }
        let Some((p, left)) = queue.pop_front() else {
            match pending.front() {
                Some(next) => {
                    clock = next.arrival;
                    continue;
                }
                None => break,
            }
        };
        let q = quantum(p);
        if q == 0 {
            return Err(OracleError::Parameter(format!("quantum for procedure {} is 0", p.id)));
        }
        let run = q.min(left);
        slices.push(Slice { pid: p.id, start: clock, len: run });
        clock += run;
        while pending.front().is_some_and(|a| a.arrival < clock) {
            let a = pending.pop_front().unwrap();
            queue.push_back((a, a.time));
        }
        if left > run {
            queue.push_back((p, left - run));
        }
    }
    Ok(Schedule::new(slices))
}

/// Picks the swap victim by scanning every candidate: lowest priority
/// (absent counts as 0), then largest size, then highest id.
pub fn reference_victim(candidates: &[Procedure]) -> Option<ProcId> {
    let mut best: Option<&Procedure> = None;
    for c in candidates {
        let better = match best {
            None => true,
            Some(b) => {
                let (cp, bp) = (c.priority.unwrap_or(0), b.priority.unwrap_or(0));
                cp < bp || (cp == bp && (c.size > b.size || (c.size == b.size && c.id > b.id)))
            }
        };
        if better {
            best = Some(c);
        }
    }
    best.map(|p| p.id)
}
