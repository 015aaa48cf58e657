//! CPU-time disciplines.
//!
//! Each discipline is a composed [`Discipline`] applied to the ready set at
//! every dispatch point. Non-preemptive disciplines run the chosen
//! procedure to completion; round robin and variable-quantum run it for one
//! chunk of its remaining time and send it to the back of the ready queue.

use std::iter::Peekable;

use thiserror::Error;

use crate::combinators::{compose, CombError, Discipline, Organize, Select, SortKey};
use crate::domain::{ProcId, Procedure, ProcedureSet, Schedule, Slice, WorkClass};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("procedure {id} arrives at {arrival}, before the previous arrival at {previous}")]
    StreamOrder { id: ProcId, arrival: u64, previous: u64 },
    #[error(transparent)]
    Combinator(#[from] CombError),
}

/// Per-class quanta for variable-quantum scheduling. Untagged procedures
/// are treated as CPU-bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClassQuanta {
    pub io_bound: u64,
    pub cpu_bound: u64,
}

impl Default for ClassQuanta {
    fn default() -> Self {
        ClassQuanta { io_bound: 2, cpu_bound: 8 }
    }
}

impl ClassQuanta {
    pub fn quantum(&self, p: &Procedure) -> u64 {
        match p.class {
            Some(WorkClass::IoBound) => self.io_bound,
            Some(WorkClass::CpuBound) | None => self.cpu_bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantum {
    Fixed(u64),
    Variable(ClassQuanta),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Fcfs,
    Sjf(SortKey),
    Priority,
    Chunked(Quantum),
}

impl Policy {
    pub fn round_robin(q: u64) -> Self {
        Policy::Chunked(Quantum::Fixed(q))
    }

    /// The select/organize pair that picks the next procedure to run.
    pub fn discipline(&self) -> Discipline {
        let (select, organize) = match self {
            Policy::Fcfs | Policy::Chunked(_) => (Select::Identity(1), Organize::Identity),
            Policy::Sjf(key) => (Select::Identity(1), Organize::Sort(*key)),
            Policy::Priority => (Select::ArgmaxPriority, Organize::Identity),
        };
        compose(select, organize).expect("built-in disciplines compose")
    }

    /// Length of the next slice for `p` with `remaining` units left.
    pub fn slice_len(&self, p: &Procedure, remaining: u64) -> u64 {
        match self {
            Policy::Chunked(Quantum::Fixed(q)) => (*q).min(remaining),
            Policy::Chunked(Quantum::Variable(c)) => c.quantum(p).min(remaining),
            _ => remaining,
        }
    }

    pub fn is_preemptive(&self) -> bool {
        matches!(self, Policy::Chunked(_))
    }

    /// Checks the policy's parameters and its demands on the workload.
    pub fn check(&self, set: &ProcedureSet) -> Result<(), SchedError> {
        match self {
            Policy::Chunked(Quantum::Fixed(0)) => Err(SchedError::Parameter("quantum must be ≥ 1".into())),
            Policy::Chunked(Quantum::Variable(c)) if c.io_bound == 0 || c.cpu_bound == 0 => {
                Err(SchedError::Parameter("quantum must be ≥ 1".into()))
            }
            Policy::Priority => match set.iter().find(|p| p.priority.is_none()) {
                Some(p) => Err(CombError::MissingPriority(p.id).into()),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

/// Drives a discipline over the whole workload, honouring arrivals.
///
/// `quantum` returns the slice cap for a procedure, or `None` to run it to
/// completion.
fn dispatch(
    set: &ProcedureSet,
    discipline: &Discipline,
    quantum: &dyn Fn(&Procedure) -> Option<u64>,
) -> Result<Schedule, SchedError> {
    let mut pending: Vec<Procedure> = set.members().to_vec();
    pending.sort_by_key(|p| (p.arrival, p.id));
    let mut pending = pending.into_iter().peekable();
    let mut ready: Vec<(Procedure, u64)> = Vec::new();
    let mut clock = 0u64;
    let mut slices = Vec::new();

    loop {
        while let Some(p) = pending.next_if(|p| p.arrival <= clock) {
            let t = p.time;
            ready.push((p, t));
        }
        if ready.is_empty() {
            match pending.peek() {
                Some(next) => {
                    clock = next.arrival;
                    continue;
                }
                None => break,
            }
        }
        let ready_set = ProcedureSet::new(ready.iter().map(|(p, _)| p.clone()).collect()).map_err(CombError::from)?;
        let chosen = discipline.pick(&ready_set)?;
        let idx = ready.iter().position(|(p, _)| p.id == chosen.id).expect("selection is a member");
        let (p, left) = ready.remove(idx);
        let run = match quantum(&p) {
            Some(0) => return Err(SchedError::Parameter(format!("quantum for procedure {} is 0", p.id))),
            Some(q) => q.min(left),
            None => left,
        };
        slices.push(Slice { pid: p.id, start: clock, len: run });
        clock += run;
        // Arrivals during the slice queue ahead of the preempted procedure;
        // arrivals exactly at the boundary queue behind it.
        while let Some(a) = pending.next_if(|a| a.arrival < clock) {
            let t = a.time;
            ready.push((a, t));
        }
        if left > run {
            ready.push((p, left - run));
        }
    }
    Ok(Schedule::new(slices))
}

/// Runs `set` under `policy`.
pub fn schedule(set: &ProcedureSet, policy: Policy) -> Result<Schedule, SchedError> {
    policy.check(set)?;
    let discipline = policy.discipline();
    match policy {
        Policy::Chunked(Quantum::Fixed(q)) => dispatch(set, &discipline, &|_| Some(q)),
        Policy::Chunked(Quantum::Variable(c)) => dispatch(set, &discipline, &move |p| Some(c.quantum(p))),
        _ => dispatch(set, &discipline, &|_| None),
    }
}

/// First come, first served: `identity(identity(P))` over the arrival-ordered set.
pub fn fcfs(set: &ProcedureSet) -> Result<Schedule, SchedError> {
    schedule(set, Policy::Fcfs)
}

/// Shortest job first by size or time: `identity(sort(P, key))`.
pub fn sjf(set: &ProcedureSet, key: SortKey) -> Result<Schedule, SchedError> {
    schedule(set, Policy::Sjf(key))
}

/// Non-preemptive, highest priority first.
pub fn priority_schedule(set: &ProcedureSet) -> Result<Schedule, SchedError> {
    schedule(set, Policy::Priority)
}

pub fn round_robin(set: &ProcedureSet, quantum: u64) -> Result<Schedule, SchedError> {
    schedule(set, Policy::round_robin(quantum))
}

/// Round robin where each procedure's turn length comes from `classifier`.
pub fn variable_quantum(set: &ProcedureSet, classifier: impl Fn(&Procedure) -> u64) -> Result<Schedule, SchedError> {
    let discipline = compose(Select::Identity(1), Organize::Identity)?;
    dispatch(set, &discipline, &|p| Some(classifier(p)))
}

/// Admits procedures from an arrival-ordered, possibly unbounded source.
pub struct ArrivalStream<I: Iterator<Item = Procedure>> {
    source: Peekable<I>,
    last_arrival: Option<u64>,
    ready: Vec<Procedure>,
}

impl<I: Iterator<Item = Procedure>> ArrivalStream<I> {
    pub fn new(source: I) -> Self {
        ArrivalStream { source: source.peekable(), last_arrival: None, ready: Vec::new() }
    }

    fn check_next(&mut self) -> Result<Option<u64>, SchedError> {
        let Some(next) = self.source.peek() else { return Ok(None) };
        if let Some(prev) = self.last_arrival {
            if next.arrival < prev {
                return Err(SchedError::StreamOrder { id: next.id, arrival: next.arrival, previous: prev });
            }
        }
        Ok(Some(next.arrival))
    }

    /// Pulls everything that has arrived by `now` and returns the ready set:
    /// arrived and not yet retired.
    pub fn admit(&mut self, now: u64) -> Result<ProcedureSet, SchedError> {
        while let Some(arrival) = self.check_next()? {
            if arrival > now {
                break;
            }
            let p = self.source.next().expect("peeked");
            self.last_arrival = Some(p.arrival);
            self.ready.push(p);
        }
        ProcedureSet::new(self.ready.clone()).map_err(|e| CombError::from(e).into())
    }

    /// Instant of the next arrival not yet admitted.
    pub fn next_arrival(&mut self) -> Result<Option<u64>, SchedError> {
        self.check_next()
    }

    /// Removes a finished procedure from the ready set.
    pub fn retire(&mut self, pid: ProcId) -> Option<Procedure> {
        let idx = self.ready.iter().position(|p| p.id == pid)?;
        Some(self.ready.remove(idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(id: u32, t: u64, at: u64) -> Procedure {
        Procedure::new(id, 1, t).unwrap().arriving_at(at)
    }

    fn set(ps: Vec<Procedure>) -> ProcedureSet {
        ProcedureSet::arrival_ordered(ps).unwrap()
    }

    fn ids(s: &Schedule) -> Vec<u32> {
        s.pids().iter().map(|p| p.0).collect()
    }

    #[test]
    fn fcfs_follows_arrivals() {
        let s = fcfs(&set(vec![p(3, 2, 0), p(1, 2, 1), p(2, 2, 2)])).unwrap();
        assert_eq!(
            s.slices,
            vec![
                Slice { pid: ProcId(3), start: 0, len: 2 },
                Slice { pid: ProcId(1), start: 2, len: 2 },
                Slice { pid: ProcId(2), start: 4, len: 2 },
            ]
        );
        assert_eq!(fcfs(&set(vec![p(1, 5, 0)])).unwrap().slices, vec![Slice { pid: ProcId(1), start: 0, len: 5 }]);
        assert!(fcfs(&ProcedureSet::empty()).unwrap().is_empty());
    }

    #[test]
    fn fcfs_idles_until_next_arrival() {
        let s = fcfs(&set(vec![p(1, 2, 0), p(2, 1, 5)])).unwrap();
        assert_eq!(s.slices[1], Slice { pid: ProcId(2), start: 5, len: 1 });
    }

    #[test]
    fn sjf_orders() {
        let by_time = sjf(&set(vec![p(1, 3, 0), p(2, 1, 0), p(3, 2, 0)]), SortKey::Time).unwrap();
        assert_eq!(ids(&by_time), vec![2, 3, 1]);
        let sized = set(vec![
            Procedure::new(1, 5, 1).unwrap(),
            Procedure::new(2, 2, 1).unwrap(),
            Procedure::new(3, 9, 1).unwrap(),
        ]);
        assert_eq!(ids(&sjf(&sized, SortKey::Size).unwrap()), vec![2, 1, 3]);
    }

    #[test]
    fn sjf_time_minimises_wait_over_permutations() {
        let w = set(vec![p(1, 3, 0), p(2, 1, 0), p(3, 2, 0)]);
        let got = sjf(&w, SortKey::Time).unwrap().total_wait(&w);
        let times = [3u64, 1, 2];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms
            .iter()
            .map(|perm| {
                let mut clock = 0;
                let mut wait = 0;
                for &i in perm {
                    wait += clock;
                    clock += times[i];
                }
                wait
            })
            .min()
            .unwrap();
        assert_eq!(best, 4);
        assert_eq!(got, best);
    }

    #[test]
    fn priority_order() {
        let w = set(vec![p(1, 1, 0).with_priority(3), p(2, 1, 0).with_priority(7), p(3, 1, 0).with_priority(1)]);
        assert_eq!(ids(&priority_schedule(&w).unwrap()), vec![2, 1, 3]);
        let tie = set(vec![p(1, 1, 0).with_priority(5), p(2, 1, 0).with_priority(5)]);
        assert_eq!(ids(&priority_schedule(&tie).unwrap())[0], 1);
        let missing = set(vec![p(1, 1, 0).with_priority(5), p(2, 1, 0)]);
        assert!(matches!(
            priority_schedule(&missing),
            Err(SchedError::Combinator(CombError::MissingPriority(ProcId(2))))
        ));
    }

    #[test]
    fn round_robin_cases() {
        let s = round_robin(&set(vec![p(1, 3, 0), p(2, 2, 0)]), 1).unwrap();
        assert_eq!(ids(&s), vec![1, 2, 1, 2, 1]);
        let s = round_robin(&set(vec![p(1, 4, 0)]), 2).unwrap();
        assert_eq!(
            s.slices,
            vec![Slice { pid: ProcId(1), start: 0, len: 2 }, Slice { pid: ProcId(1), start: 2, len: 2 }]
        );
        let s = round_robin(&set(vec![p(1, 3, 0)]), 2).unwrap();
        assert_eq!(s.slices.iter().map(|s| s.len).collect::<Vec<_>>(), vec![2, 1]);
        assert!(matches!(round_robin(&set(vec![p(1, 3, 0)]), 0), Err(SchedError::Parameter(_))));
    }

    #[test]
    fn variable_quantum_cases() {
        let w = set(vec![p(1, 2, 0).with_class(WorkClass::IoBound), p(2, 3, 0).with_class(WorkClass::CpuBound)]);
        let quanta = ClassQuanta { io_bound: 1, cpu_bound: 3 };
        let s = schedule(&w, Policy::Chunked(Quantum::Variable(quanta))).unwrap();
        assert_eq!(
            s.slices,
            vec![
                Slice { pid: ProcId(1), start: 0, len: 1 },
                Slice { pid: ProcId(2), start: 1, len: 3 },
                Slice { pid: ProcId(1), start: 4, len: 1 },
            ]
        );
        assert_eq!(variable_quantum(&w, |_| 2).unwrap(), round_robin(&w, 2).unwrap());
        assert!(variable_quantum(&ProcedureSet::empty(), |_| 1).unwrap().is_empty());
        assert!(matches!(variable_quantum(&w, |_| 0), Err(SchedError::Parameter(_))));
    }

    #[test]
    fn admit_filters_by_arrival() {
        let src = vec![p(1, 1, 0), p(2, 1, 5), p(3, 1, 9)];
        let mut stream = ArrivalStream::new(src.into_iter());
        let ready = stream.admit(5).unwrap();
        assert_eq!(ready.iter().map(|p| p.id.0).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(stream.next_arrival().unwrap(), Some(9));
        stream.retire(ProcId(1));
        assert_eq!(stream.admit(9).unwrap().len(), 2);

        let mut late = ArrivalStream::new(vec![p(1, 1, 3)].into_iter());
        assert!(late.admit(0).unwrap().is_empty());

        let mut bad = ArrivalStream::new(vec![p(1, 1, 4), p(2, 1, 2)].into_iter());
        assert!(matches!(bad.admit(10), Err(SchedError::StreamOrder { id: ProcId(2), arrival: 2, previous: 4 })));
    }

    #[test]
    fn admit_from_unbounded_source() {
        let mut stream = ArrivalStream::new((1u32..).map(|i| p(i, 1, u64::from(i) * 10)));
        assert_eq!(stream.admit(35).unwrap().len(), 3);
        assert_eq!(stream.next_arrival().unwrap(), Some(40));
    }
}
