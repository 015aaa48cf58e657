mod common;

use std::collections::BTreeSet;

use osalg::allocators::AllocatorKind;
use osalg::combinators::SortKey;
use osalg::domain::{ProcedureSet, WorkClass};
use osalg::schedulers::{schedule, Policy};
use osalg::sim::{run, SimConfig, TraceKind};
use osalg::workload::{generate, GenParams};
use proptest::prelude::*;

#[test]
fn regression_corpus_runs_clean_in_strict_mode() {
    let mut swaps = 0;
    for r in common::regression_corpus() {
        let out = run(&r.workload, &r.config).unwrap_or_else(|e| panic!("{}: {e}", r.name));
        assert_eq!(out.metrics.per_procedure.len(), r.workload.len(), "{}", r.name);
        assert_eq!(out.trace.schedule().overlapping_pair(), None, "{}", r.name);
        assert_eq!(out.bindings.validate(), Ok(()), "{}", r.name);
        swaps += out.trace.events.iter().filter(|e| e.kind == TraceKind::SwapOut).count();
    }
    assert!(swaps > 0, "corpus never exercised swapping");
}

#[test]
fn regression_traces_are_byte_identical() {
    for r in common::regression_corpus() {
        let a = run(&r.workload, &r.config).unwrap().trace.to_csv();
        let b = run(&r.workload, &r.config).unwrap().trace.to_csv();
        assert_eq!(a, b, "{}", r.name);
    }
}

#[test]
fn swapped_out_procedures_never_run() {
    for r in common::regression_corpus() {
        let out = run(&r.workload, &r.config).unwrap();
        let mut away = BTreeSet::new();
        for e in &out.trace.events {
            match e.kind {
                TraceKind::SwapOut => assert!(away.insert(e.pid), "{}", r.name),
                TraceKind::SwapIn => assert!(away.remove(&e.pid), "{}", r.name),
                TraceKind::Dispatch => assert!(!away.contains(&e.pid), "{}: {} ran while swapped out", r.name, e.pid),
                _ => {}
            }
        }
        assert!(away.is_empty(), "{}", r.name);
    }
}

#[test]
fn events_at_an_instant_follow_the_fixed_order() {
    for r in common::regression_corpus() {
        let out = run(&r.workload, &r.config).unwrap();
        for w in out.trace.events.windows(2) {
            assert!(w[0].instant <= w[1].instant, "{}", r.name);
            if w[0].instant == w[1].instant {
                let rank = |k: TraceKind| match k {
                    TraceKind::Complete | TraceKind::Preempt => 0,
                    TraceKind::Deallocate => 1,
                    TraceKind::SwapIn => 2,
                    TraceKind::Arrive => 3,
                    TraceKind::SwapOut => 4,
                    TraceKind::Admit => 5,
                    TraceKind::Allocate => 6,
                    TraceKind::Dispatch => 7,
                };
                assert!(rank(w[0].kind) <= rank(w[1].kind), "{}: {:?} then {:?}", r.name, w[0], w[1]);
            }
        }
    }
}

fn roomy(policy: Policy) -> SimConfig {
    SimConfig::new(policy, AllocatorKind::FirstFit, 1 << 20).strict(true)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unconstrained_memory_reproduces_the_scheduler(seed in any::<u64>(), n in 1usize..25) {
        let params = GenParams { count: n, max_size: 64, max_time: 9, max_gap: 4, priorities: true, classes: true };
        let set = generate(seed, &params);
        for (name, policy) in common::schedulers() {
            let out = run(&set, &roomy(policy)).unwrap();
            prop_assert_eq!(out.trace.schedule(), schedule(&set, policy).unwrap(), "{}", name);
        }
    }

    #[test]
    fn sjf_mean_wait_dominates_fcfs(seed in any::<u64>(), n in 1usize..=50) {
        let params = GenParams { count: n, max_size: 8, max_time: 20, max_gap: 0, priorities: false, classes: false };
        let set = generate(seed, &params);
        let fcfs = run(&set, &roomy(Policy::Fcfs)).unwrap().metrics;
        let sjf = run(&set, &roomy(Policy::Sjf(SortKey::Time))).unwrap().metrics;
        prop_assert!(sjf.mean_waiting <= fcfs.mean_waiting);
    }

    #[test]
    fn tight_memory_runs_stay_consistent(seed in any::<u64>(), memory in 16u64..48) {
        let params = GenParams { count: 15, max_size: 16, max_time: 6, max_gap: 2, priorities: true, classes: true };
        let set = generate(seed, &params);
        for (_, policy) in common::schedulers() {
            let cfg = SimConfig::new(policy, AllocatorKind::FirstFit, memory).strict(true);
            let out = run(&set, &cfg).unwrap();
            for p in set.iter() {
                let m = out.metrics.per_procedure[&p.id];
                prop_assert_eq!(m.turnaround, m.waiting + p.time);
                prop_assert_eq!(out.trace.schedule().units_for(p.id), p.time);
            }
        }
    }
}

#[test]
fn var_quantum_gives_io_bound_short_slices() {
    let params = GenParams { count: 10, max_size: 4, max_time: 20, max_gap: 0, priorities: false, classes: true };
    let set = generate(3, &params);
    let out = run(&set, &roomy(common::schedulers()[5].1)).unwrap();
    let io: BTreeSet<_> = set.iter().filter(|p| p.class == Some(WorkClass::IoBound)).map(|p| p.id).collect();
    for s in out.trace.schedule().slices {
        assert!(s.len <= if io.contains(&s.pid) { 2 } else { 8 });
    }
}

#[test]
fn empty_workload_yields_empty_trace() {
    let out = run(&ProcedureSet::empty(), &roomy(Policy::Fcfs)).unwrap();
    assert!(out.trace.events.is_empty());
    assert_eq!(out.metrics.makespan, 0);
}
