//! Deterministic discrete-event simulation of one processor and one primary
//! memory.
//!
//! At every instant the simulator handles, in this order: the end of the
//! running slice (completion or preemption, then deallocation), swap-ins of
//! previously evicted procedures, new arrivals, admission of waiting
//! procedures into memory (with at most one swap-out attempt each), and
//! finally dispatch of the next procedure chosen by the CPU discipline.
//! Events sharing an instant are emitted in a fixed order by kind, so the
//! same workload and configuration always give the same trace.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::{self, Write as _};
use std::iter::Peekable;

use thiserror::Error;

use crate::allocators::{
    extent_symbol, page_table_symbol, pages_symbol, record_page_table, swap_in, swap_out, AllocError, AllocatorKind,
    BackingStore, Grant, MemoryState, SwapError, VictimPolicy, FRAMES_SYMBOL,
};
use crate::binding::{BindingError, BindingGraph};
use crate::domain::{self, Context, Extent, ProcId, Procedure, ProcedureSet, Schedule, Slice};
use crate::schedulers::{Policy, SchedError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("procedure {pid} (size {size}) can never be resident: memory {memory}, backing {backing}")]
    Unrunnable { pid: ProcId, size: u64, memory: u64, backing: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invariant violated at instant {instant}: {what}")]
    Invariant { instant: u64, what: String },
    #[error("trace incomplete: procedures {0:?} never completed")]
    Incomplete(Vec<ProcId>),
    #[error("no procedure can make progress at instant {0}")]
    Stalled(u64),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Swap(#[from] SwapError),
    #[error(transparent)]
    Binding(#[from] BindingError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub memory: u64,
    pub backing: u64,
    pub policy: Policy,
    pub allocator: AllocatorKind,
    pub victim: VictimPolicy,
    /// Check every memory, CPU and binding invariant after each instant.
    pub strict: bool,
    /// Seed for workload generation; the simulation itself draws no randomness.
    pub seed: u64,
}

impl SimConfig {
    pub fn new(policy: Policy, allocator: AllocatorKind, memory: u64) -> Self {
        SimConfig {
            memory,
            backing: memory,
            policy,
            allocator,
            victim: VictimPolicy::default(),
            strict: false,
            seed: 0,
        }
    }

    pub fn with_backing(mut self, backing: u64) -> Self {
        self.backing = backing;
        self
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.memory == 0 {
            return Err(SimError::Config("memory capacity must be ≥ 1".into()));
        }
        self.policy.check(&ProcedureSet::empty())?;
        MemoryState::new(self.memory, self.allocator).map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TraceKind {
    Complete,
    Preempt,
    Deallocate,
    SwapIn,
    Arrive,
    SwapOut,
    Admit,
    Allocate,
    Dispatch,
}

impl TraceKind {
    /// Position among events that share an instant.
    fn rank(self) -> u8 {
        match self {
            TraceKind::Complete | TraceKind::Preempt => 0,
            TraceKind::Deallocate => 1,
            TraceKind::SwapIn => 2,
            TraceKind::Arrive => 3,
            TraceKind::SwapOut => 4,
            TraceKind::Admit => 5,
            TraceKind::Allocate => 6,
            TraceKind::Dispatch => 7,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Complete => "complete",
            TraceKind::Preempt => "preempt",
            TraceKind::Deallocate => "deallocate",
            TraceKind::SwapIn => "swap-in",
            TraceKind::Arrive => "arrive",
            TraceKind::SwapOut => "swap-out",
            TraceKind::Admit => "admit",
            TraceKind::Allocate => "allocate",
            TraceKind::Dispatch => "dispatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Detail {
    None,
    Demand {
        size: u64,
        time: u64,
    },
    /// Memory handed out, with the unused part of it (`waste`) and the free
    /// space left afterwards.
    Grant {
        grant: String,
        waste: u64,
        free: u64,
        largest_free: u64,
    },
    Run {
        len: u64,
        remaining: u64,
    },
    Remaining(u64),
    Freed(String),
    Swap {
        primary: String,
        backing: Extent,
    },
}

impl fmt::Display for Detail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Detail::None => Ok(()),
            Detail::Demand { size, time } => write!(f, "size={size} time={time}"),
            Detail::Grant { grant, waste, free, largest_free } => {
                write!(f, "grant={grant} waste={waste} free={free} largest={largest_free}")
            }
            Detail::Run { len, remaining } => write!(f, "len={len} remaining={remaining}"),
            Detail::Remaining(r) => write!(f, "remaining={r}"),
            Detail::Freed(e) => write!(f, "freed={e}"),
            Detail::Swap { primary, backing } => write!(f, "primary={primary} backing={backing}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub instant: u64,
    pub kind: TraceKind,
    pub pid: ProcId,
    pub detail: Detail,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

pub const TRACE_HEADER: &str = "instant,event,pid,detail";

impl Trace {
    /// CSV with header `instant,event,pid,detail`, one event per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.events.len() + 1));
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for e in &self.events {
            let _ = writeln!(out, "{}", csv_line(e));
        }
        out
    }

    /// CPU slices, one per dispatch.
    pub fn schedule(&self) -> Schedule {
        Schedule::new(
            self.events
                .iter()
                .filter_map(|e| match e.detail {
                    Detail::Run { len, .. } if e.kind == TraceKind::Dispatch => {
                        Some(Slice { pid: e.pid, start: e.instant, len })
                    }
                    _ => None,
                })
                .collect(),
        )
    }
}

pub fn csv_line(e: &TraceEvent) -> String {
    format!("{},{},{},{}", e.instant, e.kind.as_str(), e.pid, e.detail)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProcMetrics {
    pub arrival: u64,
    pub time: u64,
    pub completion: u64,
    pub turnaround: u64,
    pub waiting: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub per_procedure: BTreeMap<ProcId, ProcMetrics>,
    /// Instant the last procedure completed.
    pub makespan: u64,
    pub mean_waiting: f64,
    pub mean_turnaround: f64,
    /// Mean over allocations of largest free extent / total free, sampled
    /// after each allocation that left free space. `None` without samples.
    pub external_fragmentation: Option<f64>,
    /// Granted-but-unused units summed over allocations.
    pub internal_fragmentation: u64,
}

impl Metrics {
    pub fn waits(&self) -> Vec<u64> {
        self.per_procedure.values().map(|m| m.waiting).collect()
    }

    /// `key=value` lines: aggregates first, then per-procedure values.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "procedures={}", self.per_procedure.len());
        let _ = writeln!(out, "makespan={}", self.makespan);
        let _ = writeln!(out, "mean_waiting={:.6}", self.mean_waiting);
        let _ = writeln!(out, "mean_turnaround={:.6}", self.mean_turnaround);
        match self.external_fragmentation {
            Some(x) => {
                let _ = writeln!(out, "external_fragmentation={x:.6}");
            }
            None => out.push_str("external_fragmentation=none\n"),
        }
        let _ = writeln!(out, "internal_fragmentation={}", self.internal_fragmentation);
        for (pid, m) in &self.per_procedure {
            let _ = writeln!(out, "waiting.{pid}={}", m.waiting);
            let _ = writeln!(out, "turnaround.{pid}={}", m.turnaround);
        }
        out
    }
}

/// Derives metrics from a finished trace.
pub fn metrics(trace: &Trace) -> Result<Metrics, SimError> {
    let mut arrivals: BTreeMap<ProcId, (u64, u64)> = BTreeMap::new();
    let mut completions: BTreeMap<ProcId, u64> = BTreeMap::new();
    let mut samples = Vec::new();
    let mut internal = 0;
    for e in &trace.events {
        match (&e.kind, &e.detail) {
            (TraceKind::Arrive, Detail::Demand { time, .. }) => {
                arrivals.insert(e.pid, (e.instant, *time));
            }
            (TraceKind::Complete, _) => {
                completions.insert(e.pid, e.instant);
            }
            (TraceKind::Allocate, Detail::Grant { waste, free, largest_free, .. }) => {
                internal += waste;
                if *free > 0 {
                    samples.push(*largest_free as f64 / *free as f64);
                }
            }
            _ => {}
        }
    }
    let missing: Vec<ProcId> = arrivals.keys().filter(|p| !completions.contains_key(p)).copied().collect();
    if !missing.is_empty() {
        return Err(SimError::Incomplete(missing));
    }
    let per_procedure: BTreeMap<ProcId, ProcMetrics> = arrivals
        .iter()
        .map(|(&pid, &(arrival, time))| {
            let completion = completions[&pid];
            let turnaround = completion - arrival;
            (pid, ProcMetrics { arrival, time, completion, turnaround, waiting: turnaround.saturating_sub(time) })
        })
        .collect();
    let n = per_procedure.len().max(1) as f64;
    Ok(Metrics {
        makespan: completions.values().copied().max().unwrap_or(0),
        mean_waiting: per_procedure.values().map(|m| m.waiting as f64).sum::<f64>() / n,
        mean_turnaround: per_procedure.values().map(|m| m.turnaround as f64).sum::<f64>() / n,
        external_fragmentation: (!samples.is_empty()).then(|| samples.iter().sum::<f64>() / samples.len() as f64),
        internal_fragmentation: internal,
        per_procedure,
    })
}

#[derive(Debug, Clone)]
struct Job {
    proc: Procedure,
    remaining: u64,
}

#[derive(Debug, Clone)]
struct Running {
    job: Job,
    end: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: Trace,
    pub metrics: Metrics,
    pub bindings: BindingGraph,
}

/// Step-wise simulator over an arrival-ordered procedure source, which may
/// be unbounded.
pub struct Simulator<I: Iterator<Item = Procedure>> {
    cfg: SimConfig,
    source: Peekable<I>,
    last_arrival: Option<u64>,
    clock: u64,
    memory: MemoryState,
    backing: BackingStore,
    backlog: VecDeque<Procedure>,
    swap_tried: BTreeSet<ProcId>,
    swapped: VecDeque<Job>,
    ready: Vec<Job>,
    running: Option<Running>,
    last_slice_end: u64,
    pending: Vec<TraceEvent>,
    trace: Trace,
    bindings: BindingGraph,
}

impl<I: Iterator<Item = Procedure>> Simulator<I> {
    pub fn new(source: I, cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let memory = MemoryState::new(cfg.memory, cfg.allocator)?;
        let mut bindings = BindingGraph::new();
        if matches!(cfg.allocator, AllocatorKind::Paging { .. }) {
            bindings.bind(FRAMES_SYMBOL, 0)?;
        }
        Ok(Simulator {
            backing: BackingStore::new(cfg.backing),
            cfg,
            source: source.peekable(),
            last_arrival: None,
            clock: 0,
            memory,
            backlog: VecDeque::new(),
            swap_tried: BTreeSet::new(),
            swapped: VecDeque::new(),
            ready: Vec::new(),
            running: None,
            last_slice_end: 0,
            pending: Vec::new(),
            trace: Trace::default(),
            bindings,
        })
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn bindings(&self) -> &BindingGraph {
        &self.bindings
    }

    pub fn memory(&self) -> &MemoryState {
        &self.memory
    }

    /// Buffers an event; in strict mode the state it leaves behind is checked.
    fn emit(&mut self, kind: TraceKind, pid: ProcId, detail: Detail) -> Result<(), SimError> {
        self.pending.push(TraceEvent { instant: self.clock, kind, pid, detail });
        if self.cfg.strict {
            self.check()?;
        }
        Ok(())
    }

    fn next_arrival(&mut self) -> Result<Option<u64>, SimError> {
        let Some(next) = self.source.peek() else { return Ok(None) };
        if let Some(prev) = self.last_arrival {
            if next.arrival < prev {
                return Err(SchedError::StreamOrder { id: next.id, arrival: next.arrival, previous: prev }.into());
            }
        }
        Ok(Some(next.arrival))
    }

    fn is_done(&mut self) -> Result<bool, SimError> {
        Ok(self.running.is_none()
            && self.ready.is_empty()
            && self.backlog.is_empty()
            && self.swapped.is_empty()
            && self.next_arrival()?.is_none())
    }

    fn record_allocation(&mut self, pid: ProcId) -> Result<(), SimError> {
        if matches!(self.cfg.allocator, AllocatorKind::Paging { .. }) {
            self.bindings.bind(pages_symbol(pid), self.clock)?;
            record_page_table(&mut self.bindings, pid, self.clock)?;
        } else {
            self.bindings.bind(extent_symbol(pid), self.clock)?;
        }
        Ok(())
    }

    fn memory_symbol(&self, pid: ProcId) -> String {
        if matches!(self.cfg.allocator, AllocatorKind::Paging { .. }) {
            page_table_symbol(pid)
        } else {
            extent_symbol(pid)
        }
    }

    fn grant_detail(&self, grant: &Grant, p: &Procedure) -> Detail {
        Detail::Grant {
            grant: grant.to_string(),
            waste: grant.units().saturating_sub(p.size),
            free: self.memory.total_free(),
            largest_free: self.memory.largest_free(),
        }
    }

    fn finish_slice(&mut self) -> Result<(), SimError> {
        let Some(run) = self.running.take_if(|r| r.end == self.clock) else { return Ok(()) };
        let Running { mut job, .. } = run;
        job.proc = domain::passivate(&job.proc)
            .map_err(|e| SimError::Invariant { instant: self.clock, what: e.to_string() })?;
        let pid = job.proc.id;
        if job.remaining == 0 {
            self.emit(TraceKind::Complete, pid, Detail::None)?;
            let grant = self.memory.try_deallocate(pid)?;
            self.emit(TraceKind::Deallocate, pid, Detail::Freed(grant.to_string()))?;
        } else {
            self.emit(TraceKind::Preempt, pid, Detail::Remaining(job.remaining))?;
            self.ready.push(job);
        }
        Ok(())
    }

    fn swap_ins(&mut self) -> Result<(), SimError> {
        while let Some(job) = self.swapped.front() {
            let backing_extent = self.backing.record(job.proc.id).map(|r| r.backing).unwrap_or(Extent::at(0, 0));
            match swap_in(&self.memory, &self.backing, &job.proc) {
                Ok((memory, backing, grant)) => {
                    self.memory = memory;
                    self.backing = backing;
                    let job = self.swapped.pop_front().unwrap();
                    let pid = job.proc.id;
                    self.emit(
                        TraceKind::SwapIn,
                        pid,
                        Detail::Swap { primary: grant.to_string(), backing: backing_extent },
                    )?;
                    self.record_allocation(pid)?;
                    self.ready.push(job);
                }
                Err(SwapError::NoSpace(_)) => break,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    fn arrivals(&mut self) -> Result<(), SimError> {
        while self.next_arrival()?.is_some_and(|a| a <= self.clock) {
            let p = self.source.next().expect("peeked");
            self.last_arrival = Some(p.arrival);
            p.validate().map_err(|e| SimError::Config(e.to_string()))?;
            if p.size > self.cfg.memory + self.cfg.backing || self.memory.footprint(&p).is_none() {
                return Err(SimError::Unrunnable {
                    pid: p.id,
                    size: p.size,
                    memory: self.cfg.memory,
                    backing: self.cfg.backing,
                });
            }
            if self.cfg.policy == Policy::Priority && p.priority.is_none() {
                return Err(SchedError::Combinator(crate::combinators::CombError::MissingPriority(p.id)).into());
            }
            self.emit(TraceKind::Arrive, p.id, Detail::Demand { size: p.size, time: p.time })?;
            self.backlog.push_back(p);
        }
        Ok(())
    }

    fn admissions(&mut self) -> Result<(), SimError> {
        let discipline = self.memory.discipline();
        while let Some(p) = self.backlog.front().cloned() {
            let mut result = self.memory.try_allocate(&discipline, &p);
            if matches!(result, Err(AllocError::AllocationFailure { .. })) && self.swap_tried.insert(p.id) {
                let candidates: Vec<Procedure> = self.ready.iter().map(|j| j.proc.clone()).collect();
                match swap_out(&self.memory, &self.backing, &candidates, self.cfg.victim) {
                    Ok((memory, backing, record)) => {
                        self.memory = memory;
                        self.backing = backing;
                        let idx = self.ready.iter().position(|j| j.proc.id == record.pid).expect("victim is ready");
                        let victim = self.ready.remove(idx);
                        let primary = record.released.iter().map(Extent::to_string).collect::<Vec<_>>().join(";");
                        self.emit(
                            TraceKind::SwapOut,
                            record.pid,
                            Detail::Swap {
                                primary: if primary.is_empty() { "none".into() } else { primary },
                                backing: record.backing,
                            },
                        )?;
                        self.swapped.push_back(victim);
                        result = self.memory.try_allocate(&discipline, &p);
                    }
                    Err(SwapError::NoVictim | SwapError::BackingFull { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            match result {
                Ok(grant) => {
                    self.backlog.pop_front();
                    self.emit(TraceKind::Admit, p.id, Detail::None)?;
                    let detail = self.grant_detail(&grant, &p);
                    self.emit(TraceKind::Allocate, p.id, detail)?;
                    self.record_allocation(p.id)?;
                    let remaining = p.time;
                    self.ready.push(Job { proc: p, remaining });
                }
                Err(AllocError::AllocationFailure { .. }) => break,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    fn dispatch(&mut self) -> Result<(), SimError> {
        if self.running.is_some() || self.ready.is_empty() {
            return Ok(());
        }
        let set = ProcedureSet::new(self.ready.iter().map(|j| j.proc.clone()).collect())
            .map_err(|e| SimError::Config(e.to_string()))?;
        let chosen = self.cfg.policy.discipline().pick(&set).map_err(SchedError::from)?;
        let idx = self.ready.iter().position(|j| j.proc.id == chosen.id).expect("selection is a member");
        let mut job = self.ready.remove(idx);
        let pid = job.proc.id;
        if !self.memory.is_resident(pid) {
            return Err(SimError::Invariant {
                instant: self.clock,
                what: format!("procedure {pid} dispatched while not resident"),
            });
        }
        let len = self.cfg.policy.slice_len(&job.proc, job.remaining);
        let symbol = self.memory_symbol(pid);
        self.bindings.use_symbol(symbol.clone(), self.clock)?;
        let context = Context::from([("memory".to_string(), symbol)]);
        job.proc = domain::activate(&job.proc, context)
            .map_err(|e| SimError::Invariant { instant: self.clock, what: e.to_string() })?;
        job.remaining -= len;
        self.emit(TraceKind::Dispatch, pid, Detail::Run { len, remaining: job.remaining })?;
        if self.cfg.strict && self.clock < self.last_slice_end {
            return Err(SimError::Invariant {
                instant: self.clock,
                what: format!("slice for {pid} overlaps the previous one"),
            });
        }
        self.last_slice_end = self.clock + len;
        self.running = Some(Running { job, end: self.clock + len });
        Ok(())
    }

    fn flush(&mut self) {
        let mut batch = std::mem::take(&mut self.pending);
        batch.sort_by_key(|e| e.kind.rank());
        self.trace.events.extend(batch);
    }

    fn check(&self) -> Result<(), SimError> {
        let fail = |what: String| SimError::Invariant { instant: self.clock, what };
        self.memory.check_invariants().map_err(|e| fail(format!("primary memory: {e}")))?;
        self.backing.memory().check_invariants().map_err(|e| fail(format!("backing store: {e}")))?;
        for job in &self.swapped {
            if self.memory.is_resident(job.proc.id) {
                return Err(fail(format!("swapped-out procedure {} is resident", job.proc.id)));
            }
        }
        if let Err(v) = self.bindings.validate() {
            return Err(fail(format!("binding: {}", v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))));
        }
        Ok(())
    }

    /// Handles every event at the current instant and advances the clock.
    /// Returns `false` once all work is done.
    pub fn step(&mut self) -> Result<bool, SimError> {
        if self.is_done()? {
            return Ok(false);
        }
        self.finish_slice()?;
        self.swap_ins()?;
        self.arrivals()?;
        self.admissions()?;
        self.dispatch()?;
        self.flush();

        let next_end = self.running.as_ref().map(|r| r.end);
        let next_arrival = self.next_arrival()?;
        match (next_end, next_arrival) {
            (Some(e), Some(a)) => self.clock = e.min(a),
            (Some(e), None) => self.clock = e,
            (None, Some(a)) => self.clock = a,
            (None, _) => {
                if self.is_done()? {
                    return Ok(false);
                }
                return Err(SimError::Stalled(self.clock));
            }
        }
        Ok(true)
    }

    /// Runs until everything that has arrived by `horizon` is handled and
    /// the clock passes `horizon`, or the source is exhausted and all work
    /// is done.
    pub fn run_until(&mut self, horizon: u64) -> Result<(), SimError> {
        while self.clock <= horizon && self.step()? {}
        Ok(())
    }

    pub fn run_to_end(mut self) -> Result<SimOutput, SimError> {
        while self.step()? {}
        self.finish()
    }

    /// Derives metrics and checks the binding log once all work is done.
    pub fn finish(mut self) -> Result<SimOutput, SimError> {
        if !self.is_done()? {
            return Err(SimError::Stalled(self.clock));
        }
        let metrics = metrics(&self.trace)?;
        if let Err(v) = self.bindings.validate() {
            return Err(SimError::Invariant {
                instant: self.clock,
                what: format!("binding: {}", v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")),
            });
        }
        Ok(SimOutput { trace: self.trace, metrics, bindings: self.bindings })
    }
}

/// Simulates `workload` to completion.
pub fn run(workload: &ProcedureSet, cfg: &SimConfig) -> Result<SimOutput, SimError> {
    cfg.policy.check(workload)?;
    let mut members = workload.members().to_vec();
    members.sort_by_key(|p| (p.arrival, p.id));
    Simulator::new(members.into_iter(), cfg.clone())?.run_to_end()
}
