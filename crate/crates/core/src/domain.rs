//! Domain types shared by every other module: addresses, resource sets,
//! extents, procedures and the procedure lifecycle.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("malformed extent: start {start} > end {end}")]
    MalformedExtent { start: u64, end: u64 },
    #[error("index {index} out of range 1..={len}")]
    OutOfBounds { index: usize, len: usize },
    #[error("illegal transition: procedure {id} is already {state}")]
    IllegalTransition { id: ProcId, state: LifecycleState },
    #[error("invalid procedure {id}: {reason}")]
    InvalidProcedure { id: ProcId, reason: String },
    #[error("duplicate procedure id {0}")]
    DuplicateId(ProcId),
}

/// Unique natural number attached to every resource unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub u64);

impl Address {
    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for Address {
    fn from(v: u64) -> Self {
        Address(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResourceKind {
    /// Memory: a finite pool whose units return to the pool after use.
    FiniteReusable,
    /// CPU time: every instant can be handed out once and never again.
    InfiniteNonReusable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResourceUnit {
    address: Address,
}

/// Returns the address of a resource unit.
pub fn addr(unit: &ResourceUnit) -> Address {
    unit.address
}

/// An addr-ordered countable set of resource units.
///
/// Units are numbered consecutively from 0, so the unit at position `i`
/// has address `i`. A finite set holds exactly `capacity` units; the
/// infinite kind enumerates without bound.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResourceSet {
    kind: ResourceKind,
    capacity: Option<u64>,
}

impl ResourceSet {
    pub fn memory(capacity: u64) -> Self {
        ResourceSet { kind: ResourceKind::FiniteReusable, capacity: Some(capacity) }
    }

    pub fn cpu_time() -> Self {
        ResourceSet { kind: ResourceKind::InfiniteNonReusable, capacity: None }
    }

    pub fn kind(&self) -> ResourceKind {
        self.kind
    }

    /// `None` for the infinite kind.
    pub fn capacity(&self) -> Option<u64> {
        self.capacity
    }

    /// The unit at 0-based position `index`.
    pub fn unit(&self, index: u64) -> Option<ResourceUnit> {
        match self.capacity {
            Some(c) if index >= c => None,
            _ => Some(ResourceUnit { address: Address(index) }),
        }
    }

    pub fn units(&self) -> impl Iterator<Item = ResourceUnit> + '_ {
        let end = self.capacity.unwrap_or(u64::MAX);
        (0..end).map(|a| ResourceUnit { address: Address(a) })
    }

    /// The whole set as one extent (finite kinds only).
    pub fn full_extent(&self) -> Option<Extent> {
        self.capacity.map(|c| Extent { start: Address(0), end: Address(c) })
    }

    pub fn contains_extent(&self, e: &Extent) -> bool {
        e.start <= e.end && self.capacity.is_none_or(|c| e.end.0 <= c)
    }
}

/// Half-open contiguous subset `[start, end)` of a resource set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Extent {
    pub start: Address,
    pub end: Address,
}

impl Extent {
    pub fn new(start: u64, end: u64) -> Result<Self, CoreError> {
        if start > end {
            return Err(CoreError::MalformedExtent { start, end });
        }
        Ok(Extent { start: Address(start), end: Address(end) })
    }

    /// Extent of `len` units beginning at `start`.
    pub fn at(start: u64, len: u64) -> Self {
        Extent { start: Address(start), end: Address(start + len) }
    }

    /// Size of a well-formed extent. Use [`extent_size`] for unchecked input.
    pub fn len(&self) -> u64 {
        self.end.0.saturating_sub(self.start.0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, a: Address) -> bool {
        self.start <= a && a < self.end
    }

    pub fn covers(&self, other: &Extent) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn intersects(&self, other: &Extent) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for Extent {
    // No comma: extents appear inside CSV fields.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start.0, self.end.0)
    }
}

/// `end - start`, the number of units in `e`.
pub fn extent_size(e: &Extent) -> Result<u64, CoreError> {
    if e.start > e.end {
        return Err(CoreError::MalformedExtent { start: e.start.0, end: e.end.0 });
    }
    Ok(e.end.0 - e.start.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ProcId(pub u32);

impl fmt::Display for ProcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LifecycleState {
    /// Stored program plus captured context (a file).
    #[default]
    Passive,
    /// Under interpretation (a process).
    Active,
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LifecycleState::Passive => f.write_str("passive"),
            LifecycleState::Active => f.write_str("active"),
        }
    }
}

/// Static workload tag used by variable-quantum CPU disciplines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorkClass {
    IoBound,
    CpuBound,
}

impl WorkClass {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkClass::IoBound => "IoBound",
            WorkClass::CpuBound => "CpuBound",
        }
    }
}

/// Opaque symbol-to-value bindings a process is interpreted under.
pub type Context = BTreeMap<String, String>;

/// A program together with its memory demand (`size`) and CPU demand
/// (`time`), plus workload tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Procedure {
    pub id: ProcId,
    pub size: u64,
    pub time: u64,
    pub priority: Option<u64>,
    pub owner: Option<String>,
    pub arrival: u64,
    pub class: Option<WorkClass>,
    /// Segment lengths for segmented allocation; must sum to `size`.
    pub segments: Option<Vec<u64>>,
    state: LifecycleState,
    context: Context,
}

impl Procedure {
    /// A passive procedure with empty context. `time` must be at least 1.
    pub fn new(id: u32, size: u64, time: u64) -> Result<Self, CoreError> {
        let p = Procedure {
            id: ProcId(id),
            size,
            time,
            priority: None,
            owner: None,
            arrival: 0,
            class: None,
            segments: None,
            state: LifecycleState::Passive,
            context: Context::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn arriving_at(mut self, arrival: u64) -> Self {
        self.arrival = arrival;
        self
    }

    pub fn with_priority(mut self, priority: u64) -> Self {
        self.priority = Some(priority);
        self
    }

    pub fn with_owner(mut self, owner: impl Into<String>) -> Self {
        self.owner = Some(owner.into());
        self
    }

    pub fn with_class(mut self, class: WorkClass) -> Self {
        self.class = Some(class);
        self
    }

    pub fn with_segments(mut self, segments: Vec<u64>) -> Self {
        self.segments = Some(segments);
        self
    }

    pub fn state(&self) -> LifecycleState {
        self.state
    }

    pub fn context(&self) -> &Context {
        &self.context
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let invalid = |reason: &str| CoreError::InvalidProcedure { id: self.id, reason: reason.into() };
        if self.time < 1 {
            return Err(invalid("time must be ≥ 1"));
        }
        if let Some(segs) = &self.segments {
            if segs.contains(&0) {
                return Err(invalid("segment lengths must be ≥ 1"));
            }
            if segs.iter().sum::<u64>() != self.size {
                return Err(invalid("segment lengths must sum to size"));
            }
        }
        Ok(())
    }
}

/// Switches a procedure between its passive and active forms.
///
/// Activation installs `context` as the bindings the process runs under.
/// Passivation stores `context` (the process's context at that instant)
/// back into the file.
pub fn set_state(p: &Procedure, target: LifecycleState, context: Context) -> Result<Procedure, CoreError> {
    if p.state == target {
        return Err(CoreError::IllegalTransition { id: p.id, state: p.state });
    }
    let mut next = p.clone();
    next.state = target;
    next.context = context;
    Ok(next)
}

pub fn activate(p: &Procedure, context: Context) -> Result<Procedure, CoreError> {
    set_state(p, LifecycleState::Active, context)
}

/// Passivates, keeping the context the process was running under.
pub fn passivate(p: &Procedure) -> Result<Procedure, CoreError> {
    set_state(p, LifecycleState::Passive, p.context.clone())
}

/// Procedures in arrival order (unless reorganized); ids are unique.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProcedureSet {
    members: Vec<Procedure>,
}

impl ProcedureSet {
    pub fn new(members: Vec<Procedure>) -> Result<Self, CoreError> {
        let mut seen = BTreeSet::new();
        for p in &members {
            if !seen.insert(p.id) {
                return Err(CoreError::DuplicateId(p.id));
            }
        }
        Ok(ProcedureSet { members })
    }

    /// Builds a set sorted by `(arrival, id)`.
    pub fn arrival_ordered(mut members: Vec<Procedure>) -> Result<Self, CoreError> {
        members.sort_by_key(|p| (p.arrival, p.id));
        Self::new(members)
    }

    pub fn empty() -> Self {
        ProcedureSet::default()
    }

    pub fn members(&self) -> &[Procedure] {
        &self.members
    }

    pub fn into_members(self) -> Vec<Procedure> {
        self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn get(&self, id: ProcId) -> Option<&Procedure> {
        self.members.iter().find(|p| p.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Procedure> {
        self.members.iter()
    }

    // Reorderings from organize keep ids unique, so no recheck.
    pub(crate) fn from_reordered(members: Vec<Procedure>) -> Self {
        ProcedureSet { members }
    }
}

impl<'a> IntoIterator for &'a ProcedureSet {
    type Item = &'a Procedure;
    type IntoIter = std::slice::Iter<'a, Procedure>;
    fn into_iter(self) -> Self::IntoIter {
        self.members.iter()
    }
}

/// 1-indexed component access: `project(1, p)` is the size, `project(2, p)`
/// the time; on a set, `project(i, P)` is the i-th member.
pub trait Project {
    type Output;
    fn project(&self, k: usize) -> Result<Self::Output, CoreError>;
}

impl Project for Procedure {
    type Output = u64;
    fn project(&self, k: usize) -> Result<u64, CoreError> {
        match k {
            1 => Ok(self.size),
            2 => Ok(self.time),
            _ => Err(CoreError::OutOfBounds { index: k, len: 2 }),
        }
    }
}

impl Project for ProcedureSet {
    type Output = Procedure;
    fn project(&self, k: usize) -> Result<Procedure, CoreError> {
        if k == 0 || k > self.members.len() {
            return Err(CoreError::OutOfBounds { index: k, len: self.members.len() });
        }
        Ok(self.members[k - 1].clone())
    }
}

pub fn project<T: Project>(k: usize, x: &T) -> Result<T::Output, CoreError> {
    x.project(k)
}

/// One contiguous run of a procedure on the CPU: `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Slice {
    pub pid: ProcId,
    pub start: u64,
    pub len: u64,
}

impl Slice {
    pub fn end(&self) -> u64 {
        self.start + self.len
    }
}

/// An allocation of CPU instants to procedures, in time order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schedule {
    pub slices: Vec<Slice>,
}

impl Schedule {
    pub fn new(slices: Vec<Slice>) -> Self {
        Schedule { slices }
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn pids(&self) -> Vec<ProcId> {
        self.slices.iter().map(|s| s.pid).collect()
    }

    /// Procedures in order of first dispatch.
    pub fn order(&self) -> Vec<ProcId> {
        let mut seen = BTreeSet::new();
        self.slices.iter().filter(|s| seen.insert(s.pid)).map(|s| s.pid).collect()
    }

    pub fn completion(&self, pid: ProcId) -> Option<u64> {
        self.slices.iter().filter(|s| s.pid == pid).map(Slice::end).max()
    }

    pub fn units_for(&self, pid: ProcId) -> u64 {
        self.slices.iter().filter(|s| s.pid == pid).map(|s| s.len).sum()
    }

    pub fn makespan(&self) -> u64 {
        self.slices.iter().map(Slice::end).max().unwrap_or(0)
    }

    /// Waiting time (`completion - arrival - time`) per procedure, in set order.
    pub fn waits(&self, set: &ProcedureSet) -> Vec<u64> {
        set.iter().map(|p| self.completion(p.id).map_or(0, |c| c - p.arrival - p.time)).collect()
    }

    pub fn total_wait(&self, set: &ProcedureSet) -> u64 {
        self.waits(set).iter().sum()
    }

    /// First pair of slices sharing a CPU instant, if any. Each instant of
    /// CPU time can be handed out only once.
    pub fn overlapping_pair(&self) -> Option<(Slice, Slice)> {
        let mut sorted = self.slices.clone();
        sorted.sort_by_key(|s| (s.start, s.len));
        sorted.windows(2).find(|w| w[0].end() > w[1].start).map(|w| (w[0], w[1]))
    }
}
