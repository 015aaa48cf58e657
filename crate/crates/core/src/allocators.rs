//! Memory disciplines.
//!
//! A [`MemoryState`] tracks one finite reusable resource: which extents each
//! procedure holds and which are free. How the free space is organized
//! depends on the [`AllocatorKind`]:
//!
//! * first-fit and segmentation keep a coalesced, addr-ordered free list;
//! * fixed partitions and paging cut memory into equal aligned units once
//!   and hand out whole units (any tail shorter than a unit is residue);
//! * buddy allocation keeps a [`BuddyTree`].
//!
//! Free functions ([`allocate`], [`deallocate`], ...) are state-in/state-out.
//! The `try_*` methods do the same work in place and leave the state
//! untouched on error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::binding::{BindingError, BindingGraph};
use crate::combinators::{
    chunk_fixed, compose, organize_fixed_partition, BuddyTree, CombError, Discipline, Organize, Select, Selection,
    Subject,
};
use crate::domain::{Address, Extent, ProcId, Procedure, ResourceSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocError {
    #[error("no room for {demand} units for procedure {pid}")]
    AllocationFailure { pid: ProcId, demand: u64 },
    #[error("procedure {0} holds no memory")]
    NotFound(ProcId),
    #[error("procedure {0} already holds memory")]
    AlreadyAllocated(ProcId),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("discipline {discipline} does not fit a {kind} memory")]
    DisciplineMismatch { discipline: Discipline, kind: AllocatorKind },
    #[error("procedure {0} has no owner")]
    Unowned(ProcId),
    #[error(transparent)]
    Combinator(#[from] CombError),
    #[error(transparent)]
    Binding(#[from] BindingError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SwapError {
    #[error("no resident procedure can be swapped out")]
    NoVictim,
    #[error("backing store cannot hold {demand} units for procedure {pid}")]
    BackingFull { pid: ProcId, demand: u64 },
    #[error("no primary memory for procedure {0} yet; retry after memory is freed")]
    NoSpace(ProcId),
    #[error("procedure {0} is not swapped out")]
    NotSwapped(ProcId),
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("address {address} unmapped at layer {layer}")]
pub struct TranslationFault {
    /// 1-based position of the faulting layer in the chain.
    pub layer: usize,
    pub address: Address,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvariantViolation {
    #[error("free {free} + allocated {allocated} + residue {residue} != capacity {capacity}")]
    Conservation { free: u64, allocated: u64, residue: u64, capacity: u64 },
    #[error("extents {0} and {1} overlap")]
    Overlap(Extent, Extent),
    #[error("extent {0} lies outside the resource")]
    OutOfRange(Extent),
    #[error("buddy tree: {0}")]
    Buddy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AllocatorKind {
    FirstFit,
    Fixed { unit: u64 },
    Buddy,
    Paging { page_size: u64 },
    Segmentation,
}

impl fmt::Display for AllocatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AllocatorKind::FirstFit => f.write_str("first-fit"),
            AllocatorKind::Fixed { unit } => write!(f, "fixed({unit})"),
            AllocatorKind::Buddy => f.write_str("buddy"),
            AllocatorKind::Paging { page_size } => write!(f, "paging({page_size})"),
            AllocatorKind::Segmentation => f.write_str("segmentation"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Layout {
    Contiguous,
    Partitioned { unit: u64, residue: Vec<Extent> },
    Buddy(BuddyTree),
}

/// One page of a paginated procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageDescriptor {
    pub number: u64,
    /// Units of the procedure on this page; only the last page may be short.
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pagination {
    pub pid: ProcId,
    pub page_size: u64,
    pub pages: Vec<PageDescriptor>,
    /// Unused units on the last page.
    pub internal_fragmentation: u64,
}

/// Cuts a procedure's memory demand into equal pages.
pub fn paginate(p: &Procedure, page_size: u64) -> Result<Pagination, AllocError> {
    if page_size == 0 {
        return Err(AllocError::Parameter("page size must be ≥ 1".into()));
    }
    let chunks = chunk_fixed(p.size, page_size)?;
    let pages: Vec<PageDescriptor> =
        chunks.iter().enumerate().map(|(i, &len)| PageDescriptor { number: i as u64, len }).collect();
    let internal_fragmentation = pages.len() as u64 * page_size - p.size;
    Ok(Pagination { pid: p.id, page_size, pages, internal_fragmentation })
}

/// Page number → frame number, injective.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageMap {
    pub page_size: u64,
    pub entries: BTreeMap<u64, u64>,
}

impl PageMap {
    pub fn page_count(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn frames(&self) -> Vec<Extent> {
        self.entries.values().map(|&f| Extent::at(f * self.page_size, self.page_size)).collect()
    }

    pub fn translate(&self, logical: Address) -> Result<Address, TranslationFault> {
        let (page, offset) = (logical.0 / self.page_size, logical.0 % self.page_size);
        self.entries
            .get(&page)
            .map(|f| Address(f * self.page_size + offset))
            .ok_or(TranslationFault { layer: 1, address: logical })
    }

    /// The page table as one address-level virtualization hop.
    pub fn to_layer(&self) -> BindingLayer {
        let mut map = BTreeMap::new();
        for (&page, &frame) in &self.entries {
            for off in 0..self.page_size {
                map.insert(Address(page * self.page_size + off), Address(frame * self.page_size + off));
            }
        }
        BindingLayer { map }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub id: u32,
    pub len: u64,
    pub base: Address,
}

impl Segment {
    pub fn extent(&self) -> Extent {
        Extent::at(self.base.0, self.len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SegmentMap {
    pub segments: Vec<Segment>,
}

impl SegmentMap {
    pub fn total_len(&self) -> u64 {
        self.segments.iter().map(|s| s.len).sum()
    }

    /// Maps the procedure's logical space (segments laid end to end in
    /// order) onto the segment bases.
    pub fn to_layer(&self) -> BindingLayer {
        let mut map = BTreeMap::new();
        let mut logical = 0;
        for s in &self.segments {
            for off in 0..s.len {
                map.insert(Address(logical + off), Address(s.base.0 + off));
            }
            logical += s.len;
        }
        BindingLayer { map }
    }
}

/// What a procedure received from an allocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Grant {
    /// Zero-size procedures hold nothing.
    Empty,
    Contiguous(Extent),
    Pages(PageMap),
    Segments(SegmentMap),
}

impl Grant {
    pub fn extents(&self) -> Vec<Extent> {
        match self {
            Grant::Empty => Vec::new(),
            Grant::Contiguous(e) => vec![*e],
            Grant::Pages(pm) => pm.frames(),
            Grant::Segments(sm) => sm.segments.iter().map(Segment::extent).collect(),
        }
    }

    pub fn units(&self) -> u64 {
        self.extents().iter().map(Extent::len).sum()
    }
}

impl fmt::Display for Grant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.extents().iter().map(Extent::to_string).collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(";"))
        }
    }
}

/// Injective partial map between two address spaces: one virtualization hop.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BindingLayer {
    map: BTreeMap<Address, Address>,
}

impl BindingLayer {
    pub fn new(pairs: impl IntoIterator<Item = (u64, u64)>) -> Result<Self, AllocError> {
        let mut map = BTreeMap::new();
        let mut targets = BTreeSet::new();
        for (a, b) in pairs {
            if !targets.insert(b) {
                return Err(AllocError::Parameter(format!("layer maps two addresses onto {b}")));
            }
            if map.insert(Address(a), Address(b)).is_some() {
                return Err(AllocError::Parameter(format!("layer maps {a} twice")));
            }
        }
        Ok(BindingLayer { map })
    }

    /// Checks the layer against the sizes of its source and target sets.
    /// The two sizes need not match.
    pub fn check_bounds(&self, source: &ResourceSet, target: &ResourceSet) -> Result<(), AllocError> {
        let inside = |set: &ResourceSet, a: Address| set.capacity().is_none_or(|c| a.0 < c);
        match self.map.iter().find(|(a, b)| !inside(source, **a) || !inside(target, **b)) {
            Some((a, b)) => Err(AllocError::Parameter(format!("mapping {a} -> {b} leaves its resource set"))),
            None => Ok(()),
        }
    }

    pub fn get(&self, a: Address) -> Option<Address> {
        self.map.get(&a).copied()
    }

    pub fn domain(&self) -> impl Iterator<Item = Address> + '_ {
        self.map.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Follows `a` through every layer in turn; an empty chain is the identity.
pub fn translate(a: Address, chain: &[BindingLayer]) -> Result<Address, TranslationFault> {
    chain
        .iter()
        .enumerate()
        .try_fold(a, |cur, (i, layer)| layer.get(cur).ok_or(TranslationFault { layer: i + 1, address: cur }))
}

/// Binding-graph symbol for the framing of primary memory.
pub const FRAMES_SYMBOL: &str = "frames";

pub fn pages_symbol(pid: ProcId) -> String {
    format!("pages/{pid}")
}

pub fn page_table_symbol(pid: ProcId) -> String {
    format!("page_table/{pid}")
}

/// Memory held by one procedure under a non-paged allocator.
pub fn extent_symbol(pid: ProcId) -> String {
    format!("memory/{pid}")
}

/// Which resident procedure to evict when space runs out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum VictimPolicy {
    /// Lowest priority (absent = 0), then largest size, then highest id.
    #[default]
    LowPriorityLargest,
    /// Largest size, then highest id.
    Largest,
    /// Highest id.
    Newest,
}

impl VictimPolicy {
    pub fn choose(&self, candidates: &[Procedure]) -> Option<ProcId> {
        let key = |p: &Procedure| match self {
            VictimPolicy::LowPriorityLargest => (u64::MAX - p.priority.unwrap_or(0), p.size, p.id),
            VictimPolicy::Largest => (0, p.size, p.id),
            VictimPolicy::Newest => (0, 0, p.id),
        };
        candidates.iter().max_by_key(|p| key(p)).map(|p| p.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapRecord {
    pub pid: ProcId,
    /// Where the procedure's image sits in the backing store.
    pub backing: Extent,
    /// Primary extents released by the swap.
    pub released: Vec<Extent>,
}

/// Secondary storage used to extend primary memory: a first-fit managed
/// resource of its own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackingStore {
    memory: MemoryState,
    records: BTreeMap<ProcId, SwapRecord>,
}

impl BackingStore {
    pub fn new(capacity: u64) -> Self {
        BackingStore {
            memory: MemoryState::new(capacity, AllocatorKind::FirstFit).expect("first-fit accepts any capacity"),
            records: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.memory.capacity()
    }

    pub fn record(&self, pid: ProcId) -> Option<&SwapRecord> {
        self.records.get(&pid)
    }

    pub fn swapped(&self) -> impl Iterator<Item = ProcId> + '_ {
        self.records.keys().copied()
    }

    pub fn memory(&self) -> &MemoryState {
        &self.memory
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryState {
    capacity: u64,
    kind: AllocatorKind,
    layout: Layout,
    free: Vec<Extent>,
    allocated: BTreeMap<ProcId, Grant>,
}

fn coalesce(mut extents: Vec<Extent>) -> Vec<Extent> {
    extents.retain(|e| !e.is_empty());
    extents.sort();
    let mut out: Vec<Extent> = Vec::with_capacity(extents.len());
    for e in extents {
        match out.last_mut() {
            Some(last) if last.end == e.start => last.end = e.end,
            _ => out.push(e),
        }
    }
    out
}

impl MemoryState {
    pub fn new(capacity: u64, kind: AllocatorKind) -> Result<Self, AllocError> {
        let resource = ResourceSet::memory(capacity);
        let (layout, free) = match kind {
            AllocatorKind::FirstFit | AllocatorKind::Segmentation => {
                (Layout::Contiguous, coalesce(vec![Extent::at(0, capacity)]))
            }
            AllocatorKind::Fixed { unit } | AllocatorKind::Paging { page_size: unit } => {
                let part = organize_fixed_partition(&resource, unit)?;
                (Layout::Partitioned { unit, residue: part.residue }, part.units)
            }
            AllocatorKind::Buddy => {
                let tree = BuddyTree::new(capacity)?;
                let free = tree.free_blocks();
                (Layout::Buddy(tree), free)
            }
        };
        Ok(MemoryState { capacity, kind, layout, free, allocated: BTreeMap::new() })
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn kind(&self) -> AllocatorKind {
        self.kind
    }

    /// The organize operation in force over this memory.
    pub fn organizer(&self) -> Organize {
        match self.layout {
            Layout::Contiguous => Organize::Identity,
            Layout::Partitioned { unit, .. } => Organize::FixedPartition { unit_size: unit },
            Layout::Buddy(_) => Organize::BuddyTree,
        }
    }

    /// The discipline this memory's allocator applies.
    pub fn discipline(&self) -> Discipline {
        let select = match self.kind {
            AllocatorKind::FirstFit | AllocatorKind::Segmentation | AllocatorKind::Fixed { .. } => Select::FirstFit,
            AllocatorKind::Buddy => Select::BuddyFit,
            AllocatorKind::Paging { .. } => Select::Identity(1),
        };
        compose(select, self.organizer()).expect("allocator disciplines compose")
    }

    pub fn free_extents(&self) -> &[Extent] {
        &self.free
    }

    pub fn residue(&self) -> &[Extent] {
        match &self.layout {
            Layout::Partitioned { residue, .. } => residue,
            _ => &[],
        }
    }

    pub fn buddy_tree(&self) -> Option<&BuddyTree> {
        match &self.layout {
            Layout::Buddy(t) => Some(t),
            _ => None,
        }
    }

    pub fn grant(&self, pid: ProcId) -> Option<&Grant> {
        self.allocated.get(&pid)
    }

    pub fn is_resident(&self, pid: ProcId) -> bool {
        self.allocated.contains_key(&pid)
    }

    pub fn residents(&self) -> impl Iterator<Item = ProcId> + '_ {
        self.allocated.keys().copied()
    }

    pub fn allocated_extents(&self) -> BTreeMap<ProcId, Vec<Extent>> {
        self.allocated.iter().map(|(&pid, g)| (pid, g.extents())).collect()
    }

    pub fn total_free(&self) -> u64 {
        self.free.iter().map(Extent::len).sum()
    }

    pub fn total_allocated(&self) -> u64 {
        self.allocated.values().map(Grant::units).sum()
    }

    pub fn total_residue(&self) -> u64 {
        self.residue().iter().map(Extent::len).sum()
    }

    /// Largest run of adjacent free units.
    pub fn largest_free(&self) -> u64 {
        coalesce(self.free.clone()).iter().map(Extent::len).max().unwrap_or(0)
    }

    /// Units a procedure of `size` occupies once granted under this allocator,
    /// or `None` if it could never fit even in empty memory.
    pub fn footprint(&self, p: &Procedure) -> Option<u64> {
        let size = p.size;
        if size == 0 {
            return Some(0);
        }
        let units = match self.kind {
            AllocatorKind::FirstFit => size,
            AllocatorKind::Segmentation => {
                let segs = p.segments.clone().unwrap_or_else(|| vec![size]);
                if segs.iter().any(|&l| l > self.capacity) {
                    return None;
                }
                size
            }
            AllocatorKind::Fixed { unit } => {
                if size > unit {
                    return None;
                }
                unit
            }
            AllocatorKind::Buddy => size.checked_next_power_of_two()?,
            AllocatorKind::Paging { page_size } => size.div_ceil(page_size) * page_size,
        };
        let usable = self.capacity - self.residue_capacity();
        (units <= usable).then_some(units)
    }

    fn residue_capacity(&self) -> u64 {
        match self.layout {
            Layout::Partitioned { .. } => self.total_residue(),
            _ => 0,
        }
    }

    fn check_discipline(&self, d: &Discipline) -> Result<(), AllocError> {
        let expected = self.discipline();
        let ok = match self.kind {
            AllocatorKind::Paging { .. } => {
                matches!(d.select(), Select::Identity(_)) && d.organize() == expected.organize()
            }
            _ => *d == expected,
        };
        if ok {
            Ok(())
        } else {
            Err(AllocError::DisciplineMismatch { discipline: *d, kind: self.kind })
        }
    }

    fn take_free(&mut self, taken: &Extent) {
        let mut next = Vec::with_capacity(self.free.len() + 1);
        for e in &self.free {
            if e.covers(taken) {
                if e.start < taken.start {
                    next.push(Extent { start: e.start, end: taken.start });
                }
                if taken.end < e.end {
                    next.push(Extent { start: taken.end, end: e.end });
                }
            } else {
                next.push(*e);
            }
        }
        self.free = next;
    }

    fn release(&mut self, extents: &[Extent]) -> Result<(), AllocError> {
        match &mut self.layout {
            Layout::Contiguous => {
                let mut all = std::mem::take(&mut self.free);
                all.extend_from_slice(extents);
                self.free = coalesce(all);
            }
            Layout::Partitioned { .. } => {
                self.free.extend_from_slice(extents);
                self.free.sort();
            }
            Layout::Buddy(tree) => {
                for e in extents {
                    tree.free(e)?;
                }
                self.free = tree.free_blocks();
            }
        }
        Ok(())
    }

    /// Contiguous first-fit of one extent of `q` units.
    fn fit_contiguous(&mut self, d: &Discipline, pid: ProcId, q: u64) -> Result<Extent, AllocError> {
        match d.apply(Subject::Free(self.free.clone()), Some(q)) {
            Ok(sel) => {
                let e = sel.extent().expect("first-fit selects an extent");
                self.take_free(&e);
                Ok(e)
            }
            Err(CombError::AllocationFailure { .. }) => Err(AllocError::AllocationFailure { pid, demand: q }),
            Err(e) => Err(e.into()),
        }
    }

    /// Assigns the lowest free frames to `pages`.
    fn assign_frames(&mut self, pages: &Pagination) -> Result<PageMap, AllocError> {
        let Layout::Partitioned { unit, .. } = self.layout else {
            return Err(AllocError::Parameter("page tables need framed memory".into()));
        };
        if !matches!(self.kind, AllocatorKind::Paging { .. }) || unit != pages.page_size {
            return Err(AllocError::Parameter(format!(
                "page size {} does not match frame size {unit}",
                pages.page_size
            )));
        }
        if pages.pages.len() > self.free.len() {
            return Err(AllocError::AllocationFailure { pid: pages.pid, demand: pages.pages.len() as u64 * unit });
        }
        let lowest = compose(Select::Identity(1), Organize::FixedPartition { unit_size: unit })?;
        let mut entries = BTreeMap::new();
        for page in &pages.pages {
            let frame = match lowest.apply(Subject::Free(self.free.clone()), None)? {
                Selection::Extent(e) => e,
                _ => unreachable!("identity over a partition selects a unit"),
            };
            self.take_free(&frame);
            entries.insert(page.number, frame.start.0 / unit);
        }
        Ok(PageMap { page_size: unit, entries })
    }

    fn segments_for(&mut self, d: &Discipline, p: &Procedure, lengths: &[u64]) -> Result<SegmentMap, AllocError> {
        if lengths.contains(&0) {
            return Err(AllocError::Parameter("segment lengths must be ≥ 1".into()));
        }
        if lengths.iter().sum::<u64>() != p.size {
            return Err(AllocError::Parameter(format!(
                "segment lengths sum to {}, procedure {} has size {}",
                lengths.iter().sum::<u64>(),
                p.id,
                p.size
            )));
        }
        let mut scratch = self.clone();
        let mut segments = Vec::with_capacity(lengths.len());
        for (i, &len) in lengths.iter().enumerate() {
            let e = scratch.fit_contiguous(d, p.id, len)?;
            segments.push(Segment { id: i as u32, len, base: e.start });
        }
        *self = scratch;
        Ok(SegmentMap { segments })
    }

    /// In-place [`allocate`]; leaves `self` unchanged on error.
    pub fn try_allocate(&mut self, d: &Discipline, p: &Procedure) -> Result<Grant, AllocError> {
        self.check_discipline(d)?;
        if self.allocated.contains_key(&p.id) {
            return Err(AllocError::AlreadyAllocated(p.id));
        }
        let grant = if p.size == 0 {
            Grant::Empty
        } else {
            match self.kind {
                AllocatorKind::FirstFit => Grant::Contiguous(self.fit_contiguous(d, p.id, p.size)?),
                AllocatorKind::Segmentation => {
                    let lengths = p.segments.clone().unwrap_or_else(|| vec![p.size]);
                    Grant::Segments(self.segments_for(d, p, &lengths)?)
                }
                AllocatorKind::Fixed { unit } => {
                    if p.size > unit {
                        return Err(AllocError::AllocationFailure { pid: p.id, demand: p.size });
                    }
                    // The whole unit is granted; the unused tail is internal fragmentation.
                    let e = self.fit_contiguous(d, p.id, unit)?;
                    Grant::Contiguous(e)
                }
                AllocatorKind::Buddy => {
                    let Layout::Buddy(tree) = &self.layout else { unreachable!() };
                    match d.apply(Subject::Tree(tree.clone()), Some(p.size)) {
                        Ok(Selection::Block { extent, tree }) => {
                            self.free = tree.free_blocks();
                            self.layout = Layout::Buddy(tree);
                            Grant::Contiguous(extent)
                        }
                        Ok(_) => unreachable!("buddy fit selects a block"),
                        Err(CombError::AllocationFailure { .. }) => {
                            return Err(AllocError::AllocationFailure { pid: p.id, demand: p.size });
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
                AllocatorKind::Paging { page_size } => {
                    let pages = paginate(p, page_size)?;
                    Grant::Pages(self.assign_frames(&pages)?)
                }
            }
        };
        self.allocated.insert(p.id, grant.clone());
        Ok(grant)
    }

    /// In-place [`deallocate`].
    pub fn try_deallocate(&mut self, pid: ProcId) -> Result<Grant, AllocError> {
        let grant = self.allocated.get(&pid).cloned().ok_or(AllocError::NotFound(pid))?;
        self.release(&grant.extents())?;
        self.allocated.remove(&pid);
        Ok(grant)
    }

    /// Conservation, disjointness and range of every extent, plus the
    /// buddy-tree structure where one is in force.
    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        let mut all: Vec<Extent> = self.free.clone();
        all.extend(self.residue().iter().copied());
        for g in self.allocated.values() {
            all.extend(g.extents());
        }
        all.retain(|e| !e.is_empty());
        if let Some(e) = all.iter().find(|e| e.start > e.end || e.end.0 > self.capacity) {
            return Err(InvariantViolation::OutOfRange(*e));
        }
        all.sort();
        if let Some(w) = all.windows(2).find(|w| w[0].intersects(&w[1])) {
            return Err(InvariantViolation::Overlap(w[0], w[1]));
        }
        let (free, allocated, residue) = (self.total_free(), self.total_allocated(), self.total_residue());
        if free + allocated + residue != self.capacity {
            return Err(InvariantViolation::Conservation { free, allocated, residue, capacity: self.capacity });
        }
        if let Layout::Buddy(tree) = &self.layout {
            if let Some((a, b)) = tree.free_sibling_pairs().first() {
                return Err(InvariantViolation::Buddy(format!("free siblings {a} and {b} not merged")));
            }
            if let Some(e) = all.iter().find(|e| !e.len().is_power_of_two()) {
                return Err(InvariantViolation::Buddy(format!("block {e} is not a power of two")));
            }
            if tree.free_blocks() != self.free {
                return Err(InvariantViolation::Buddy("free list out of sync with tree".into()));
            }
        }
        Ok(())
    }
}

/// Allocates `p.size` units to `p` under discipline `d`.
pub fn allocate(d: &Discipline, m: &MemoryState, p: &Procedure) -> Result<(MemoryState, Grant), AllocError> {
    let mut next = m.clone();
    let grant = next.try_allocate(d, p)?;
    Ok((next, grant))
}

/// Returns everything `pid` holds to the free pool, merging neighbours.
pub fn deallocate(m: &MemoryState, pid: ProcId) -> Result<MemoryState, AllocError> {
    let mut next = m.clone();
    next.try_deallocate(pid)?;
    Ok(next)
}

/// Builds a page table for `pages` from the lowest free frames of a framed
/// memory, recording the page-table binding (after framing and pagination)
/// in `graph` at `instant`.
pub fn build_page_table(
    pages: &Pagination,
    m: &MemoryState,
    graph: &mut BindingGraph,
    instant: u64,
) -> Result<(MemoryState, PageMap), AllocError> {
    let mut next = m.clone();
    if next.allocated.contains_key(&pages.pid) {
        return Err(AllocError::AlreadyAllocated(pages.pid));
    }
    let map = next.assign_frames(pages)?;
    next.allocated.insert(pages.pid, if map.entries.is_empty() { Grant::Empty } else { Grant::Pages(map.clone()) });
    record_page_table(graph, pages.pid, instant)?;
    Ok((next, map))
}

/// Records the page-table bind for `pid` and its two prerequisites.
pub fn record_page_table(graph: &mut BindingGraph, pid: ProcId, instant: u64) -> Result<(), BindingError> {
    let table = page_table_symbol(pid);
    graph.add_dependency(FRAMES_SYMBOL, table.clone())?;
    graph.add_dependency(pages_symbol(pid), table.clone())?;
    graph.bind(table, instant)
}

/// Allocates each segment of `p` independently through `d`; either every
/// segment fits or memory is left unchanged.
pub fn segment_alloc(
    p: &Procedure,
    lengths: &[u64],
    d: &Discipline,
    m: &MemoryState,
) -> Result<(MemoryState, SegmentMap), AllocError> {
    if m.kind != AllocatorKind::Segmentation {
        return Err(AllocError::DisciplineMismatch { discipline: *d, kind: m.kind });
    }
    m.check_discipline(d)?;
    if m.allocated.contains_key(&p.id) {
        return Err(AllocError::AlreadyAllocated(p.id));
    }
    let mut next = m.clone();
    let map = next.segments_for(d, p, lengths)?;
    next.allocated.insert(p.id, if map.segments.is_empty() { Grant::Empty } else { Grant::Segments(map.clone()) });
    Ok((next, map))
}

/// Evicts one resident procedure from `candidates` to the backing store.
pub fn swap_out(
    m: &MemoryState,
    backing: &BackingStore,
    candidates: &[Procedure],
    policy: VictimPolicy,
) -> Result<(MemoryState, BackingStore, SwapRecord), SwapError> {
    let resident: Vec<Procedure> = candidates.iter().filter(|p| m.is_resident(p.id)).cloned().collect();
    let victim_id = policy.choose(&resident).ok_or(SwapError::NoVictim)?;
    let victim = resident.iter().find(|p| p.id == victim_id).expect("chosen from residents");

    let mut store = backing.clone();
    let d = store.memory.discipline();
    let image = match store.memory.try_allocate(&d, victim) {
        Ok(Grant::Contiguous(e)) => e,
        Ok(_) => Extent::at(0, 0),
        Err(_) => return Err(SwapError::BackingFull { pid: victim.id, demand: victim.size }),
    };
    let mut primary = m.clone();
    let released = primary.try_deallocate(victim.id)?.extents();
    let record = SwapRecord { pid: victim.id, backing: image, released };
    store.records.insert(victim.id, record.clone());
    Ok((primary, store, record))
}

/// Brings a swapped-out procedure back into primary memory, possibly at
/// different addresses, and frees its backing image.
pub fn swap_in(
    m: &MemoryState,
    backing: &BackingStore,
    p: &Procedure,
) -> Result<(MemoryState, BackingStore, Grant), SwapError> {
    if !backing.records.contains_key(&p.id) {
        return Err(SwapError::NotSwapped(p.id));
    }
    let mut primary = m.clone();
    let grant = match primary.try_allocate(&m.discipline(), p) {
        Ok(g) => g,
        Err(AllocError::AllocationFailure { .. }) => return Err(SwapError::NoSpace(p.id)),
        Err(e) => return Err(e.into()),
    };
    let mut store = backing.clone();
    store.memory.try_deallocate(p.id)?;
    store.records.remove(&p.id);
    Ok((primary, store, grant))
}

/// Groups allocated extents by owner.
pub fn partition_by_owner(
    m: &MemoryState,
    owners: &BTreeMap<ProcId, String>,
) -> Result<BTreeMap<String, Vec<Extent>>, AllocError> {
    let mut classes: BTreeMap<String, Vec<Extent>> = BTreeMap::new();
    for (pid, grant) in &m.allocated {
        let owner = owners.get(pid).ok_or(AllocError::Unowned(*pid))?;
        classes.entry(owner.clone()).or_default().extend(grant.extents());
    }
    for extents in classes.values_mut() {
        extents.sort();
    }
    Ok(classes)
}
