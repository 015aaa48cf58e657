//! The organize/select algebra.
//!
//! An [`Organize`] rearranges or restructures a set, a [`Select`] picks a
//! member (or an extent) out of the organized set, and [`compose`] pairs
//! the two into a [`Discipline`]. Every scheduling and allocation policy in
//! this crate is one of these pairs: FCFS is `Identity(1)` over `Identity`,
//! SJF is `Identity(1)` over `Sort(Time)`, buddy allocation is `BuddyFit`
//! over `BuddyTree`.

mod buddy;

use std::fmt;

use thiserror::Error;

use crate::domain::{CoreError, Extent, ProcId, Procedure, ProcedureSet, ResourceSet};

pub use buddy::BuddyTree;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CombError {
    #[error("index {index} out of range 1..={len}")]
    OutOfBounds { index: usize, len: usize },
    #[error("no free extent can hold {demand} units")]
    AllocationFailure { demand: u64 },
    #[error("cannot compose {select} with {organize}")]
    Composition { select: Select, organize: Organize },
    #[error("{op} cannot act on {shape}")]
    Shape { op: String, shape: &'static str },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("procedure {0} has no priority")]
    MissingPriority(ProcId),
    #[error("buddy capacity {0} is not a power of two")]
    NotPowerOfTwo(u64),
    #[error("block {0} is not an allocated buddy block")]
    UnknownBlock(Extent),
    #[error("{select} needs a demand")]
    MissingDemand { select: Select },
    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SortKey {
    /// `project(1, p)`
    Size,
    /// `project(2, p)`
    Time,
    Priority,
}

impl SortKey {
    pub fn of(self, p: &Procedure) -> u64 {
        match self {
            SortKey::Size => p.size,
            SortKey::Time => p.time,
            SortKey::Priority => p.priority.unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Organize {
    Identity,
    Sort(SortKey),
    FixedPartition { unit_size: u64 },
    BuddyTree,
}

impl fmt::Display for Organize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Organize::Identity => f.write_str("identity"),
            Organize::Sort(k) => write!(f, "sort({k:?})"),
            Organize::FixedPartition { unit_size } => write!(f, "fixed-partition({unit_size})"),
            Organize::BuddyTree => f.write_str("buddy-tree"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Select {
    /// 1-indexed positional select.
    Identity(usize),
    FirstFit,
    BuddyFit,
    ArgmaxPriority,
}

impl fmt::Display for Select {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Select::Identity(i) => write!(f, "identity({i})"),
            Select::FirstFit => f.write_str("first-fit"),
            Select::BuddyFit => f.write_str("buddy-fit"),
            Select::ArgmaxPriority => f.write_str("argmax-priority"),
        }
    }
}

/// Fixed-size allocation units plus the leftover pieces too small to form one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub unit_size: u64,
    pub units: Vec<Extent>,
    pub residue: Vec<Extent>,
}

/// What an [`Organize`] acts on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Subject {
    Procedures(ProcedureSet),
    /// A fresh resource set, nothing allocated yet.
    Resource(ResourceSet),
    /// Addr-ordered free extents of a resource already in use.
    Free(Vec<Extent>),
    /// An already-organized buddy tree.
    Tree(BuddyTree),
}

impl Subject {
    fn shape(&self) -> &'static str {
        match self {
            Subject::Procedures(_) => "procedures",
            Subject::Resource(_) => "resource set",
            Subject::Free(_) => "free list",
            Subject::Tree(_) => "buddy tree",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Organized {
    Procedures(ProcedureSet),
    Extents(Vec<Extent>),
    Partition(Partition),
    Tree(BuddyTree),
}

impl Organized {
    fn shape(&self) -> &'static str {
        match self {
            Organized::Procedures(_) => "procedures",
            Organized::Extents(_) => "extents",
            Organized::Partition(_) => "partition",
            Organized::Tree(_) => "buddy tree",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selection {
    Procedure(Procedure),
    Extent(Extent),
    /// A buddy block, plus the tree with that block marked used.
    Block {
        extent: Extent,
        tree: BuddyTree,
    },
}

impl Selection {
    pub fn procedure(self) -> Option<Procedure> {
        match self {
            Selection::Procedure(p) => Some(p),
            _ => None,
        }
    }

    pub fn extent(&self) -> Option<Extent> {
        match self {
            Selection::Extent(e) | Selection::Block { extent: e, .. } => Some(*e),
            Selection::Procedure(_) => None,
        }
    }
}

pub fn organize_identity<T: Clone>(xs: &[T]) -> Vec<T> {
    xs.to_vec()
}

/// Stable ascending sort by `key`, ties broken by ascending id.
pub fn organize_sort(set: &ProcedureSet, key: SortKey) -> ProcedureSet {
    let mut members = set.members().to_vec();
    members.sort_by_key(|p| (key.of(p), p.id));
    ProcedureSet::from_reordered(members)
}

pub fn organize_fixed_partition(r: &ResourceSet, unit_size: u64) -> Result<Partition, CombError> {
    let full =
        r.full_extent().ok_or_else(|| CombError::Parameter("cannot partition an infinite resource set".into()))?;
    partition_extents(&[full], unit_size)
}

/// Splits each extent into `unit_size` blocks aligned to multiples of
/// `unit_size`. Pieces that do not fill a whole aligned block become residue.
pub fn partition_extents(extents: &[Extent], unit_size: u64) -> Result<Partition, CombError> {
    if unit_size == 0 {
        return Err(CombError::Parameter("partition unit size must be ≥ 1".into()));
    }
    let mut units = Vec::new();
    let mut residue = Vec::new();
    for e in extents {
        let (s, t) = (e.start.0, e.end.0);
        let first = s.div_ceil(unit_size) * unit_size;
        let last = t / unit_size * unit_size;
        if first >= last {
            if s < t {
                residue.push(*e);
            }
            continue;
        }
        if s < first {
            residue.push(Extent::at(s, first - s));
        }
        units.extend((first..last).step_by(unit_size as usize).map(|a| Extent::at(a, unit_size)));
        if last < t {
            residue.push(Extent::at(last, t - last));
        }
    }
    Ok(Partition { unit_size, units, residue })
}

/// Cuts a demand of `total` units into `size`-unit chunks; the last chunk
/// holds the remainder. Paging applies this to memory, round robin to CPU time.
pub fn chunk_fixed(total: u64, size: u64) -> Result<Vec<u64>, CombError> {
    if size == 0 {
        return Err(CombError::Parameter("chunk size must be ≥ 1".into()));
    }
    let mut chunks = vec![size; (total / size) as usize];
    if !total.is_multiple_of(size) {
        chunks.push(total % size);
    }
    Ok(chunks)
}

pub fn organize_buddy(r: &ResourceSet) -> Result<BuddyTree, CombError> {
    let capacity = r
        .capacity()
        .ok_or_else(|| CombError::Parameter("cannot build a buddy tree over an infinite resource set".into()))?;
    BuddyTree::new(capacity)
}

pub fn select_identity<T>(organized: &[T], i: usize) -> Result<&T, CombError> {
    if i == 0 || i > organized.len() {
        return Err(CombError::OutOfBounds { index: i, len: organized.len() });
    }
    Ok(&organized[i - 1])
}

/// Prefix of the lowest-addressed free extent holding at least `q` units.
pub fn select_first_fit(free: &[Extent], q: u64) -> Result<Extent, CombError> {
    if q == 0 {
        return Err(CombError::Parameter("first-fit demand must be ≥ 1".into()));
    }
    free.iter()
        .find(|e| e.len() >= q)
        .map(|e| Extent::at(e.start.0, q))
        .ok_or(CombError::AllocationFailure { demand: q })
}

pub fn select_buddy(tree: &BuddyTree, q: u64) -> Result<(Extent, BuddyTree), CombError> {
    let mut next = tree.clone();
    let block = next.allocate(q)?;
    Ok((block, next))
}

/// Highest priority wins; equal priorities go to the lowest id.
pub fn select_argmax_priority(organized: &[Procedure]) -> Result<&Procedure, CombError> {
    let mut best: Option<(&Procedure, u64)> = None;
    for p in organized {
        let prio = p.priority.ok_or(CombError::MissingPriority(p.id))?;
        best = match best {
            Some((b, bp)) if bp > prio || (bp == prio && b.id < p.id) => Some((b, bp)),
            _ => Some((p, prio)),
        };
    }
    best.map(|(p, _)| p).ok_or(CombError::OutOfBounds { index: 1, len: 0 })
}

impl Organize {
    pub fn apply(&self, subject: Subject) -> Result<Organized, CombError> {
        let shape_err = |s: &Subject| CombError::Shape { op: self.to_string(), shape: s.shape() };
        match (self, subject) {
            (Organize::Identity, Subject::Procedures(p)) => Ok(Organized::Procedures(p)),
            (Organize::Identity, Subject::Free(f)) => Ok(Organized::Extents(organize_identity(&f))),
            (Organize::Identity, Subject::Resource(r)) => {
                let full = r.full_extent().ok_or_else(|| shape_err(&Subject::Resource(r.clone())))?;
                Ok(Organized::Extents(vec![full]))
            }
            (Organize::Identity, Subject::Tree(t)) => Ok(Organized::Tree(t)),
            (Organize::Sort(key), Subject::Procedures(p)) => Ok(Organized::Procedures(organize_sort(&p, *key))),
            (Organize::FixedPartition { unit_size }, Subject::Resource(r)) => {
                Ok(Organized::Partition(organize_fixed_partition(&r, *unit_size)?))
            }
            (Organize::FixedPartition { unit_size }, Subject::Free(f)) => {
                Ok(Organized::Partition(partition_extents(&f, *unit_size)?))
            }
            (Organize::BuddyTree, Subject::Resource(r)) => Ok(Organized::Tree(organize_buddy(&r)?)),
            (Organize::BuddyTree, Subject::Tree(t)) => Ok(Organized::Tree(t)),
            (_, s) => Err(shape_err(&s)),
        }
    }
}

impl Select {
    /// `demand` is the quantity `q` for allocating selects; procedure
    /// selects ignore it.
    pub fn apply(&self, organized: Organized, demand: Option<u64>) -> Result<Selection, CombError> {
        let shape = organized.shape();
        let need = |d: Option<u64>| d.ok_or(CombError::MissingDemand { select: *self });
        match (self, organized) {
            (Select::Identity(i), Organized::Procedures(p)) => {
                Ok(Selection::Procedure(select_identity(p.members(), *i)?.clone()))
            }
            (Select::Identity(i), Organized::Extents(e)) => Ok(Selection::Extent(*select_identity(&e, *i)?)),
            (Select::Identity(i), Organized::Partition(p)) => Ok(Selection::Extent(*select_identity(&p.units, *i)?)),
            (Select::FirstFit, Organized::Extents(e)) => Ok(Selection::Extent(select_first_fit(&e, need(demand)?)?)),
            (Select::FirstFit, Organized::Partition(p)) => {
                Ok(Selection::Extent(select_first_fit(&p.units, need(demand)?)?))
            }
            (Select::BuddyFit, Organized::Tree(t)) => {
                let (extent, tree) = select_buddy(&t, need(demand)?)?;
                Ok(Selection::Block { extent, tree })
            }
            (Select::ArgmaxPriority, Organized::Procedures(p)) => {
                Ok(Selection::Procedure(select_argmax_priority(p.members())?.clone()))
            }
            _ => Err(CombError::Shape { op: self.to_string(), shape }),
        }
    }
}

/// A (select, organize) pair. `apply` always organizes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Discipline {
    select: Select,
    organize: Organize,
}

impl Discipline {
    pub fn select(&self) -> Select {
        self.select
    }

    pub fn organize(&self) -> Organize {
        self.organize
    }

    pub fn apply(&self, subject: Subject, demand: Option<u64>) -> Result<Selection, CombError> {
        self.select.apply(self.organize.apply(subject)?, demand)
    }

    /// Applies the discipline to a procedure set and returns the chosen member.
    pub fn pick(&self, set: &ProcedureSet) -> Result<Procedure, CombError> {
        match self.apply(Subject::Procedures(set.clone()), None)? {
            Selection::Procedure(p) => Ok(p),
            _ => Err(CombError::Shape { op: self.select.to_string(), shape: "procedures" }),
        }
    }
}

impl fmt::Display for Discipline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ∘ {}", self.select, self.organize)
    }
}

/// Pairs a select with an organize, rejecting pairs whose shapes cannot meet.
pub fn compose(select: Select, organize: Organize) -> Result<Discipline, CombError> {
    use Organize as O;
    use Select as S;
    let ok = match (select, organize) {
        (S::Identity(0), _) => {
            return Err(CombError::Parameter("identity select index is 1-based".into()));
        }
        (S::Identity(_), O::Identity | O::Sort(_) | O::FixedPartition { .. }) => true,
        (S::FirstFit, O::Identity | O::FixedPartition { .. }) => true,
        (S::BuddyFit, O::BuddyTree) => true,
        (S::ArgmaxPriority, O::Identity | O::Sort(_)) => true,
        _ => false,
    };
    if let O::FixedPartition { unit_size: 0 } = organize {
        return Err(CombError::Parameter("partition unit size must be ≥ 1".into()));
    }
    if ok {
        Ok(Discipline { select, organize })
    } else {
        Err(CombError::Composition { select, organize })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ProcId;

    fn p(id: u32, s: u64, t: u64) -> Procedure {
        Procedure::new(id, s, t).unwrap()
    }

    fn set(ps: Vec<Procedure>) -> ProcedureSet {
        ProcedureSet::new(ps).unwrap()
    }

    fn ids(s: &ProcedureSet) -> Vec<u32> {
        s.iter().map(|p| p.id.0).collect()
    }

    #[test]
    fn identity_organize() {
        assert_eq!(organize_identity(&['a', 'b', 'c']), vec!['a', 'b', 'c']);
        assert_eq!(organize_identity::<char>(&[]), Vec::<char>::new());
        let once = organize_identity(&[3, 1, 2]);
        assert_eq!(organize_identity(&once), once);
    }

    #[test]
    fn sort_by_size_and_time() {
        let s = set(vec![p(1, 5, 1), p(2, 2, 1), p(3, 9, 1)]);
        assert_eq!(ids(&organize_sort(&s, SortKey::Size)), vec![2, 1, 3]);
        let tie = set(vec![p(2, 4, 1), p(1, 4, 1)]);
        assert_eq!(ids(&organize_sort(&tie, SortKey::Size)), vec![1, 2]);
        let t = set(vec![p(1, 0, 3), p(2, 0, 1)]);
        assert_eq!(ids(&organize_sort(&t, SortKey::Time)), vec![2, 1]);
    }

    #[test]
    fn fixed_partition() {
        let part = organize_fixed_partition(&ResourceSet::memory(16), 4).unwrap();
        assert_eq!(part.units, vec![Extent::at(0, 4), Extent::at(4, 4), Extent::at(8, 4), Extent::at(12, 4)]);
        assert!(part.residue.is_empty());
        let part = organize_fixed_partition(&ResourceSet::memory(10), 4).unwrap();
        assert_eq!(part.units, vec![Extent::at(0, 4), Extent::at(4, 4)]);
        assert_eq!(part.residue, vec![Extent::new(8, 10).unwrap()]);
        let part = organize_fixed_partition(&ResourceSet::memory(3), 4).unwrap();
        assert!(part.units.is_empty());
        assert_eq!(part.residue, vec![Extent::new(0, 3).unwrap()]);
        assert!(matches!(organize_fixed_partition(&ResourceSet::memory(3), 0), Err(CombError::Parameter(_))));
    }

    #[test]
    fn buddy_organize() {
        let t = organize_buddy(&ResourceSet::memory(16)).unwrap();
        assert_eq!(t.root(), Extent::at(0, 16));
        assert!(organize_buddy(&ResourceSet::memory(10)).is_err());
        for (e, split) in BuddyTree::new(8).unwrap().nodes() {
            assert!(!split);
            assert_eq!(e, Extent::at(0, 8));
        }
    }

    #[test]
    fn fixed_chunking() {
        assert_eq!(chunk_fixed(10, 4).unwrap(), vec![4, 4, 2]);
        assert_eq!(chunk_fixed(8, 4).unwrap(), vec![4, 4]);
        assert!(chunk_fixed(0, 4).unwrap().is_empty());
        assert!(chunk_fixed(3, 0).is_err());
    }

    #[test]
    fn identity_select() {
        let xs = ['a', 'b', 'c'];
        assert_eq!(select_identity(&xs, 2), Ok(&'b'));
        assert_eq!(select_identity(&['a'], 1), Ok(&'a'));
        assert_eq!(select_identity(&['a', 'b'], 3), Err(CombError::OutOfBounds { index: 3, len: 2 }));
        assert!(select_identity(&xs, 0).is_err());
    }

    #[test]
    fn first_fit() {
        let free = [Extent::new(0, 8).unwrap(), Extent::new(12, 20).unwrap()];
        assert_eq!(select_first_fit(&free, 5), Ok(Extent::new(0, 5).unwrap()));
        let free = [Extent::new(0, 3).unwrap(), Extent::new(12, 20).unwrap()];
        assert_eq!(select_first_fit(&free, 5), Ok(Extent::new(12, 17).unwrap()));
        assert_eq!(select_first_fit(&free[..1], 5), Err(CombError::AllocationFailure { demand: 5 }));
    }

    #[test]
    fn buddy_select_is_pure() {
        let t = BuddyTree::new(16).unwrap();
        let (a, t2) = select_buddy(&t, 3).unwrap();
        assert_eq!(a, Extent::at(0, 4));
        assert_eq!(t.free_blocks(), vec![Extent::at(0, 16)]);
        let (b, _) = select_buddy(&t2, 4).unwrap();
        assert_eq!(b, Extent::at(4, 4));
        assert!(matches!(select_buddy(&t, 17), Err(CombError::AllocationFailure { .. })));
    }

    #[test]
    fn argmax_priority() {
        let s = vec![p(1, 1, 1).with_priority(3), p(2, 1, 1).with_priority(7), p(3, 1, 1).with_priority(1)];
        assert_eq!(select_argmax_priority(&s).unwrap().id, ProcId(2));
        let tie = vec![p(2, 1, 1).with_priority(5), p(1, 1, 1).with_priority(5)];
        assert_eq!(select_argmax_priority(&tie).unwrap().id, ProcId(1));
        let missing = vec![p(1, 1, 1).with_priority(5), p(2, 1, 1)];
        assert_eq!(select_argmax_priority(&missing), Err(CombError::MissingPriority(ProcId(2))));
    }

    #[test]
    fn composed_kernels() {
        let fcfs = compose(Select::Identity(1), Organize::Identity).unwrap();
        let ab = set(vec![p(1, 5, 1), p(2, 2, 1)]);
        assert_eq!(fcfs.pick(&ab).unwrap().id, ProcId(1));
        let sjf = compose(Select::Identity(1), Organize::Sort(SortKey::Size)).unwrap();
        assert_eq!(sjf.pick(&ab).unwrap().id, ProcId(2));
        assert!(matches!(compose(Select::BuddyFit, Organize::Identity), Err(CombError::Composition { .. })));
        assert!(matches!(compose(Select::ArgmaxPriority, Organize::BuddyTree), Err(CombError::Composition { .. })));
        assert!(compose(Select::Identity(0), Organize::Identity).is_err());
    }

    #[test]
    fn discipline_over_resources() {
        let buddy = compose(Select::BuddyFit, Organize::BuddyTree).unwrap();
        let sel = buddy.apply(Subject::Resource(ResourceSet::memory(16)), Some(3)).unwrap();
        assert_eq!(sel.extent(), Some(Extent::at(0, 4)));
        assert!(matches!(
            buddy.apply(Subject::Resource(ResourceSet::memory(16)), None),
            Err(CombError::MissingDemand { .. })
        ));

        let framed = compose(Select::Identity(2), Organize::FixedPartition { unit_size: 4 }).unwrap();
        assert_eq!(
            framed.apply(Subject::Resource(ResourceSet::memory(16)), None).unwrap().extent(),
            Some(Extent::at(4, 4))
        );

        let ff = compose(Select::FirstFit, Organize::Identity).unwrap();
        assert!(matches!(ff.apply(Subject::Procedures(ProcedureSet::empty()), Some(1)), Err(CombError::Shape { .. })));
    }

    #[test]
    fn partition_of_free_list_respects_alignment() {
        let part = partition_extents(&[Extent::new(2, 13).unwrap()], 4).unwrap();
        assert_eq!(part.units, vec![Extent::at(4, 4), Extent::at(8, 4)]);
        assert_eq!(part.residue, vec![Extent::new(2, 4).unwrap(), Extent::new(12, 13).unwrap()]);
    }
}
