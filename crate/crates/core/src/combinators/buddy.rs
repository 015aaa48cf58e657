use crate::domain::Extent;

use super::CombError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Free,
    Split,
    Used,
}

/// Binary buddy tree over `[0, capacity)`.
///
/// Nodes are stored heap-style: node `i` has children `2i + 1` and `2i + 2`.
/// Only nodes reachable through `Split` ancestors are meaningful.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuddyTree {
    capacity: u64,
    nodes: Vec<Node>,
}

impl BuddyTree {
    pub fn new(capacity: u64) -> Result<Self, CombError> {
        if capacity == 0 || !capacity.is_power_of_two() {
            return Err(CombError::NotPowerOfTwo(capacity));
        }
        let count = usize::try_from(2 * capacity - 1)
            .map_err(|_| CombError::Parameter(format!("buddy capacity {capacity} too large")))?;
        Ok(BuddyTree { capacity, nodes: vec![Node::Free; count] })
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Number of halvings from the root to a unit leaf.
    pub fn depth(&self) -> u32 {
        self.capacity.trailing_zeros()
    }

    pub fn root(&self) -> Extent {
        Extent::at(0, self.capacity)
    }

    fn extent_of(&self, i: usize) -> Extent {
        let level = (i + 1).ilog2();
        let size = self.capacity >> level;
        let offset = (i as u64 + 1 - (1u64 << level)) * size;
        Extent::at(offset, size)
    }

    fn children(&self, i: usize) -> Option<(usize, usize)> {
        let l = 2 * i + 1;
        (l < self.nodes.len()).then_some((l, l + 1))
    }

    /// Reachable nodes in address order (pre-order, left first).
    fn walk(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            out.push(i);
            if self.nodes[i] == Node::Split {
                let (l, r) = self.children(i).expect("split node has children");
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    /// Root and the two halves of every extent, for structural checks.
    pub fn children_of(&self, e: &Extent) -> Option<(Extent, Extent)> {
        let half = e.len() / 2;
        (half > 0).then(|| (Extent::at(e.start.0, half), Extent::at(e.start.0 + half, half)))
    }

    /// Allocates a block of `q.next_power_of_two()` units.
    ///
    /// The traversal picks the smallest free block that fits, lowest
    /// address first, and halves it keeping the left half until it has
    /// the wanted size.
    pub fn allocate(&mut self, q: u64) -> Result<Extent, CombError> {
        if q == 0 {
            return Err(CombError::Parameter("buddy demand must be ≥ 1".into()));
        }
        let want = q.checked_next_power_of_two().ok_or(CombError::AllocationFailure { demand: q })?;
        let mut best: Option<(u64, usize)> = None;
        for i in self.walk() {
            if self.nodes[i] != Node::Free {
                continue;
            }
            let size = self.extent_of(i).len();
            if size >= want && best.is_none_or(|(b, _)| size < b) {
                best = Some((size, i));
            }
        }
        let (_, mut i) = best.ok_or(CombError::AllocationFailure { demand: q })?;
        while self.extent_of(i).len() > want {
            let (l, r) = self.children(i).expect("non-unit node has children");
            self.nodes[i] = Node::Split;
            self.nodes[l] = Node::Free;
            self.nodes[r] = Node::Free;
            i = l;
        }
        self.nodes[i] = Node::Used;
        Ok(self.extent_of(i))
    }

    /// Releases a block handed out by [`allocate`](Self::allocate) and
    /// merges free buddies upward.
    pub fn free(&mut self, block: &Extent) -> Result<(), CombError> {
        let mut i = 0usize;
        loop {
            let e = self.extent_of(i);
            if e == *block && self.nodes[i] == Node::Used {
                break;
            }
            if self.nodes[i] != Node::Split || !e.covers(block) {
                return Err(CombError::UnknownBlock(*block));
            }
            let (l, r) = self.children(i).expect("split node has children");
            i = if self.extent_of(l).covers(block) { l } else { r };
        }
        self.nodes[i] = Node::Free;
        while i > 0 {
            let parent = (i - 1) / 2;
            let (l, r) = self.children(parent).expect("parent has children");
            if self.nodes[l] == Node::Free && self.nodes[r] == Node::Free {
                self.nodes[parent] = Node::Free;
                i = parent;
            } else {
                break;
            }
        }
        Ok(())
    }

    pub fn free_blocks(&self) -> Vec<Extent> {
        self.blocks(Node::Free)
    }

    pub fn used_blocks(&self) -> Vec<Extent> {
        self.blocks(Node::Used)
    }

    fn blocks(&self, which: Node) -> Vec<Extent> {
        self.walk().into_iter().filter(|&i| self.nodes[i] == which).map(|i| self.extent_of(i)).collect()
    }

    /// Number of reachable nodes (free, split or used).
    pub fn node_count(&self) -> usize {
        self.walk().len()
    }

    /// Pairs of sibling blocks that are both free. Always empty after
    /// [`free`](Self::free) has merged.
    pub fn free_sibling_pairs(&self) -> Vec<(Extent, Extent)> {
        self.walk()
            .into_iter()
            .filter(|&i| self.nodes[i] == Node::Split)
            .filter_map(|i| {
                let (l, r) = self.children(i)?;
                (self.nodes[l] == Node::Free && self.nodes[r] == Node::Free)
                    .then(|| (self.extent_of(l), self.extent_of(r)))
            })
            .collect()
    }

    /// Every reachable node's extent in pre-order, with a flag for split nodes.
    pub fn nodes(&self) -> Vec<(Extent, bool)> {
        self.walk().into_iter().map(|i| (self.extent_of(i), self.nodes[i] == Node::Split)).collect()
    }
}
