//! Binding-before-use checking.
//!
//! A [`BindingGraph`] logs when symbols are bound and when they are used
//! (interpreted), plus "must be bound before" dependencies between symbols.
//! [`BindingGraph::validate`] flags every use that no earlier-or-simultaneous
//! bind covers and every bind that happened before one of its prerequisites.
//! Independent bindings may happen in any order; [`legal_orderings`] lists
//! the orders the dependencies allow.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindingError {
    #[error("instant {instant} precedes the last recorded instant {last}")]
    Clock { instant: u64, last: u64 },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Bind,
    Use,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Bind => "bind",
            EventKind::Use => "use",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BindingEvent {
    pub symbol: String,
    pub kind: EventKind,
    pub instant: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Violation {
    /// `symbol` was used at `instant` with no bind at or before it.
    UseBeforeBind { symbol: String, instant: u64 },
    /// `symbol` was bound at `instant` before its prerequisite `requires`.
    BoundBeforePrerequisite { symbol: String, requires: String, instant: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UseBeforeBind { symbol, instant } => write!(f, "{symbol} used at {instant} before any bind"),
            Violation::BoundBeforePrerequisite { symbol, requires, instant } => {
                write!(f, "{symbol} bound at {instant} before {requires}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BindingGraph {
    events: Vec<BindingEvent>,
    dependencies: BTreeSet<(String, String)>,
}

impl BindingGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[BindingEvent] {
        &self.events
    }

    pub fn dependencies(&self) -> &BTreeSet<(String, String)> {
        &self.dependencies
    }

    /// Appends an event. Instants must not go backwards.
    pub fn record(&mut self, symbol: impl Into<String>, kind: EventKind, instant: u64) -> Result<(), BindingError> {
        if let Some(last) = self.events.last() {
            if instant < last.instant {
                return Err(BindingError::Clock { instant, last: last.instant });
            }
        }
        self.events.push(BindingEvent { symbol: symbol.into(), kind, instant });
        Ok(())
    }

    pub fn bind(&mut self, symbol: impl Into<String>, instant: u64) -> Result<(), BindingError> {
        self.record(symbol, EventKind::Bind, instant)
    }

    pub fn use_symbol(&mut self, symbol: impl Into<String>, instant: u64) -> Result<(), BindingError> {
        self.record(symbol, EventKind::Use, instant)
    }

    /// Declares that `before` must be bound before `after`. Rejects edges
    /// that would close a cycle.
    pub fn add_dependency(&mut self, before: impl Into<String>, after: impl Into<String>) -> Result<(), BindingError> {
        let edge = (before.into(), after.into());
        if self.dependencies.contains(&edge) {
            return Ok(());
        }
        let mut deps = self.dependencies.clone();
        deps.insert(edge);
        if let Some(cycle) = find_cycle(&deps) {
            return Err(BindingError::Cycle(cycle));
        }
        self.dependencies = deps;
        Ok(())
    }

    /// Every violation of bind-before-use and of the dependency order.
    /// A bind at the same instant as the use counts as in time.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut first_bind: BTreeMap<&str, u64> = BTreeMap::new();
        for e in &self.events {
            if e.kind == EventKind::Bind {
                first_bind.entry(e.symbol.as_str()).and_modify(|t| *t = (*t).min(e.instant)).or_insert(e.instant);
            }
        }
        let mut violations = Vec::new();
        for e in &self.events {
            match e.kind {
                EventKind::Use => {
                    if first_bind.get(e.symbol.as_str()).is_none_or(|&t| t > e.instant) {
                        violations.push(Violation::UseBeforeBind { symbol: e.symbol.clone(), instant: e.instant });
                    }
                }
                EventKind::Bind => {
                    for (before, _) in self.dependencies.iter().filter(|(_, after)| *after == e.symbol) {
                        if first_bind.get(before.as_str()).is_none_or(|&t| t > e.instant) {
                            violations.push(Violation::BoundBeforePrerequisite {
                                symbol: e.symbol.clone(),
                                requires: before.clone(),
                                instant: e.instant,
                            });
                        }
                    }
                }
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// Plain-text export: one `before -> after` line per dependency, then
    /// one `# instant kind symbol` comment line per event.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (a, b) in &self.dependencies {
            let _ = writeln!(out, "{a} -> {b}");
        }
        for e in &self.events {
            let _ = writeln!(out, "# {} {} {}", e.instant, e.kind, e.symbol);
        }
        out
    }
}

fn adjacency(deps: &BTreeSet<(String, String)>) -> BTreeMap<&str, Vec<&str>> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in deps {
        adj.entry(a.as_str()).or_default().push(b.as_str());
        adj.entry(b.as_str()).or_default();
    }
    adj
}

/// A cycle as a closed path `[a, b, ..., a]`, if one exists.
fn find_cycle(deps: &BTreeSet<(String, String)>) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Unseen,
        OnPath,
        Done,
    }
    fn visit<'a>(
        n: &'a str,
        adj: &BTreeMap<&'a str, Vec<&'a str>>,
        mark: &mut BTreeMap<&'a str, Mark>,
        path: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        mark.insert(n, Mark::OnPath);
        path.push(n);
        for &m in &adj[n] {
            match mark[m] {
                Mark::OnPath => {
                    let from = path.iter().position(|&x| x == m).unwrap();
                    let mut cycle: Vec<String> = path[from..].iter().map(|s| s.to_string()).collect();
                    cycle.push(m.to_string());
                    return Some(cycle);
                }
                Mark::Unseen => {
                    if let Some(c) = visit(m, adj, mark, path) {
                        return Some(c);
                    }
                }
                Mark::Done => {}
            }
        }
        path.pop();
        mark.insert(n, Mark::Done);
        None
    }

    let adj = adjacency(deps);
    let mut mark: BTreeMap<&str, Mark> = adj.keys().map(|&k| (k, Mark::Unseen)).collect();
    let nodes: Vec<&str> = adj.keys().copied().collect();
    for n in nodes {
        if mark[n] == Mark::Unseen {
            if let Some(c) = visit(n, &adj, &mut mark, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

/// All orders in which `symbols` can be bound without breaking a
/// dependency, in lexicographic order. Symbols that only appear in
/// `dependencies` are included.
pub fn legal_orderings(symbols: &[&str], dependencies: &[(&str, &str)]) -> Result<Vec<Vec<String>>, BindingError> {
    let deps: BTreeSet<(String, String)> = dependencies.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    if let Some(cycle) = find_cycle(&deps) {
        return Err(BindingError::Cycle(cycle));
    }
    let mut all: BTreeSet<&str> = symbols.iter().copied().collect();
    for (a, b) in dependencies {
        all.insert(a);
        all.insert(b);
    }
    let mut indegree: BTreeMap<&str, usize> = all.iter().map(|&s| (s, 0)).collect();
    let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in &deps {
        *indegree.get_mut(b.as_str()).unwrap() += 1;
        succ.entry(a.as_str()).or_default().push(b.as_str());
    }

    fn extend<'a>(
        indegree: &mut BTreeMap<&'a str, usize>,
        succ: &BTreeMap<&'a str, Vec<&'a str>>,
        placed: &mut BTreeSet<&'a str>,
        prefix: &mut Vec<&'a str>,
        out: &mut Vec<Vec<String>>,
    ) {
        if prefix.len() == indegree.len() {
            out.push(prefix.iter().map(|s| s.to_string()).collect());
            return;
        }
        let ready: Vec<&str> =
            indegree.iter().filter(|(s, &d)| d == 0 && !placed.contains(*s)).map(|(s, _)| *s).collect();
        for s in ready {
            placed.insert(s);
            prefix.push(s);
            for &t in succ.get(s).into_iter().flatten() {
                *indegree.get_mut(t).unwrap() -= 1;
            }
            extend(indegree, succ, placed, prefix, out);
            for &t in succ.get(s).into_iter().flatten() {
                *indegree.get_mut(t).unwrap() += 1;
            }
            prefix.pop();
            placed.remove(s);
        }
    }

    let mut out = Vec::new();
    extend(&mut indegree, &succ, &mut BTreeSet::new(), &mut Vec::new(), &mut out);
    Ok(out)
}
