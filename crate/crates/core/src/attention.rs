//! Working-memory focus: a small capacity-bounded set of elements ranked by
//! a blend of top-down intent and bottom-up salience, plus the filter that
//! admits only operations whose models are in focus.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::kernel::{EdgeKind, ElementId, MemoryGraph};

pub const MIN_CAPACITY: usize = 5;
pub const MAX_CAPACITY: usize = 9;
pub const DEFAULT_CAPACITY: usize = 7;

/// Capacity-bounded priority set. Order is descending priority with ties
/// broken by ascending element id; the sorts-last entry is evicted first.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusSet {
    capacity: usize,
    entries: BTreeMap<ElementId, f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("UnknownElement: {0}")]
    UnknownElement(ElementId),
    #[error("InvalidCapacity: {0} (allowed 5..=9)")]
    InvalidCapacity(usize),
    #[error("InvalidWeight: {0} (allowed 0..=1)")]
    InvalidWeight(f64),
    #[error("InvalidPriority: priorities must be finite and nonnegative, got {0}")]
    InvalidPriority(f64),
}

impl Default for FocusSet {
    fn default() -> Self {
        FocusSet { capacity: DEFAULT_CAPACITY, entries: BTreeMap::new() }
    }
}

impl FocusSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Result<Self, AttentionError> {
        if !(MIN_CAPACITY..=MAX_CAPACITY).contains(&capacity) {
            return Err(AttentionError::InvalidCapacity(capacity));
        }
        Ok(FocusSet { capacity, entries: BTreeMap::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, element: ElementId) -> bool {
        self.entries.contains_key(&element)
    }

    pub fn priority(&self, element: ElementId) -> Option<f64> {
        self.entries.get(&element).copied()
    }

    /// Entries in attention order: descending priority, ties by ascending id.
    pub fn ordered(&self) -> Vec<(ElementId, f64)> {
        let mut out: Vec<(ElementId, f64)> = self.entries.iter().map(|(&e, &p)| (e, p)).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Bring an element into focus with priority
    /// `w * internal + (1 - w) * external`. Returns the evicted element when
    /// the insert pushed the set over capacity. Re-attending an element
    /// already in focus only updates its priority and never evicts.
    pub fn attend(
        &mut self,
        graph: &MemoryGraph,
        element: ElementId,
        w: f64,
        internal: f64,
        external: f64,
    ) -> Result<Option<ElementId>, AttentionError> {
        if !graph.contains(element) {
            return Err(AttentionError::UnknownElement(element));
        }
        if !(0.0..=1.0).contains(&w) || w.is_nan() {
            return Err(AttentionError::InvalidWeight(w));
        }
        for p in [internal, external] {
            if !p.is_finite() || p < 0.0 {
                return Err(AttentionError::InvalidPriority(p));
            }
        }
        let priority = w * internal + (1.0 - w) * external;
        let already = self.entries.insert(element, priority).is_some();
        if already || self.entries.len() <= self.capacity {
            return Ok(None);
        }
        let (victim, _) = *self.ordered().last().expect("set is over capacity, so nonempty");
        self.entries.remove(&victim);
        Ok(Some(victim))
    }

    pub fn remove(&mut self, element: ElementId) -> bool {
        self.entries.remove(&element).is_some()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// An operation candidate: a name plus the elements it touches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateOp {
    pub name: String,
    pub participants: Vec<ElementId>,
}

impl CandidateOp {
    pub fn new(name: impl Into<String>, participants: Vec<ElementId>) -> Self {
        CandidateOp { name: name.into(), participants }
    }
}

/// Outcome of filtering one candidate list: indices that passed, and for
/// each rejected index the models that would have to be in focus.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FilterReport {
    pub permitted: Vec<usize>,
    pub rejected: Vec<(usize, Vec<ElementId>)>,
}

/// Admit the operations all of whose participants are covered by the focus:
/// a participant counts as covered when it or one of its direct classes is
/// in focus. An empty focus admits nothing.
pub fn focus_filter(focus: &FocusSet, graph: &MemoryGraph, ops: &[CandidateOp]) -> FilterReport {
    let mut report = FilterReport::default();
    for (i, op) in ops.iter().enumerate() {
        if focus.is_empty() {
            report.rejected.push((i, missing_models(graph, &op.participants)));
            continue;
        }
        let mut missing = Vec::new();
        for &p in &op.participants {
            if covered(focus, graph, p) {
                continue;
            }
            missing.extend(missing_models(graph, &[p]));
        }
        missing.sort_unstable();
        missing.dedup();
        if missing.is_empty() {
            report.permitted.push(i);
        } else {
            report.rejected.push((i, missing));
        }
    }
    report
}

fn covered(focus: &FocusSet, graph: &MemoryGraph, participant: ElementId) -> bool {
    if focus.contains(participant) {
        return true;
    }
    graph
        .edges_from(participant, EdgeKind::InstanceOf)
        .iter()
        .any(|e| focus.contains(e.dst))
}

/// The model that would cover a participant: its lowest-id direct class, or
/// the participant itself when it has no class.
fn missing_models(graph: &MemoryGraph, participants: &[ElementId]) -> Vec<ElementId> {
    let mut out = Vec::new();
    for &p in participants {
        let class = graph
            .edges_from(p, EdgeKind::InstanceOf)
            .iter()
            .map(|e| e.dst)
            .min();
        out.push(class.unwrap_or(p));
    }
    out.sort_unstable();
    out.dedup();
    out
}
