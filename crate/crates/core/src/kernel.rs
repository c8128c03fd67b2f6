//! The memory graph: elements, typed associations, prior-knowledge
//! statistics, and forgetting.
//!
//! Elements are never implicitly deleted; forgetting decays consolidation
//! and prunes weak non-structural edges only. All query results are
//! deterministic (ties broken by ascending id).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of an element. Assigned sequentially from 0, never reused.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ElementId(pub u64);

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Handle of a stored association edge.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct EdgeId(pub u64);

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    Object,
    Action,
    Attribute,
    Relation,
    Value,
    EventClass,
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ElementKind::Object => "Object",
            ElementKind::Action => "Action",
            ElementKind::Attribute => "Attribute",
            ElementKind::Relation => "Relation",
            ElementKind::Value => "Value",
            ElementKind::EventClass => "EventClass",
        };
        f.write_str(s)
    }
}

/// Association kinds. `Synonym` and `Antonym` are symmetric: stored once,
/// queryable from both endpoints. `IsA`/`InstanceOf` form the abstraction
/// hierarchy and must stay acyclic. `InstanceOf` and `PartOf` are structural
/// and never auto-pruned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    IsA,
    InstanceOf,
    PartOf,
    Has,
    ValueOf,
    AdmissibleAction,
    Synonym,
    Antonym,
}

impl EdgeKind {
    pub fn is_symmetric(self) -> bool {
        matches!(self, EdgeKind::Synonym | EdgeKind::Antonym)
    }

    pub fn is_structural(self) -> bool {
        matches!(self, EdgeKind::InstanceOf | EdgeKind::PartOf)
    }

    pub fn is_hierarchy(self) -> bool {
        matches!(self, EdgeKind::IsA | EdgeKind::InstanceOf)
    }

    pub const ALL: [EdgeKind; 8] = [
        EdgeKind::IsA,
        EdgeKind::InstanceOf,
        EdgeKind::PartOf,
        EdgeKind::Has,
        EdgeKind::ValueOf,
        EdgeKind::AdmissibleAction,
        EdgeKind::Synonym,
        EdgeKind::Antonym,
    ];
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EdgeKind::IsA => "is-a",
            EdgeKind::InstanceOf => "instance-of",
            EdgeKind::PartOf => "part-of",
            EdgeKind::Has => "has",
            EdgeKind::ValueOf => "value-of",
            EdgeKind::AdmissibleAction => "admissible-action",
            EdgeKind::Synonym => "synonym",
            EdgeKind::Antonym => "antonym",
        };
        f.write_str(s)
    }
}

/// Prior-knowledge statistics carried by every element and edge.
///
/// `visits = 0` implies `uncertainty = 1` and `consolidation = 0`. A touch
/// sets `uncertainty = 1/(1+visits)` and moves consolidation geometrically
/// toward 1, so after n touches at the default step `consolidation = 1 - 0.9^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub visits: u64,
    pub uncertainty: f64,
    pub update_rate: f64,
    pub consolidation: f64,
}

impl Default for Stats {
    fn default() -> Self {
        Stats { visits: 0, uncertainty: 1.0, update_rate: 0.0, consolidation: 0.0 }
    }
}

impl Stats {
    fn touch(&mut self, alpha: f64, rate_smoothing: f64) {
        self.visits += 1;
        self.uncertainty = 1.0 / (1.0 + self.visits as f64);
        self.consolidation += alpha * (1.0 - self.consolidation);
        self.update_rate = rate_smoothing * self.update_rate + (1.0 - rate_smoothing);
    }

    fn decay(&mut self, keep: f64) {
        self.consolidation *= keep;
    }

    pub fn in_range(&self) -> bool {
        (0.0..=1.0).contains(&self.uncertainty)
            && (0.0..=1.0).contains(&self.consolidation)
            && self.update_rate >= 0.0
            && (self.visits > 0 || (self.uncertainty == 1.0 && self.consolidation == 0.0))
    }
}

/// A node of the memory graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub id: ElementId,
    pub kind: ElementKind,
    pub name: Option<String>,
    /// Abstraction level: 0 = instance, >= 1 = class levels.
    pub level: u32,
    /// Temporal topmost-level flag; transient elements live only in the
    /// current session and are excluded from snapshots.
    pub transient: bool,
    pub stats: Stats,
}

/// A typed directed association. `value` is the payload of `Has` edges:
/// the value element currently assigned to the attribute, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationEdge {
    pub id: EdgeId,
    pub src: ElementId,
    pub dst: ElementId,
    pub kind: EdgeKind,
    pub strength: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<ElementId>,
    pub stats: Stats,
}

/// One attribute binding as reported by [`MemoryGraph::attributes_of`]:
/// the attribute element, its assigned value (if any), and the element
/// whose `Has` edge supplied the binding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeBinding {
    pub attribute: ElementId,
    pub value: Option<ElementId>,
    pub provenance: ElementId,
}

/// Tunable constants for statistics updates and pruning.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Consolidation step per touch.
    pub alpha: f64,
    /// Exponential smoothing factor for `update_rate`.
    pub rate_smoothing: f64,
    /// Edges whose consolidation falls below this floor are pruned by
    /// `forget` (structural kinds excepted).
    pub sparsify_floor: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { alpha: 0.1, rate_smoothing: 0.9, sparsify_floor: 0.0 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("UnknownElement: element {0} does not exist")]
    UnknownElement(ElementId),
    #[error("UnknownEdge: edge {0} does not exist")]
    UnknownEdge(EdgeId),
    #[error("CycleViolation: edge {src} -> {dst} would close an is-a/instance-of cycle")]
    CycleViolation { src: ElementId, dst: ElementId },
    #[error("LevelViolation: {kind} edge {src} (level {src_level}) -> {dst} (level {dst_level})")]
    LevelViolation { kind: EdgeKind, src: ElementId, src_level: u32, dst: ElementId, dst_level: u32 },
    #[error("KindViolation: is-a edge requires equal element kinds, got {src_kind} -> {dst_kind}")]
    KindViolation { src_kind: ElementKind, dst_kind: ElementKind },
    #[error("InvalidDecay: decay must lie in the open interval (0,1), got {0}")]
    InvalidDecay(f64),
    #[error("InvalidConsolidation: value must lie in [0,1], got {0}")]
    InvalidConsolidation(f64),
}

/// The memory graph: elements plus a multiset of association edges indexed
/// by `(endpoint, kind)` in both directions.
#[derive(Debug, Clone, Default)]
pub struct MemoryGraph {
    elements: BTreeMap<ElementId, Element>,
    edges: BTreeMap<EdgeId, AssociationEdge>,
    out_index: BTreeMap<(ElementId, EdgeKind), Vec<EdgeId>>,
    in_index: BTreeMap<(ElementId, EdgeKind), Vec<EdgeId>>,
    next_element: u64,
    next_edge: u64,
    /// Transient classes created by temporal abstraction, cleared per session.
    session_pool: BTreeSet<ElementId>,
    pub config: GraphConfig,
}

impl MemoryGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_config(config: GraphConfig) -> Self {
        MemoryGraph { config, ..Self::default() }
    }

    // --- elements ---------------------------------------------------------

    /// Add a fresh element with zeroed statistics. Empty names are treated
    /// as absent.
    pub fn add_element(
        &mut self,
        kind: ElementKind,
        name: Option<&str>,
        level: u32,
    ) -> ElementId {
        self.insert_element(kind, name, level, false)
    }

    /// Add a transient (temporal topmost-level) element. Requires level >= 1;
    /// the element is registered in the session pool and excluded from
    /// snapshots.
    pub fn add_transient_element(
        &mut self,
        kind: ElementKind,
        name: Option<&str>,
        level: u32,
    ) -> ElementId {
        assert!(level >= 1, "transient elements are class-level");
        let id = self.insert_element(kind, name, level, true);
        self.session_pool.insert(id);
        id
    }

    fn insert_element(
        &mut self,
        kind: ElementKind,
        name: Option<&str>,
        level: u32,
        transient: bool,
    ) -> ElementId {
        let id = ElementId(self.next_element);
        self.next_element += 1;
        let name = name.filter(|n| !n.is_empty()).map(str::to_owned);
        self.elements.insert(
            id,
            Element { id, kind, name, level, transient, stats: Stats::default() },
        );
        id
    }

    pub fn element(&self, id: ElementId) -> Option<&Element> {
        self.elements.get(&id)
    }

    pub fn require_element(&self, id: ElementId) -> Result<&Element, KernelError> {
        self.elements.get(&id).ok_or(KernelError::UnknownElement(id))
    }

    pub fn contains(&self, id: ElementId) -> bool {
        self.elements.contains_key(&id)
    }

    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.elements.values()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    /// Elements with the given name, ascending by id.
    pub fn find_by_name(&self, name: &str) -> Vec<ElementId> {
        self.elements
            .values()
            .filter(|e| e.name.as_deref() == Some(name))
            .map(|e| e.id)
            .collect()
    }

    /// The interned `Value` element with this text, created on first use.
    pub fn intern_value(&mut self, text: &str) -> ElementId {
        let found = self
            .elements
            .values()
            .find(|e| e.kind == ElementKind::Value && e.level == 0 && e.name.as_deref() == Some(text))
            .map(|e| e.id);
        found.unwrap_or_else(|| self.add_element(ElementKind::Value, Some(text), 0))
    }

    /// Explicit element deletion. Removes all incident edges; the id is
    /// never reused.
    pub fn remove_element(&mut self, id: ElementId) -> Result<(), KernelError> {
        if !self.elements.contains_key(&id) {
            return Err(KernelError::UnknownElement(id));
        }
        let incident: Vec<EdgeId> = self
            .edges
            .values()
            .filter(|e| e.src == id || e.dst == id)
            .map(|e| e.id)
            .collect();
        for eid in incident {
            self.remove_edge(eid);
        }
        self.elements.remove(&id);
        self.session_pool.remove(&id);
        Ok(())
    }

    // --- edges ------------------------------------------------------------

    /// Add a typed edge. Checks endpoint existence, level constraints, and
    /// acyclicity of the is-a/instance-of subgraph. Strength is clamped to
    /// [0,1].
    pub fn add_edge(
        &mut self,
        src: ElementId,
        dst: ElementId,
        kind: EdgeKind,
        strength: f64,
    ) -> Result<EdgeId, KernelError> {
        let (src_el, dst_el) = (self.require_element(src)?.clone(), self.require_element(dst)?.clone());
        match kind {
            EdgeKind::IsA => {
                if src_el.kind != dst_el.kind {
                    return Err(KernelError::KindViolation {
                        src_kind: src_el.kind,
                        dst_kind: dst_el.kind,
                    });
                }
                if dst_el.level < src_el.level {
                    return Err(KernelError::LevelViolation {
                        kind,
                        src,
                        src_level: src_el.level,
                        dst,
                        dst_level: dst_el.level,
                    });
                }
            }
            EdgeKind::InstanceOf if src_el.level + 1 != dst_el.level => {
                return Err(KernelError::LevelViolation {
                    kind,
                    src,
                    src_level: src_el.level,
                    dst,
                    dst_level: dst_el.level,
                });
            }
            _ => {}
        }
        if kind.is_hierarchy() && (src == dst || self.hierarchy_reaches(dst, src)) {
            return Err(KernelError::CycleViolation { src, dst });
        }
        Ok(self.insert_edge(src, dst, kind, strength, None))
    }

    fn insert_edge(
        &mut self,
        src: ElementId,
        dst: ElementId,
        kind: EdgeKind,
        strength: f64,
        value: Option<ElementId>,
    ) -> EdgeId {
        let id = EdgeId(self.next_edge);
        self.next_edge += 1;
        let edge = AssociationEdge {
            id,
            src,
            dst,
            kind,
            strength: strength.clamp(0.0, 1.0),
            value,
            stats: Stats::default(),
        };
        self.out_index.entry((src, kind)).or_default().push(id);
        self.in_index.entry((dst, kind)).or_default().push(id);
        if kind.is_symmetric() && src != dst {
            self.out_index.entry((dst, kind)).or_default().push(id);
            self.in_index.entry((src, kind)).or_default().push(id);
        }
        self.edges.insert(id, edge);
        id
    }

    pub fn edge(&self, id: EdgeId) -> Option<&AssociationEdge> {
        self.edges.get(&id)
    }

    pub fn require_edge(&self, id: EdgeId) -> Result<&AssociationEdge, KernelError> {
        self.edges.get(&id).ok_or(KernelError::UnknownEdge(id))
    }

    pub fn edges(&self) -> impl Iterator<Item = &AssociationEdge> {
        self.edges.values()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn remove_edge(&mut self, id: EdgeId) -> Option<AssociationEdge> {
        let edge = self.edges.remove(&id)?;
        let unindex = |index: &mut BTreeMap<(ElementId, EdgeKind), Vec<EdgeId>>, key: (ElementId, EdgeKind)| {
            if let Some(v) = index.get_mut(&key) {
                v.retain(|&e| e != id);
                if v.is_empty() {
                    index.remove(&key);
                }
            }
        };
        unindex(&mut self.out_index, (edge.src, edge.kind));
        unindex(&mut self.in_index, (edge.dst, edge.kind));
        if edge.kind.is_symmetric() && edge.src != edge.dst {
            unindex(&mut self.out_index, (edge.dst, edge.kind));
            unindex(&mut self.in_index, (edge.src, edge.kind));
        }
        Some(edge)
    }

    /// Edges of `kind` leaving `e` (both directions for symmetric kinds),
    /// ascending by edge id.
    pub fn edges_from(&self, e: ElementId, kind: EdgeKind) -> Vec<&AssociationEdge> {
        let mut ids: Vec<EdgeId> =
            self.out_index.get(&(e, kind)).cloned().unwrap_or_default();
        ids.sort_unstable();
        ids.dedup();
        ids.iter().filter_map(|id| self.edges.get(id)).collect()
    }

    /// Edges of `kind` arriving at `e` (both directions for symmetric kinds),
    /// ascending by edge id.
    pub fn edges_to(&self, e: ElementId, kind: EdgeKind) -> Vec<&AssociationEdge> {
        let mut ids: Vec<EdgeId> = self.in_index.get(&(e, kind)).cloned().unwrap_or_default();
        ids.sort_unstable();
        ids.dedup();
        ids.iter().filter_map(|id| self.edges.get(id)).collect()
    }

    /// The neighbor on the far side of an edge as seen from `e`.
    pub fn other_endpoint(edge: &AssociationEdge, e: ElementId) -> ElementId {
        if edge.src == e {
            edge.dst
        } else {
            edge.src
        }
    }

    // --- attributes -------------------------------------------------------

    /// Assign (or clear) the value of an attribute on `owner`. Reuses the
    /// existing `Has` edge when present, preserving its statistics.
    pub fn set_attribute(
        &mut self,
        owner: ElementId,
        attribute: ElementId,
        value: Option<ElementId>,
    ) -> Result<EdgeId, KernelError> {
        self.require_element(owner)?;
        self.require_element(attribute)?;
        if let Some(v) = value {
            self.require_element(v)?;
        }
        let existing = self
            .out_index
            .get(&(owner, EdgeKind::Has))
            .and_then(|ids| {
                ids.iter().find(|id| self.edges[id].dst == attribute).copied()
            });
        if let Some(id) = existing {
            self.edges.get_mut(&id).expect("indexed edge exists").value = value;
            Ok(id)
        } else {
            Ok(self.insert_edge(owner, attribute, EdgeKind::Has, 1.0, value))
        }
    }

    /// Attributes visible on `e`: its own `Has` edges first, then the ones
    /// inherited along the instance-of/is-a closure. A nearer definition of
    /// the same attribute shadows farther ones.
    pub fn attributes_of(&self, e: ElementId) -> Result<Vec<AttributeBinding>, KernelError> {
        self.require_element(e)?;
        let mut seen: BTreeSet<ElementId> = BTreeSet::new();
        let mut out = Vec::new();
        let mut sources = vec![e];
        sources.extend(self.closure(e, &[EdgeKind::InstanceOf, EdgeKind::IsA])?);
        for src in sources {
            let mut own: Vec<&AssociationEdge> = self.edges_from(src, EdgeKind::Has);
            own.sort_by_key(|edge| edge.dst);
            for edge in own {
                if seen.insert(edge.dst) {
                    out.push(AttributeBinding {
                        attribute: edge.dst,
                        value: edge.value,
                        provenance: src,
                    });
                }
            }
        }
        Ok(out)
    }

    // --- traversal --------------------------------------------------------

    /// Transitive closure over the given edge kinds, breadth-first from `e`
    /// (excluded), ties within a frontier by ascending id. Symmetric kinds
    /// are followed in both directions, directed kinds from src to dst.
    pub fn closure(&self, e: ElementId, kinds: &[EdgeKind]) -> Result<Vec<ElementId>, KernelError> {
        self.require_element(e)?;
        let mut visited: BTreeSet<ElementId> = BTreeSet::new();
        visited.insert(e);
        let mut order = Vec::new();
        let mut frontier = vec![e];
        while !frontier.is_empty() {
            let mut next: BTreeSet<ElementId> = BTreeSet::new();
            for &node in &frontier {
                for &kind in kinds {
                    for edge in self.edges_from(node, kind) {
                        let nb = Self::other_endpoint(edge, node);
                        if !visited.contains(&nb) {
                            next.insert(nb);
                        }
                    }
                }
            }
            frontier = next.into_iter().collect();
            for &n in &frontier {
                visited.insert(n);
                order.push(n);
            }
        }
        Ok(order)
    }

    /// True if `from` reaches `to` along is-a/instance-of edges.
    fn hierarchy_reaches(&self, from: ElementId, to: ElementId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if !seen.insert(n) {
                continue;
            }
            for kind in [EdgeKind::IsA, EdgeKind::InstanceOf] {
                for edge in self.edges_from(n, kind) {
                    stack.push(edge.dst);
                }
            }
        }
        false
    }

    /// Topological check over the is-a/instance-of subgraph. `add_edge`
    /// preserves this; the check exists for test-mode verification.
    pub fn hierarchy_is_acyclic(&self) -> bool {
        let mut indegree: BTreeMap<ElementId, usize> =
            self.elements.keys().map(|&id| (id, 0)).collect();
        for edge in self.edges.values() {
            if edge.kind.is_hierarchy() {
                *indegree.get_mut(&edge.dst).expect("endpoint exists") += 1;
            }
        }
        let mut queue: Vec<ElementId> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut removed = 0usize;
        while let Some(n) = queue.pop() {
            removed += 1;
            for kind in [EdgeKind::IsA, EdgeKind::InstanceOf] {
                for edge in self.edges_from(n, kind) {
                    let d = indegree.get_mut(&edge.dst).expect("endpoint exists");
                    *d -= 1;
                    if *d == 0 {
                        queue.push(edge.dst);
                    }
                }
            }
        }
        removed == self.elements.len()
    }

    // --- statistics -------------------------------------------------------

    /// Record a visit: increments visits, tightens uncertainty, moves
    /// consolidation toward 1.
    pub fn touch(&mut self, e: ElementId) -> Result<Stats, KernelError> {
        let (alpha, smoothing) = (self.config.alpha, self.config.rate_smoothing);
        let el = self
            .elements
            .get_mut(&e)
            .ok_or(KernelError::UnknownElement(e))?;
        el.stats.touch(alpha, smoothing);
        Ok(el.stats)
    }

    pub fn touch_edge(&mut self, id: EdgeId) -> Result<Stats, KernelError> {
        let (alpha, smoothing) = (self.config.alpha, self.config.rate_smoothing);
        let edge = self.edges.get_mut(&id).ok_or(KernelError::UnknownEdge(id))?;
        edge.stats.touch(alpha, smoothing);
        Ok(edge.stats)
    }

    pub fn set_element_consolidation(
        &mut self,
        e: ElementId,
        value: f64,
    ) -> Result<(), KernelError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(KernelError::InvalidConsolidation(value));
        }
        let el = self
            .elements
            .get_mut(&e)
            .ok_or(KernelError::UnknownElement(e))?;
        el.stats.consolidation = value;
        Ok(())
    }

    pub fn set_edge_consolidation(&mut self, id: EdgeId, value: f64) -> Result<(), KernelError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(KernelError::InvalidConsolidation(value));
        }
        let edge = self.edges.get_mut(&id).ok_or(KernelError::UnknownEdge(id))?;
        edge.stats.consolidation = value;
        Ok(())
    }

    /// The inverse of consolidation: scale every consolidation (elements and
    /// edges) by `1 - decay`, then prune non-structural edges that fell below
    /// the configured sparsification floor. Returns the pruned edge count.
    /// Elements are never removed.
    pub fn forget(&mut self, decay: f64) -> Result<usize, KernelError> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(KernelError::InvalidDecay(decay));
        }
        let keep = 1.0 - decay;
        for el in self.elements.values_mut() {
            el.stats.decay(keep);
        }
        for edge in self.edges.values_mut() {
            edge.stats.decay(keep);
        }
        Ok(self.sparsify(self.config.sparsify_floor))
    }

    /// Prune non-structural edges with consolidation below `floor`.
    /// Instance-of and part-of edges are never auto-pruned.
    pub fn sparsify(&mut self, floor: f64) -> usize {
        let doomed: Vec<EdgeId> = self
            .edges
            .values()
            .filter(|e| !e.kind.is_structural() && e.stats.consolidation < floor)
            .map(|e| e.id)
            .collect();
        for id in &doomed {
            self.remove_edge(*id);
        }
        doomed.len()
    }

    // --- session pool -----------------------------------------------------

    pub fn session_pool(&self) -> &BTreeSet<ElementId> {
        &self.session_pool
    }

    /// Remove all transient classes and their edges.
    pub fn clear_session(&mut self) {
        let pool: Vec<ElementId> = self.session_pool.iter().copied().collect();
        for id in pool {
            let _ = self.remove_element(id);
        }
        self.session_pool.clear();
    }

    // --- snapshot support ---------------------------------------------------

    pub(crate) fn next_ids(&self) -> (u64, u64) {
        (self.next_element, self.next_edge)
    }

    /// Raise the id counters to at least the given values. Keeps ids of
    /// elements dropped before a save (transient ones) from being reused.
    pub(crate) fn resume_ids(&mut self, next_element: u64, next_edge: u64) {
        self.next_element = self.next_element.max(next_element);
        self.next_edge = self.next_edge.max(next_edge);
    }

    /// Rebuild a graph from raw parts (snapshot load). Indices are
    /// reconstructed; id counters resume past the highest seen id.
    pub(crate) fn from_parts(
        elements: Vec<Element>,
        edges: Vec<AssociationEdge>,
        config: GraphConfig,
    ) -> Result<Self, KernelError> {
        let mut g = MemoryGraph { config, ..Self::default() };
        for el in elements {
            g.next_element = g.next_element.max(el.id.0 + 1);
            if el.transient {
                g.session_pool.insert(el.id);
            }
            g.elements.insert(el.id, el);
        }
        for edge in edges {
            g.require_element(edge.src)?;
            g.require_element(edge.dst)?;
            g.next_edge = g.next_edge.max(edge.id.0 + 1);
            let id = edge.id;
            let (src, dst, kind) = (edge.src, edge.dst, edge.kind);
            g.out_index.entry((src, kind)).or_default().push(id);
            g.in_index.entry((dst, kind)).or_default().push(id);
            if kind.is_symmetric() && src != dst {
                g.out_index.entry((dst, kind)).or_default().push(id);
                g.in_index.entry((src, kind)).or_default().push(id);
            }
            g.edges.insert(id, edge);
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(g: &mut MemoryGraph, name: &str, level: u32) -> ElementId {
        g.add_element(ElementKind::Object, Some(name), level)
    }

    #[test]
    fn fresh_element_has_zeroed_stats() {
        let mut g = MemoryGraph::new();
        let id = obj(&mut g, "David", 0);
        assert_eq!(id, ElementId(0));
        let el = g.element(id).unwrap();
        assert_eq!(el.stats, Stats::default());
        assert_eq!(el.stats.uncertainty, 1.0);
        assert_eq!(el.stats.consolidation, 0.0);
    }

    #[test]
    fn event_class_at_level_one() {
        let mut g = MemoryGraph::new();
        let id = g.add_element(ElementKind::EventClass, Some("SearchEvent"), 1);
        assert_eq!(g.element(id).unwrap().level, 1);
    }

    #[test]
    fn thousand_elements_get_distinct_sequential_ids() {
        let mut g = MemoryGraph::new();
        let ids: Vec<ElementId> = (0..1000).map(|i| obj(&mut g, &format!("e{i}"), 0)).collect();
        let unique: BTreeSet<_> = ids.iter().collect();
        assert_eq!(unique.len(), 1000);
        assert_eq!(ids[0], ElementId(0));
        assert_eq!(ids[999], ElementId(999));
    }

    #[test]
    fn isa_edge_between_classes() {
        let mut g = MemoryGraph::new();
        let square = obj(&mut g, "square", 1);
        let polygon = obj(&mut g, "polygon", 1);
        assert!(g.add_edge(square, polygon, EdgeKind::IsA, 1.0).is_ok());
    }

    #[test]
    fn self_isa_loop_rejected() {
        let mut g = MemoryGraph::new();
        let x = obj(&mut g, "x", 1);
        assert_eq!(
            g.add_edge(x, x, EdgeKind::IsA, 1.0),
            Err(KernelError::CycleViolation { src: x, dst: x })
        );
    }

    #[test]
    fn isa_chain_cycle_rejected() {
        // oracle: DFS over the hierarchy closure
        let mut g = MemoryGraph::new();
        let a = obj(&mut g, "a", 1);
        let b = obj(&mut g, "b", 1);
        let c = obj(&mut g, "c", 1);
        g.add_edge(a, b, EdgeKind::IsA, 1.0).unwrap();
        g.add_edge(b, c, EdgeKind::IsA, 1.0).unwrap();
        assert!(matches!(
            g.add_edge(c, a, EdgeKind::IsA, 1.0),
            Err(KernelError::CycleViolation { .. })
        ));
        assert!(g.hierarchy_is_acyclic());
    }

    #[test]
    fn instance_of_needs_one_level_gap() {
        let mut g = MemoryGraph::new();
        let inst = obj(&mut g, "david", 0);
        let class = obj(&mut g, "person", 1);
        let meta = obj(&mut g, "agent-kind", 2);
        assert!(g.add_edge(inst, class, EdgeKind::InstanceOf, 1.0).is_ok());
        assert!(matches!(
            g.add_edge(inst, meta, EdgeKind::InstanceOf, 1.0),
            Err(KernelError::LevelViolation { .. })
        ));
    }

    #[test]
    fn isa_level_and_kind_constraints() {
        let mut g = MemoryGraph::new();
        let high = obj(&mut g, "high", 2);
        let low = obj(&mut g, "low", 1);
        assert!(matches!(
            g.add_edge(high, low, EdgeKind::IsA, 1.0),
            Err(KernelError::LevelViolation { .. })
        ));
        let act = g.add_element(ElementKind::Action, Some("run"), 1);
        assert!(matches!(
            g.add_edge(low, act, EdgeKind::IsA, 1.0),
            Err(KernelError::KindViolation { .. })
        ));
    }

    #[test]
    fn unknown_endpoint_rejected() {
        let mut g = MemoryGraph::new();
        let a = obj(&mut g, "a", 0);
        assert_eq!(
            g.add_edge(a, ElementId(99), EdgeKind::Has, 1.0),
            Err(KernelError::UnknownElement(ElementId(99)))
        );
    }

    #[test]
    fn closure_follows_chain_breadth_first() {
        let mut g = MemoryGraph::new();
        let david = obj(&mut g, "David", 0);
        let person = obj(&mut g, "Person", 1);
        let agent = obj(&mut g, "Agent", 1);
        g.add_edge(david, person, EdgeKind::InstanceOf, 1.0).unwrap();
        g.add_edge(person, agent, EdgeKind::IsA, 1.0).unwrap();
        let c = g.closure(david, &[EdgeKind::InstanceOf, EdgeKind::IsA]).unwrap();
        assert_eq!(c, vec![person, agent]);
    }

    #[test]
    fn closure_of_isolated_element_is_empty() {
        let mut g = MemoryGraph::new();
        let e = obj(&mut g, "lonely", 0);
        assert!(g.closure(e, &[EdgeKind::IsA, EdgeKind::Has]).unwrap().is_empty());
    }

    #[test]
    fn closure_diamond_visits_once() {
        let mut g = MemoryGraph::new();
        let a = obj(&mut g, "a", 1);
        let b = obj(&mut g, "b", 1);
        let c = obj(&mut g, "c", 1);
        let d = obj(&mut g, "d", 2);
        g.add_edge(a, b, EdgeKind::IsA, 1.0).unwrap();
        g.add_edge(a, c, EdgeKind::IsA, 1.0).unwrap();
        g.add_edge(b, d, EdgeKind::IsA, 1.0).unwrap();
        g.add_edge(c, d, EdgeKind::IsA, 1.0).unwrap();
        assert_eq!(g.closure(a, &[EdgeKind::IsA]).unwrap(), vec![b, c, d]);
    }

    #[test]
    fn closure_is_idempotent() {
        let mut g = MemoryGraph::new();
        let a = obj(&mut g, "a", 1);
        let b = obj(&mut g, "b", 1);
        let c = obj(&mut g, "c", 2);
        g.add_edge(a, b, EdgeKind::IsA, 1.0).unwrap();
        g.add_edge(b, c, EdgeKind::IsA, 1.0).unwrap();
        let first: BTreeSet<ElementId> =
            g.closure(a, &[EdgeKind::IsA]).unwrap().into_iter().collect();
        let mut again: BTreeSet<ElementId> = first.clone();
        for &m in &first {
            again.extend(g.closure(m, &[EdgeKind::IsA]).unwrap());
        }
        assert_eq!(first, again);
    }

    #[test]
    fn synonym_queryable_from_both_ends() {
        let mut g = MemoryGraph::new();
        let couch = obj(&mut g, "couch", 0);
        let sofa = obj(&mut g, "sofa", 0);
        g.add_edge(couch, sofa, EdgeKind::Synonym, 1.0).unwrap();
        assert_eq!(g.closure(couch, &[EdgeKind::Synonym]).unwrap(), vec![sofa]);
        assert_eq!(g.closure(sofa, &[EdgeKind::Synonym]).unwrap(), vec![couch]);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn attributes_of_own_binding() {
        let mut g = MemoryGraph::new();
        let keys = obj(&mut g, "keys", 0);
        let location = g.add_element(ElementKind::Attribute, Some("location"), 0);
        let desk = obj(&mut g, "desk", 0);
        g.set_attribute(keys, location, Some(desk)).unwrap();
        assert_eq!(
            g.attributes_of(keys).unwrap(),
            vec![AttributeBinding { attribute: location, value: Some(desk), provenance: keys }]
        );
    }

    #[test]
    fn attributes_of_bare_element_is_empty() {
        let mut g = MemoryGraph::new();
        let e = obj(&mut g, "bare", 0);
        assert!(g.attributes_of(e).unwrap().is_empty());
    }

    #[test]
    fn instance_value_shadows_class_default() {
        // oracle: nearest-ancestor scan
        let mut g = MemoryGraph::new();
        let ball = obj(&mut g, "ball", 0);
        let toy = obj(&mut g, "Toy", 1);
        let color = g.add_element(ElementKind::Attribute, Some("color"), 0);
        let red = g.intern_value("red");
        let blue = g.intern_value("blue");
        g.add_edge(ball, toy, EdgeKind::InstanceOf, 1.0).unwrap();
        g.set_attribute(toy, color, Some(red)).unwrap();
        g.set_attribute(ball, color, Some(blue)).unwrap();
        let attrs = g.attributes_of(ball).unwrap();
        assert_eq!(attrs.len(), 1);
        assert_eq!(attrs[0].value, Some(blue));
        assert_eq!(attrs[0].provenance, ball);
        // without the override the class default is inherited
        let bare = obj(&mut g, "ball2", 0);
        g.add_edge(bare, toy, EdgeKind::InstanceOf, 1.0).unwrap();
        let attrs = g.attributes_of(bare).unwrap();
        assert_eq!(attrs[0].value, Some(red));
        assert_eq!(attrs[0].provenance, toy);
    }

    #[test]
    fn touch_updates_match_closed_forms() {
        let mut g = MemoryGraph::new();
        let e = obj(&mut g, "e", 0);
        let s = g.touch(e).unwrap();
        assert_eq!(s.visits, 1);
        assert_eq!(s.uncertainty, 0.5);
        assert!((s.consolidation - 0.1).abs() < 1e-15);
        for _ in 0..9 {
            g.touch(e).unwrap();
        }
        let s = g.element(e).unwrap().stats;
        assert_eq!(s.visits, 10);
        assert_eq!(s.uncertainty, 1.0 / 11.0);
        assert!((s.consolidation - (1.0 - 0.9f64.powi(10))).abs() < 1e-12);
    }

    #[test]
    fn touch_is_monotone() {
        let mut g = MemoryGraph::new();
        let e = obj(&mut g, "e", 0);
        let mut last = g.element(e).unwrap().stats;
        for _ in 0..50 {
            let s = g.touch(e).unwrap();
            assert!(s.visits > last.visits);
            assert!(s.consolidation >= last.consolidation);
            assert!(s.in_range());
            last = s;
        }
    }

    #[test]
    fn forget_rejects_boundary_decays() {
        let mut g = MemoryGraph::new();
        assert_eq!(g.forget(0.0), Err(KernelError::InvalidDecay(0.0)));
        assert_eq!(g.forget(1.0), Err(KernelError::InvalidDecay(1.0)));
        // decay approaching 0 changes nothing measurable
        let e = obj(&mut g, "e", 0);
        g.touch(e).unwrap();
        let before = g.element(e).unwrap().stats.consolidation;
        g.forget(1e-15).unwrap();
        assert!((g.element(e).unwrap().stats.consolidation - before).abs() < 1e-12);
    }

    #[test]
    fn forget_prunes_below_floor() {
        let mut g = MemoryGraph::with_config(GraphConfig { sparsify_floor: 0.04, ..Default::default() });
        let a = obj(&mut g, "a", 0);
        let b = obj(&mut g, "b", 0);
        let strong = g.add_edge(a, b, EdgeKind::Has, 1.0).unwrap();
        let weak = g.add_edge(b, a, EdgeKind::Has, 1.0).unwrap();
        g.set_edge_consolidation(strong, 0.9).unwrap();
        g.set_edge_consolidation(weak, 0.05).unwrap();
        let pruned = g.forget(0.5).unwrap();
        assert_eq!(pruned, 1);
        assert!(g.edge(strong).is_some());
        assert!(g.edge(weak).is_none());
        assert!((g.edge(strong).unwrap().stats.consolidation - 0.45).abs() < 1e-12);
    }

    #[test]
    fn forget_never_prunes_structural_edges() {
        let mut g = MemoryGraph::with_config(GraphConfig { sparsify_floor: 1.0, ..Default::default() });
        let inst = obj(&mut g, "inst", 0);
        let class = obj(&mut g, "class", 1);
        g.add_edge(inst, class, EdgeKind::InstanceOf, 1.0).unwrap();
        let pruned = g.forget(0.5).unwrap();
        assert_eq!(pruned, 0);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn remove_element_cascades_edges() {
        let mut g = MemoryGraph::new();
        let a = obj(&mut g, "a", 0);
        let b = obj(&mut g, "b", 0);
        g.add_edge(a, b, EdgeKind::Has, 1.0).unwrap();
        g.remove_element(b).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert!(g.element(a).is_some());
        // ids are not reused
        let c = obj(&mut g, "c", 0);
        assert_eq!(c, ElementId(2));
    }

    #[test]
    fn intern_value_reuses_existing() {
        let mut g = MemoryGraph::new();
        let a = g.intern_value("absent");
        let b = g.intern_value("absent");
        assert_eq!(a, b);
        assert_ne!(g.intern_value("4"), a);
    }
}
