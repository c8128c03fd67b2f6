//! Modeling operations: grouping, instance-to-class abstraction,
//! instantiation, transient analogy classes, and consistency checking.
//!
//! A class summarizes what all of its members share. Signatures are exact
//! intersections (no majority promotion), so an independent set-intersection
//! oracle can verify every result.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::kernel::{EdgeKind, ElementId, ElementKind, KernelError, MemoryGraph};
use crate::method::{admissible_actions, Mode};

/// What all contributing members share: attributes (with the value when every
/// member agrees on it), admissible actions, and the member count.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassSignature {
    pub common_attributes: Vec<(ElementId, Option<ElementId>)>,
    pub common_actions: Vec<ElementId>,
    pub member_count: usize,
}

/// How `group` orders and verifies its members.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupCriterion {
    /// Order by creation time (ids are assigned in event order).
    Chronological,
    /// All members must carry the same value for this attribute.
    SharedAttribute(ElementId),
    /// No verification; membership is the caller's assertion.
    Explicit,
}

/// One inheritance contradiction: two sources assign the same attribute
/// different values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conflict {
    pub attribute: ElementId,
    pub source_a: ElementId,
    pub value_a: ElementId,
    pub source_b: ElementId,
    pub value_b: ElementId,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbstractionError {
    #[error("TooFewMembers: got {got}, need at least {need}")]
    TooFewMembers { got: usize, need: usize },
    #[error("MixedKinds: members must share one element kind")]
    MixedKinds,
    #[error("MixedLevels: members must share one abstraction level")]
    MixedLevels,
    #[error("UnknownClass: element {0} is not a class (level >= 1)")]
    UnknownClass(ElementId),
    #[error("UnknownAttributeInBinding: {0} is not an attribute of the class")]
    UnknownAttributeInBinding(ElementId),
    #[error("CriterionUnsatisfied: attribute {attribute} is not shared by all members")]
    CriterionUnsatisfied { attribute: ElementId },
    #[error("InvalidSignificance: {0} is not in [0, 1]")]
    InvalidSignificance(f64),
    #[error(
        "WillOrderViolation: `{name}` on {owner} breaks significance monotonicity along its chain"
    )]
    WillOrderViolation { owner: ElementId, name: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// The exact intersection of the members' attribute bindings (shadow-aware)
/// and admissible actions. This is the oracle-checkable core of abstraction.
pub fn signature_of(
    graph: &MemoryGraph,
    members: &[ElementId],
) -> Result<ClassSignature, AbstractionError> {
    if members.is_empty() {
        return Err(AbstractionError::TooFewMembers { got: 0, need: 1 });
    }
    let mut attr_maps = Vec::with_capacity(members.len());
    let mut action_sets: Vec<BTreeSet<ElementId>> = Vec::with_capacity(members.len());
    for &m in members {
        let mut map: BTreeMap<ElementId, Option<ElementId>> = BTreeMap::new();
        for b in graph.attributes_of(m)? {
            map.entry(b.attribute).or_insert(b.value);
        }
        attr_maps.push(map);
        // admissibility over a checked member can only fail on kernel lookups
        let actions = admissible_actions(graph, m, Mode::Normal)
            .map_err(|_| AbstractionError::Kernel(KernelError::UnknownElement(m)))?;
        action_sets.push(actions.into_iter().map(|(a, _)| a).collect());
    }
    let mut common: BTreeMap<ElementId, Option<ElementId>> = attr_maps[0].clone();
    for map in &attr_maps[1..] {
        common.retain(|attr, val| match map.get(attr) {
            None => false,
            Some(other) => {
                if val.is_none() || other.is_none() || *val != *other {
                    *val = None;
                }
                true
            }
        });
    }
    let mut actions = action_sets[0].clone();
    for set in &action_sets[1..] {
        actions = actions.intersection(set).copied().collect();
    }
    Ok(ClassSignature {
        common_attributes: common.into_iter().collect(),
        common_actions: actions.into_iter().collect(),
        member_count: members.len(),
    })
}

fn check_uniform(
    graph: &MemoryGraph,
    members: &[ElementId],
    require_level: bool,
) -> Result<(ElementKind, u32), AbstractionError> {
    let first = graph.require_element(members[0])?;
    let (kind, level) = (first.kind, first.level);
    let mut max_level = level;
    for &m in &members[1..] {
        let e = graph.require_element(m)?;
        if e.kind != kind {
            return Err(AbstractionError::MixedKinds);
        }
        if require_level && e.level != level {
            return Err(AbstractionError::MixedLevels);
        }
        max_level = max_level.max(e.level);
    }
    Ok((kind, max_level))
}

fn install_signature(
    graph: &mut MemoryGraph,
    class: ElementId,
    signature: &ClassSignature,
) -> Result<(), AbstractionError> {
    for &(attr, val) in &signature.common_attributes {
        graph.set_attribute(class, attr, val)?;
    }
    for &action in &signature.common_actions {
        graph.add_edge(class, action, EdgeKind::AdmissibleAction, 1.0)?;
    }
    Ok(())
}

/// Create a class one level above its members carrying exactly their shared
/// signature, and link every member with an instance edge.
pub fn abstract_instances(
    graph: &mut MemoryGraph,
    members: &[ElementId],
    name: &str,
) -> Result<(ElementId, ClassSignature), AbstractionError> {
    if members.len() < 2 {
        return Err(AbstractionError::TooFewMembers { got: members.len(), need: 2 });
    }
    let (kind, level) = check_uniform(graph, members, true)?;
    let signature = signature_of(graph, members)?;
    let class = graph.add_element(kind, Some(name), level + 1);
    for &m in members {
        graph.add_edge(m, class, EdgeKind::InstanceOf, 1.0)?;
    }
    install_signature(graph, class, &signature)?;
    Ok((class, signature))
}

/// Create an instance of a class one level below it, with explicit values
/// for a subset of the class's attributes. Everything else is inherited
/// unvalued through the instance edge.
pub fn instantiate(
    graph: &mut MemoryGraph,
    class: ElementId,
    name: &str,
    bindings: &[(ElementId, ElementId)],
) -> Result<ElementId, AbstractionError> {
    let cls = graph
        .element(class)
        .cloned()
        .filter(|e| e.level >= 1)
        .ok_or(AbstractionError::UnknownClass(class))?;
    let class_attrs: BTreeSet<ElementId> = graph
        .attributes_of(class)?
        .into_iter()
        .map(|b| b.attribute)
        .collect();
    for &(attr, _) in bindings {
        if !class_attrs.contains(&attr) {
            return Err(AbstractionError::UnknownAttributeInBinding(attr));
        }
    }
    let instance = graph.add_element(cls.kind, Some(name), cls.level - 1);
    graph.add_edge(instance, class, EdgeKind::InstanceOf, 1.0)?;
    for &(attr, value) in bindings {
        graph.set_attribute(instance, attr, Some(value))?;
    }
    Ok(instance)
}

/// Collect members into a group element they become parts of. The returned
/// member order is chronological (ascending id) for every criterion; only
/// `SharedAttribute` adds a verification step and records the shared value
/// on the group.
pub fn group(
    graph: &mut MemoryGraph,
    members: &[ElementId],
    criterion: GroupCriterion,
    name: &str,
) -> Result<(ElementId, Vec<ElementId>), AbstractionError> {
    if members.is_empty() {
        return Err(AbstractionError::TooFewMembers { got: 0, need: 1 });
    }
    let (kind, level) = check_uniform(graph, members, false)?;
    let mut ordered: Vec<ElementId> = members.to_vec();
    ordered.sort_unstable();
    ordered.dedup();
    let mut shared: Option<(ElementId, ElementId)> = None;
    if let GroupCriterion::SharedAttribute(attr) = criterion {
        let mut value = None;
        for &m in &ordered {
            let found = graph
                .attributes_of(m)?
                .into_iter()
                .find(|b| b.attribute == attr)
                .and_then(|b| b.value);
            match (value, found) {
                (_, None) => return Err(AbstractionError::CriterionUnsatisfied { attribute: attr }),
                (None, Some(v)) => value = Some(v),
                (Some(v), Some(w)) if v != w => {
                    return Err(AbstractionError::CriterionUnsatisfied { attribute: attr })
                }
                _ => {}
            }
        }
        shared = value.map(|v| (attr, v));
    }
    let group = graph.add_element(kind, Some(name), level);
    for &m in &ordered {
        graph.add_edge(m, group, EdgeKind::PartOf, 1.0)?;
    }
    if let Some((attr, v)) = shared {
        graph.set_attribute(group, attr, Some(v))?;
    }
    Ok((group, ordered))
}

/// Build a throwaway topmost class over existing classes by stripping the
/// given attributes/actions from their shared signature. The class is
/// transient: it lives in the session pool and never persists.
pub fn temporal_abstraction(
    graph: &mut MemoryGraph,
    members: &[ElementId],
    name: &str,
    strip: &[ElementId],
) -> Result<(ElementId, ClassSignature), AbstractionError> {
    if members.len() < 2 {
        return Err(AbstractionError::TooFewMembers { got: members.len(), need: 2 });
    }
    let (kind, max_level) = check_uniform(graph, members, false)?;
    let mut signature = signature_of(graph, members)?;
    let strip_set: BTreeSet<ElementId> = strip.iter().copied().collect();
    signature.common_attributes.retain(|(a, _)| !strip_set.contains(a));
    signature.common_actions.retain(|a| !strip_set.contains(a));
    let class = graph.add_transient_element(kind, Some(name), max_level + 1);
    for &m in members {
        graph.add_edge(m, class, EdgeKind::IsA, 1.0)?;
    }
    install_signature(graph, class, &signature)?;
    Ok((class, signature))
}

/// Find inheritance contradictions around a candidate class: a member whose
/// own value disagrees with a value the candidate promotes, or two hierarchy
/// ancestors of the candidate that assign one attribute different values
/// while neither subsumes the other (a disagreeing diamond).
pub fn consistency_check(
    graph: &MemoryGraph,
    candidate: ElementId,
) -> Result<Vec<Conflict>, AbstractionError> {
    graph.require_element(candidate)?;
    let mut conflicts = Vec::new();
    let own_values = own_valued_attributes(graph, candidate);

    // (a) members contradicting promoted values
    let mut members: Vec<ElementId> = Vec::new();
    for kind in [EdgeKind::InstanceOf, EdgeKind::IsA] {
        members.extend(graph.edges_to(candidate, kind).iter().map(|e| e.src));
    }
    members.sort_unstable();
    members.dedup();
    for m in members {
        for (attr, val) in own_valued_attributes(graph, m) {
            if let Some(&promoted) = own_values.get(&attr) {
                if promoted != val {
                    conflicts.push(Conflict {
                        attribute: attr,
                        source_a: candidate,
                        value_a: promoted,
                        source_b: m,
                        value_b: val,
                    });
                }
            }
        }
    }

    // (b) disagreeing diamonds above the candidate
    let hierarchy = [EdgeKind::InstanceOf, EdgeKind::IsA];
    let ancestors = graph.closure(candidate, &hierarchy)?;
    let mut by_attr: BTreeMap<ElementId, Vec<(ElementId, ElementId)>> = BTreeMap::new();
    for &a in &ancestors {
        for (attr, val) in own_valued_attributes(graph, a) {
            by_attr.entry(attr).or_default().push((a, val));
        }
    }
    for (attr, sources) in by_attr {
        for i in 0..sources.len() {
            for j in (i + 1)..sources.len() {
                let (a, va) = sources[i];
                let (b, vb) = sources[j];
                if va == vb {
                    continue;
                }
                let a_reaches_b = graph.closure(a, &hierarchy)?.contains(&b);
                let b_reaches_a = graph.closure(b, &hierarchy)?.contains(&a);
                if !a_reaches_b && !b_reaches_a {
                    conflicts.push(Conflict {
                        attribute: attr,
                        source_a: a,
                        value_a: va,
                        source_b: b,
                        value_b: vb,
                    });
                }
            }
        }
    }
    conflicts.sort_by_key(|c| (c.attribute, c.source_a, c.source_b));
    Ok(conflicts)
}

fn own_valued_attributes(graph: &MemoryGraph, e: ElementId) -> BTreeMap<ElementId, ElementId> {
    let mut out = BTreeMap::new();
    for edge in graph.edges_from(e, EdgeKind::Has) {
        if let Some(v) = edge.value {
            out.entry(edge.dst).or_insert(v);
        }
    }
    out
}

/// Session-scoped named priorities on classes. Significance must be
/// monotonically non-decreasing with level along `IsA` chains; the store
/// rejects assignments that would break an existing chain. Not persisted.
#[derive(Debug, Clone, Default)]
pub struct WillStore {
    vars: BTreeMap<(ElementId, String), f64>,
}

impl WillStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(
        &mut self,
        graph: &MemoryGraph,
        owner: ElementId,
        name: &str,
        significance: f64,
    ) -> Result<(), AbstractionError> {
        if !(0.0..=1.0).contains(&significance) || significance.is_nan() {
            return Err(AbstractionError::InvalidSignificance(significance));
        }
        graph.require_element(owner)?;
        let ancestors = graph.closure(owner, &[EdgeKind::IsA])?;
        for ((other, var), &value) in &self.vars {
            if var != name {
                continue;
            }
            let other_is_ancestor = ancestors.contains(other);
            let owner_is_ancestor = graph.closure(*other, &[EdgeKind::IsA])?.contains(&owner);
            if (other_is_ancestor && value < significance)
                || (owner_is_ancestor && significance < value)
            {
                return Err(AbstractionError::WillOrderViolation {
                    owner,
                    name: name.to_string(),
                });
            }
        }
        self.vars.insert((owner, name.to_string()), significance);
        Ok(())
    }

    pub fn get(&self, owner: ElementId, name: &str) -> Option<f64> {
        self.vars.get(&(owner, name.to_string())).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ElementId, &str, f64)> {
        self.vars.iter().map(|((e, n), &v)| (*e, n.as_str(), v))
    }

    pub fn clear(&mut self) {
        self.vars.clear();
    }
}
