//! Python bindings over the core memory graph. One `Memory` object owns a
//! session (graph, methods, episodes, model versions); `Focus` wraps the
//! bounded working-memory set; `plan` and `design` run the hierarchical
//! planner on a space described in the text format. Ids cross the boundary
//! as plain integers; errors arrive as `ValueError` carrying the same
//! taxonomy names the CLI prints.

use std::collections::BTreeSet;
use std::path::Path;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use mom_core::abstraction::{abstract_instances, instantiate};
use mom_core::attention::{CandidateOp, FocusSet};
use mom_core::consolidation::{
    collapse, induce_event_class, observe, register_template, ModelVersion, Predicate, Rule,
};
use mom_core::kernel::{EdgeId, EdgeKind, ElementId, ElementKind, MemoryGraph};
use mom_core::method::{admissible_actions, Mode};
use mom_core::planner::{
    build_hierarchy, design as design_start, parse_space, solve, Coarsening, GroundSpace,
    LayeredSpace, PlanError, Will,
};
use mom_core::snapshot::{self, Session};
use mom_core::story::{parse_story, replay, serialize_episode};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn element_kind(name: &str) -> PyResult<ElementKind> {
    Ok(match name {
        "Object" => ElementKind::Object,
        "Action" => ElementKind::Action,
        "Attribute" => ElementKind::Attribute,
        "Relation" => ElementKind::Relation,
        "Value" => ElementKind::Value,
        "EventClass" => ElementKind::EventClass,
        _ => {
            return Err(err(format!(
                "UnknownKind: `{name}` is not one of Object, Action, Attribute, Relation, Value, EventClass"
            )))
        }
    })
}

fn edge_kind(name: &str) -> PyResult<EdgeKind> {
    Ok(match name {
        "is_a" => EdgeKind::IsA,
        "instance_of" => EdgeKind::InstanceOf,
        "part_of" => EdgeKind::PartOf,
        "has" => EdgeKind::Has,
        "value_of" => EdgeKind::ValueOf,
        "admissible_action" => EdgeKind::AdmissibleAction,
        "synonym" => EdgeKind::Synonym,
        "antonym" => EdgeKind::Antonym,
        _ => {
            return Err(err(format!(
                "UnknownKind: `{name}` is not one of is_a, instance_of, part_of, has, value_of, admissible_action, synonym, antonym"
            )))
        }
    })
}

fn name_of(graph: &MemoryGraph, id: ElementId) -> String {
    graph
        .element(id)
        .and_then(|e| e.name.clone())
        .unwrap_or_else(|| format!("#{id}"))
}

/// A working session: the memory graph plus its methods, episodes, and
/// competing model versions. Everything a snapshot holds.
#[pyclass]
struct Memory {
    session: Session,
}

#[pymethods]
impl Memory {
    #[new]
    fn new() -> Self {
        Memory { session: Session::new() }
    }

    /// Rebuild a session from snapshot text.
    #[staticmethod]
    fn load(text: &str) -> PyResult<Self> {
        Ok(Memory { session: snapshot::load(text).map_err(err)? })
    }

    /// Rebuild a session from a snapshot file.
    #[staticmethod]
    fn load_file(path: &str) -> PyResult<Self> {
        Ok(Memory { session: snapshot::load_from(Path::new(path)).map_err(err)? })
    }

    /// Serialize the session to snapshot text.
    fn save(&self) -> PyResult<String> {
        snapshot::save(&self.session).map_err(err)
    }

    /// Write the session to a snapshot file.
    fn save_file(&self, path: &str) -> PyResult<()> {
        snapshot::save_to(&self.session, Path::new(path)).map_err(err)
    }

    // --- elements and associations ---------------------------------------

    #[pyo3(signature = (kind, name=None, level=0))]
    fn add_element(&mut self, kind: &str, name: Option<&str>, level: u32) -> PyResult<u64> {
        Ok(self.session.graph.add_element(element_kind(kind)?, name, level).0)
    }

    #[pyo3(signature = (src, dst, kind, strength=1.0))]
    fn add_edge(&mut self, src: u64, dst: u64, kind: &str, strength: f64) -> PyResult<u64> {
        let id = self
            .session
            .graph
            .add_edge(ElementId(src), ElementId(dst), edge_kind(kind)?, strength)
            .map_err(err)?;
        Ok(id.0)
    }

    /// Ids of every element carrying this name, ascending.
    fn find(&self, name: &str) -> Vec<u64> {
        self.session.graph.find_by_name(name).into_iter().map(|id| id.0).collect()
    }

    /// One element as a dict: id, kind, name, level, and its stats.
    fn element<'py>(&self, py: Python<'py>, id: u64) -> PyResult<Bound<'py, PyDict>> {
        let e = self.session.graph.require_element(ElementId(id)).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("id", e.id.0)?;
        d.set_item("kind", format!("{:?}", e.kind))?;
        d.set_item("name", e.name.clone())?;
        d.set_item("level", e.level)?;
        d.set_item("transient", e.transient)?;
        d.set_item("visits", e.stats.visits)?;
        d.set_item("uncertainty", e.stats.uncertainty)?;
        d.set_item("consolidation", e.stats.consolidation)?;
        Ok(d)
    }

    fn element_count(&self) -> usize {
        self.session.graph.element_count()
    }

    fn edge_count(&self) -> usize {
        self.session.graph.edge_count()
    }

    /// Record one use of an element; returns its new consolidation.
    fn touch(&mut self, id: u64) -> PyResult<f64> {
        Ok(self.session.graph.touch(ElementId(id)).map_err(err)?.consolidation)
    }

    /// Record one use of an association; returns its new consolidation.
    fn touch_edge(&mut self, id: u64) -> PyResult<f64> {
        Ok(self.session.graph.touch_edge(EdgeId(id)).map_err(err)?.consolidation)
    }

    /// Decay all consolidation by the factor and prune weak associations;
    /// returns how many were pruned.
    fn forget(&mut self, decay: f64) -> PyResult<usize> {
        self.session.graph.forget(decay).map_err(err)
    }

    #[pyo3(signature = (owner, attribute, value=None))]
    fn set_attribute(&mut self, owner: u64, attribute: u64, value: Option<u64>) -> PyResult<u64> {
        let id = self
            .session
            .graph
            .set_attribute(ElementId(owner), ElementId(attribute), value.map(ElementId))
            .map_err(err)?;
        Ok(id.0)
    }

    /// Attribute bindings visible on an element, nearest definition first,
    /// as (attribute name, value name or None) pairs.
    fn attributes_of(&self, id: u64) -> PyResult<Vec<(String, Option<String>)>> {
        let graph = &self.session.graph;
        Ok(graph
            .attributes_of(ElementId(id))
            .map_err(err)?
            .into_iter()
            .map(|b| (name_of(graph, b.attribute), b.value.map(|v| name_of(graph, v))))
            .collect())
    }

    // --- stories ----------------------------------------------------------

    /// Parse episode text into the graph; returns the new episode ids.
    fn ingest(&mut self, text: &str) -> PyResult<Vec<String>> {
        let episodes =
            parse_story(&mut self.session.graph, &mut self.session.registry, text).map_err(err)?;
        let mut ids = Vec::new();
        for ep in episodes {
            if self.session.episodes.contains_key(&ep.id) {
                return Err(err(format!("DuplicateEpisode: `{}` is already ingested", ep.id)));
            }
            ids.push(ep.id.clone());
            self.session.episodes.insert(ep.id.clone(), ep);
        }
        Ok(ids)
    }

    fn episodes(&self) -> Vec<String> {
        self.session.episodes.keys().cloned().collect()
    }

    /// Episode text reconstructed from the graph.
    fn episode_text(&self, episode: &str) -> PyResult<String> {
        let ep = self
            .session
            .episodes
            .get(episode)
            .ok_or_else(|| err(format!("UnknownEpisode: {episode}")))?;
        Ok(serialize_episode(&self.session.graph, ep))
    }

    /// The derived state after `at` events (default: all of them) as a dict
    /// with `time`, sorted `present` names, and a `values` table.
    #[pyo3(signature = (episode, at=None))]
    fn replay<'py>(
        &self,
        py: Python<'py>,
        episode: &str,
        at: Option<usize>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let ep = self
            .session
            .episodes
            .get(episode)
            .ok_or_else(|| err(format!("UnknownEpisode: {episode}")))?;
        let states = replay(&self.session.graph, &self.session.registry, ep).map_err(err)?;
        let t = at.unwrap_or(ep.events.len());
        let state = states
            .get(t)
            .ok_or_else(|| err(format!("TimeOutOfRange: {t} of {}", ep.events.len())))?;
        let graph = &self.session.graph;
        let mut present: Vec<String> = state.present.iter().map(|&o| name_of(graph, o)).collect();
        present.sort();
        let values = PyList::empty(py);
        for (&(obj, attr), &val) in &state.values {
            values.append((name_of(graph, obj), name_of(graph, attr), name_of(graph, val)))?;
        }
        let d = PyDict::new(py);
        d.set_item("episode", episode)?;
        d.set_item("time", state.time)?;
        d.set_item("present", present)?;
        d.set_item("values", values)?;
        Ok(d)
    }

    // --- abstraction --------------------------------------------------------

    /// Create a class one level above the members carrying their shared
    /// attributes and actions; returns the class id.
    #[pyo3(name = "abstract")]
    fn abstract_instances(&mut self, members: Vec<u64>, name: &str) -> PyResult<u64> {
        let members: Vec<ElementId> = members.into_iter().map(ElementId).collect();
        let (class, _) =
            abstract_instances(&mut self.session.graph, &members, name).map_err(err)?;
        Ok(class.0)
    }

    /// Create an instance one level below the class; bindings assign values
    /// to class attributes as (attribute id, value id) pairs.
    #[pyo3(signature = (class, name, bindings=Vec::new()))]
    fn instantiate(&mut self, class: u64, name: &str, bindings: Vec<(u64, u64)>) -> PyResult<u64> {
        let bindings: Vec<(ElementId, ElementId)> =
            bindings.into_iter().map(|(a, v)| (ElementId(a), ElementId(v))).collect();
        let instance =
            instantiate(&mut self.session.graph, ElementId(class), name, &bindings).map_err(err)?;
        Ok(instance.0)
    }

    // --- admissibility --------------------------------------------------------

    /// Actions applicable to an element through its class closure as
    /// (action name, score) pairs; creative mode reverses the ranking.
    #[pyo3(signature = (element, creative=false))]
    fn admissible(&self, element: u64, creative: bool) -> PyResult<Vec<(String, f64)>> {
        let mode = if creative { Mode::Creative } else { Mode::Normal };
        let graph = &self.session.graph;
        Ok(admissible_actions(graph, ElementId(element), mode)
            .map_err(err)?
            .into_iter()
            .map(|(a, score)| (name_of(graph, a), score))
            .collect())
    }

    // --- consolidation ----------------------------------------------------------

    /// Induce recurring event templates across all ingested episodes and
    /// register each as an event class; returns dicts with `pattern`,
    /// `support`, and the `class` name.
    #[pyo3(signature = (min_support=2))]
    fn induce<'py>(&mut self, py: Python<'py>, min_support: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let episodes: Vec<_> = self.session.episodes.values().cloned().collect();
        let templates =
            induce_event_class(&self.session.graph, &episodes, min_support).map_err(err)?;
        let mut out = Vec::new();
        for t in &templates {
            let pattern = t.describe(&self.session.graph);
            let joined: Vec<String> =
                t.actions.iter().map(|&a| name_of(&self.session.graph, a)).collect();
            let joined = joined.join("+");
            // re-induction over the same corpus must not mint duplicate classes
            let class = self
                .session
                .graph
                .find_by_name(&joined)
                .iter()
                .copied()
                .find(|&c| {
                    self.session
                        .graph
                        .element(c)
                        .is_some_and(|e| e.kind == ElementKind::EventClass && e.level >= 1)
                })
                .unwrap_or_else(|| register_template(&mut self.session.graph, t));
            let d = PyDict::new(py);
            d.set_item("pattern", pattern)?;
            d.set_item("support", t.support)?;
            d.set_item("class", name_of(&self.session.graph, class))?;
            out.push(d);
        }
        Ok(out)
    }

    /// Register a competing model version: condition and effect are lists of
    /// (object id, attribute id, value id) triples.
    fn add_version(
        &mut self,
        id: &str,
        condition: Vec<(u64, u64, u64)>,
        effect: Vec<(u64, u64, u64)>,
    ) -> PyResult<()> {
        if self.session.versions.iter().any(|v| v.id == id) {
            return Err(err(format!("DuplicateVersion: {id}")));
        }
        let predicate = |(o, a, v): (u64, u64, u64)| Predicate {
            object: ElementId(o),
            attribute: ElementId(a),
            value: ElementId(v),
        };
        self.session.versions.push(ModelVersion::new(
            id,
            vec![Rule {
                condition: condition.into_iter().map(predicate).collect(),
                effect: effect.into_iter().map(predicate).collect(),
            }],
        ));
        Ok(())
    }

    /// Score every live version against one episode's event stream.
    fn observe(&mut self, episode: &str) -> PyResult<()> {
        let ep = self
            .session
            .episodes
            .get(episode)
            .ok_or_else(|| err(format!("UnknownEpisode: {episode}")))?
            .clone();
        observe(&self.session.graph, &self.session.registry, &mut self.session.versions, &ep)
            .map_err(err)
    }

    /// Kill versions dominated by a rival; returns the ids killed now.
    #[pyo3(signature = (dominance=2.0))]
    fn collapse(&mut self, dominance: f64) -> PyResult<Vec<String>> {
        if dominance <= 1.0 {
            return Err(err(format!("InvalidDominance: must exceed 1, got {dominance}")));
        }
        Ok(collapse(&mut self.session.versions, dominance))
    }

    /// Every version as (id, evidence for, evidence against, alive).
    fn versions(&self) -> Vec<(String, u64, u64, bool)> {
        self.session
            .versions
            .iter()
            .map(|v| (v.id.clone(), v.evidence_for, v.evidence_against, v.alive))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Memory(elements={}, edges={}, episodes={}, versions={})",
            self.session.graph.element_count(),
            self.session.graph.edge_count(),
            self.session.episodes.len(),
            self.session.versions.len(),
        )
    }
}

/// The bounded working-memory set: 5 to 9 slots, priority-evicting.
#[pyclass]
struct Focus {
    inner: FocusSet,
}

#[pymethods]
impl Focus {
    #[new]
    #[pyo3(signature = (capacity=7))]
    fn new(capacity: usize) -> PyResult<Self> {
        Ok(Focus { inner: FocusSet::with_capacity(capacity).map_err(err)? })
    }

    /// Admit an element with priority w*internal + (1-w)*external; returns
    /// the id evicted to make room, if any.
    #[pyo3(signature = (memory, element, w=0.5, internal=1.0, external=1.0))]
    fn attend(
        &mut self,
        memory: &Memory,
        element: u64,
        w: f64,
        internal: f64,
        external: f64,
    ) -> PyResult<Option<u64>> {
        let evicted = self
            .inner
            .attend(&memory.session.graph, ElementId(element), w, internal, external)
            .map_err(err)?;
        Ok(evicted.map(|id| id.0))
    }

    fn remove(&mut self, element: u64) -> bool {
        self.inner.remove(ElementId(element))
    }

    fn clear(&mut self) {
        self.inner.clear()
    }

    fn contains(&self, element: u64) -> bool {
        self.inner.contains(ElementId(element))
    }

    /// (element id, priority) pairs, highest priority first.
    fn ordered(&self) -> Vec<(u64, f64)> {
        self.inner.ordered().into_iter().map(|(id, p)| (id.0, p)).collect()
    }

    fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Gate one candidate operation: (permitted, ids of missing models).
    fn permits(
        &self,
        memory: &Memory,
        name: &str,
        participants: Vec<u64>,
    ) -> (bool, Vec<u64>) {
        let op = CandidateOp::new(name, participants.into_iter().map(ElementId).collect());
        let report = mom_core::attention::focus_filter(&self.inner, &memory.session.graph, &[op]);
        if report.permitted.contains(&0) {
            return (true, Vec::new());
        }
        let missing = report
            .rejected
            .first()
            .map(|(_, models)| models.iter().map(|id| id.0).collect())
            .unwrap_or_default();
        (false, missing)
    }

    fn __repr__(&self) -> String {
        format!("Focus(len={}, capacity={})", self.inner.len(), self.inner.capacity())
    }
}

fn layered_from_text(text: &str, levels: usize) -> PyResult<(GroundSpace, LayeredSpace, Option<usize>, Option<usize>)> {
    let file = parse_space(text).map_err(err)?;
    let coarsening =
        if levels == 1 { Coarsening::Explicit(Vec::new()) } else { Coarsening::Grid2x2 };
    let layered = build_hierarchy(file.space.clone(), levels, coarsening).map_err(err)?;
    Ok((file.space, layered, file.start, file.goal))
}

fn state_by_name(space: &GroundSpace, name: Option<&str>, fallback: Option<usize>) -> PyResult<Option<usize>> {
    match name {
        Some(n) => space
            .state(n)
            .map(Some)
            .ok_or_else(|| err(PlanError::UnknownState(n.to_string()))),
        None => Ok(fallback),
    }
}

fn plan_dict<'py>(
    py: Python<'py>,
    space: &GroundSpace,
    plan: &mom_core::planner::Plan,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("steps", plan.actions.len())?;
    d.set_item("cost", plan.cost)?;
    d.set_item(
        "states",
        plan.states.iter().map(|&s| space.name(s).to_string()).collect::<Vec<_>>(),
    )?;
    d.set_item("actions", plan.actions.clone())?;
    d.set_item("expansions", plan.stats.expansions.clone())?;
    d.set_item("backtracks", plan.stats.backtracks)?;
    d.set_item("widenings", plan.stats.widenings)?;
    d.set_item("flat_fallback", plan.stats.flat_fallback)?;
    Ok(d)
}

/// Plan through a space described in the text format, coarse-to-fine over
/// `levels` layers. `start`/`goal` override markers in the text.
#[pyfunction]
#[pyo3(signature = (space, levels=1, start=None, goal=None))]
fn plan<'py>(
    py: Python<'py>,
    space: &str,
    levels: usize,
    start: Option<&str>,
    goal: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let (ground, layered, file_start, file_goal) = layered_from_text(space, levels)?;
    let start = state_by_name(&ground, start, file_start)?
        .ok_or_else(|| err("UnknownState: the space names no start; pass start"))?;
    let goal = state_by_name(&ground, goal, file_goal)?.ok_or_else(|| err(PlanError::NotPurposeful))?;
    let plan = solve(&layered, &Will::purposeful([start], [goal])).map_err(err)?;
    plan_dict(py, &ground, &plan)
}

/// Choose the start farthest from the goal that still reaches it, then plan
/// forward. Returns a dict with the chosen `start`, its `score`, and the
/// `plan`.
#[pyfunction]
#[pyo3(signature = (space, levels=1, goal=None))]
fn design<'py>(
    py: Python<'py>,
    space: &str,
    levels: usize,
    goal: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let (ground, layered, _, file_goal) = layered_from_text(space, levels)?;
    let goal = state_by_name(&ground, goal, file_goal)?.ok_or_else(|| err(PlanError::NotPurposeful))?;
    let goals = BTreeSet::from([goal]);

    let n = ground.len();
    let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..n {
        for &(dst, _, _) in ground.transitions_from(s) {
            reverse[dst].push(s);
        }
    }
    let mut dist: Vec<Option<u64>> = vec![None; n];
    let mut frontier: Vec<usize> = goals.iter().copied().collect();
    for &g in &frontier {
        dist[g] = Some(0);
    }
    let mut hops = 0;
    while !frontier.is_empty() {
        hops += 1;
        let mut next = Vec::new();
        for &s in &frontier {
            for &p in &reverse[s] {
                if dist[p].is_none() {
                    dist[p] = Some(hops);
                    next.push(p);
                }
            }
        }
        frontier = next;
    }

    let (chosen, plan) =
        design_start(&layered, &goals, |s| dist[s].map(|d| d as f64)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("start", ground.name(chosen))?;
    d.set_item("score", dist[chosen].unwrap_or(0) as f64)?;
    d.set_item("plan", plan_dict(py, &ground, &plan)?)?;
    Ok(d)
}

#[pymodule]
fn pymom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Memory>()?;
    m.add_class::<Focus>()?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(design, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
