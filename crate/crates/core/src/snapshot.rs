//! Session persistence: one UTF-8 JSON document carrying the memory graph,
//! method definitions and bindings, model versions, and ingested episodes.
//! Loading a saved session restores identical element and edge ids; elements
//! flagged transient (and their edges) are never written out.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consolidation::{ModelVersion, Predicate, Rule};
use crate::kernel::{
    AssociationEdge, Element, ElementId, ElementKind, GraphConfig, MemoryGraph,
};
use crate::method::{expr_to_sexpr, MethodDef, MethodRegistry, ParamSpec};
use crate::story::{Declaration, Effect, Episode, EventRecord, StoryState};

pub const FORMAT_VERSION: u64 = 1;

/// Everything one working session owns. The focus set is deliberately not
/// here: working memory is transient by definition.
#[derive(Debug, Default)]
pub struct Session {
    pub graph: MemoryGraph,
    pub registry: MethodRegistry,
    pub episodes: BTreeMap<String, Episode>,
    pub versions: Vec<ModelVersion>,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("Json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("Integrity: {0}")]
    Integrity(String),
    #[error("UnsupportedVersion: format_version {0}, this build reads {FORMAT_VERSION}")]
    UnsupportedVersion(u64),
}

// Wire format. Structs whose in-memory forms use tuple keys or parsed
// expressions are flattened into JSON-friendly shapes.

#[derive(Debug, Serialize, Deserialize)]
struct Document {
    format_version: u64,
    config: GraphConfig,
    counters: Counters,
    elements: Vec<Element>,
    edges: Vec<AssociationEdge>,
    methods: MethodsDoc,
    versions: Vec<VersionDto>,
    episodes: Vec<EpisodeDto>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Counters {
    next_element: u64,
    next_edge: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MethodsDoc {
    defs: Vec<MethodDto>,
    /// action element id -> method name
    bindings: Vec<(ElementId, String)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MethodDto {
    name: String,
    params: Vec<(String, Option<ElementId>)>,
    body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    produces: Option<ElementKind>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VersionDto {
    id: String,
    rules: Vec<RuleDto>,
    evidence_for: u64,
    evidence_against: u64,
    alive: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct RuleDto {
    condition: Vec<(ElementId, ElementId, ElementId)>,
    effect: Vec<(ElementId, ElementId, ElementId)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeDto {
    id: String,
    declared: Vec<(ElementId, ElementId)>,
    initial_present: Vec<ElementId>,
    initial_values: Vec<(ElementId, ElementId, ElementId)>,
    events: Vec<EventDto>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EventDto {
    time: u64,
    action: ElementId,
    verb: String,
    participants: BTreeMap<String, ElementId>,
    effects: Vec<(ElementId, ElementId, ElementId)>,
}

/// Serialize the session to the JSON document text.
pub fn save(session: &Session) -> Result<String, SnapshotError> {
    let graph = &session.graph;
    let transient: BTreeSet<ElementId> =
        graph.elements().filter(|e| e.transient).map(|e| e.id).collect();
    let elements: Vec<Element> =
        graph.elements().filter(|e| !e.transient).cloned().collect();
    let edges: Vec<AssociationEdge> = graph
        .edges()
        .filter(|e| !transient.contains(&e.src) && !transient.contains(&e.dst))
        .cloned()
        .collect();
    let (next_element, next_edge) = graph.next_ids();
    let methods = MethodsDoc {
        defs: session
            .registry
            .methods()
            .map(|def| MethodDto {
                name: def.name.clone(),
                params: def
                    .params
                    .iter()
                    .map(|p| (p.name.clone(), p.constraint))
                    .collect(),
                body: expr_to_sexpr(&def.body),
                produces: def.produces,
            })
            .collect(),
        bindings: session
            .registry
            .binding_names()
            .iter()
            .map(|(&a, n)| (a, n.clone()))
            .collect(),
    };
    let versions = session
        .versions
        .iter()
        .map(|v| VersionDto {
            id: v.id.clone(),
            rules: v
                .rules
                .iter()
                .map(|r| RuleDto {
                    condition: r.condition.iter().map(predicate_to_triple).collect(),
                    effect: r.effect.iter().map(predicate_to_triple).collect(),
                })
                .collect(),
            evidence_for: v.evidence_for,
            evidence_against: v.evidence_against,
            alive: v.alive,
        })
        .collect();
    let episodes = session
        .episodes
        .values()
        .map(|ep| EpisodeDto {
            id: ep.id.clone(),
            declared: ep.declared.iter().map(|d| (d.object, d.class)).collect(),
            initial_present: ep.initial.present.iter().copied().collect(),
            initial_values: ep
                .initial
                .values
                .iter()
                .map(|(&(o, a), &v)| (o, a, v))
                .collect(),
            events: ep
                .events
                .iter()
                .map(|ev| EventDto {
                    time: ev.time,
                    action: ev.action,
                    verb: ev.verb.clone(),
                    participants: ev.participants.clone(),
                    effects: ev
                        .effects
                        .iter()
                        .map(|f| (f.object, f.attribute, f.value))
                        .collect(),
                })
                .collect(),
        })
        .collect();
    let doc = Document {
        format_version: FORMAT_VERSION,
        config: graph.config,
        counters: Counters { next_element, next_edge },
        elements,
        edges,
        methods,
        versions,
        episodes,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn save_to(session: &Session, path: &Path) -> Result<(), SnapshotError> {
    let text = save(session)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Rebuild a session from document text, restoring identical ids.
pub fn load(text: &str) -> Result<Session, SnapshotError> {
    let doc: Document = serde_json::from_str(text)?;
    if doc.format_version != FORMAT_VERSION {
        return Err(SnapshotError::UnsupportedVersion(doc.format_version));
    }
    let integrity = |msg: String| SnapshotError::Integrity(msg);
    let element_ids: BTreeSet<ElementId> = doc.elements.iter().map(|e| e.id).collect();
    if element_ids.len() != doc.elements.len() {
        return Err(integrity("duplicate element ids".into()));
    }
    if let Some(t) = doc.elements.iter().find(|e| e.transient) {
        return Err(integrity(format!("element {} is transient; snapshots never contain transient elements", t.id)));
    }
    let edge_ids: BTreeSet<_> = doc.edges.iter().map(|e| e.id).collect();
    if edge_ids.len() != doc.edges.len() {
        return Err(integrity("duplicate edge ids".into()));
    }
    let mut graph = MemoryGraph::from_parts(doc.elements, doc.edges, doc.config)
        .map_err(|e| integrity(e.to_string()))?;
    graph.resume_ids(doc.counters.next_element, doc.counters.next_edge);
    let known = |id: ElementId| -> Result<ElementId, SnapshotError> {
        if graph.contains(id) {
            Ok(id)
        } else {
            Err(integrity(format!("reference to unknown element {id}")))
        }
    };

    let mut registry = MethodRegistry::new();
    for dto in doc.methods.defs {
        let param_names: BTreeSet<String> =
            dto.params.iter().map(|(n, _)| n.clone()).collect();
        let body = crate::method::parse_body(&graph, &param_names, &dto.body)
            .map_err(|e| integrity(format!("method {}: {e}", dto.name)))?;
        let params = dto
            .params
            .into_iter()
            .map(|(name, constraint)|

                Ok(ParamSpec { name, constraint: constraint.map(known).transpose()? }))
            .collect::<Result<Vec<_>, SnapshotError>>()?;
        let def = MethodDef { name: dto.name.clone(), params, body, produces: dto.produces };
        registry
            .define(def)
            .map_err(|e| integrity(format!("method {}: {e}", dto.name)))?;
    }
    for (action, method) in doc.methods.bindings {
        known(action)?;
        if registry.method(&method).is_none() {
            return Err(integrity(format!("binding to unknown method {method}")));
        }
        registry.restore_binding(action, method);
    }

    let mut versions = Vec::new();
    for dto in doc.versions {
        let restore = |triples: Vec<(ElementId, ElementId, ElementId)>| {
            triples
                .into_iter()
                .map(|(o, a, v)| {
                    Ok(Predicate { object: known(o)?, attribute: known(a)?, value: known(v)? })
                })
                .collect::<Result<Vec<_>, SnapshotError>>()
        };
        let mut rules = Vec::new();
        for rule in dto.rules {
            rules.push(Rule { condition: restore(rule.condition)?, effect: restore(rule.effect)? });
        }
        versions.push(ModelVersion {
            id: dto.id,
            rules,
            evidence_for: dto.evidence_for,
            evidence_against: dto.evidence_against,
            alive: dto.alive,
        });
    }

    let mut episodes = BTreeMap::new();
    for dto in doc.episodes {
        let mut initial = StoryState::default();
        for id in dto.initial_present {
            initial.present.insert(known(id)?);
        }
        for (o, a, v) in dto.initial_values {
            initial.values.insert((known(o)?, known(a)?), known(v)?);
        }
        let declared = dto
            .declared
            .into_iter()
            .map(|(object, class)| {
                Ok(Declaration { object: known(object)?, class: known(class)? })
            })
            .collect::<Result<Vec<_>, SnapshotError>>()?;
        let mut events = Vec::new();
        for ev in dto.events {
            let mut participants = BTreeMap::new();
            for (role, id) in ev.participants {
                participants.insert(role, known(id)?);
            }
            let effects = ev
                .effects
                .into_iter()
                .map(|(o, a, v)| {
                    Ok(Effect { object: known(o)?, attribute: known(a)?, value: known(v)? })
                })
                .collect::<Result<Vec<_>, SnapshotError>>()?;
            events.push(EventRecord {
                time: ev.time,
                action: known(ev.action)?,
                verb: ev.verb,
                participants,
                effects,
            });
        }
        let episode = Episode { id: dto.id.clone(), declared, initial, events };
        if episodes.insert(dto.id.clone(), episode).is_some() {
            return Err(integrity(format!("duplicate episode id {}", dto.id)));
        }
    }
    Ok(Session { graph, registry, episodes, versions })
}

pub fn load_from(path: &Path) -> Result<Session, SnapshotError> {
    let text = std::fs::read_to_string(path)?;
    load(&text)
}

fn predicate_to_triple(p: &Predicate) -> (ElementId, ElementId, ElementId) {
    (p.object, p.attribute, p.value)
}
