//! Consolidation dynamics: competing model versions collapsing under
//! evidence, event-class induction from repeated episodes, repetition
//! strengthening, sparsification, and the exploration schedule.
//!
//! Versions die, never revive. Scores use Laplace smoothing so zero-evidence
//! versions are still comparable, and a kill needs at least ten observations
//! on both sides, keeping early consolidation slow.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::kernel::{EdgeKind, ElementId, ElementKind, KernelError, MemoryGraph};
use crate::method::MethodRegistry;
use crate::story::{replay, Episode, StoryError, StoryState};

/// Minimum observations (for + against) on both versions before one may be
/// killed by the other.
pub const MIN_EVIDENCE_FOR_KILL: u64 = 10;

/// One state proposition: object.attribute == value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Predicate {
    pub object: ElementId,
    pub attribute: ElementId,
    pub value: ElementId,
}

impl Predicate {
    pub fn holds(&self, state: &StoryState) -> bool {
        state.value(self.object, self.attribute) == Some(self.value)
    }
}

/// A condition-effect rule: when every condition predicate holds in some
/// state, every effect predicate is expected to hold in a strictly later one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub condition: Vec<Predicate>,
    pub effect: Vec<Predicate>,
}

impl Rule {
    fn condition_holds(&self, state: &StoryState) -> bool {
        self.condition.iter().all(|p| p.holds(state))
    }

    fn effect_holds(&self, state: &StoryState) -> bool {
        self.effect.iter().all(|p| p.holds(state))
    }
}

/// One competing explanation, scored by its evidence record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelVersion {
    pub id: String,
    pub rules: Vec<Rule>,
    pub evidence_for: u64,
    pub evidence_against: u64,
    /// Death is absorbing: once false, never true again.
    pub alive: bool,
}

impl ModelVersion {
    pub fn new(id: impl Into<String>, rules: Vec<Rule>) -> Self {
        ModelVersion {
            id: id.into(),
            rules,
            evidence_for: 0,
            evidence_against: 0,
            alive: true,
        }
    }

    /// Laplace-smoothed support: (for + 1) / (for + against + 2).
    pub fn score(&self) -> f64 {
        (self.evidence_for as f64 + 1.0)
            / ((self.evidence_for + self.evidence_against) as f64 + 2.0)
    }

    pub fn evidence_total(&self) -> u64 {
        self.evidence_for + self.evidence_against
    }
}

/// A recurring action-sequence template with per-position role constraints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventClassTemplate {
    /// Action class per sequence position.
    pub actions: Vec<ElementId>,
    /// Role name -> class constraint (None = any filler), per position.
    pub roles: Vec<BTreeMap<String, Option<ElementId>>>,
    /// Occurrences across the corpus.
    pub support: usize,
}

impl EventClassTemplate {
    /// Human-readable form, e.g. `search(actor:Person, location:Place)`.
    pub fn describe(&self, graph: &MemoryGraph) -> String {
        let name = |id: ElementId| {
            graph
                .element(id)
                .and_then(|e| e.name.clone())
                .unwrap_or_else(|| format!("_{id}"))
        };
        let steps: Vec<String> = self
            .actions
            .iter()
            .zip(&self.roles)
            .map(|(&a, roles)| {
                let parts: Vec<String> = roles
                    .iter()
                    .map(|(r, c)| match c {
                        Some(cls) => format!("{r}:{}", name(*cls)),
                        None => format!("{r}:Any"),
                    })
                    .collect();
                format!("{}({})", name(a), parts.join(", "))
            })
            .collect();
        steps.join(" ; ")
    }
}

/// Exploration rate decaying geometrically with experience:
/// rate(t) = epsilon0 * 2^(-t / half_life).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub t: u64,
    pub epsilon0: f64,
    pub half_life: f64,
}

impl Schedule {
    /// `epsilon0` in [0,1], `half_life` > 0.
    pub fn new(epsilon0: f64, half_life: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&epsilon0));
        debug_assert!(half_life > 0.0);
        Schedule { t: 0, epsilon0, half_life }
    }

    pub fn exploration_rate(&self) -> f64 {
        self.rate_at(self.t)
    }

    pub fn rate_at(&self, t: u64) -> f64 {
        self.epsilon0 * 2f64.powf(-(t as f64) / self.half_life)
    }

    pub fn step(&mut self) {
        self.t += 1;
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsolidationError {
    #[error("InvalidMinSupport: {0} (need at least 2)")]
    InvalidMinSupport(usize),
    #[error("ReplayFailure: {0}")]
    ReplayFailure(#[from] StoryError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

// --- evidence ------------------------------------------------------------------

/// Score one episode against every alive version: a rule whose condition
/// first holds at state i counts for the version if all its effects hold at
/// some state after i, against it otherwise. One increment per rule per
/// episode; dead versions are skipped.
pub fn observe(
    graph: &MemoryGraph,
    registry: &MethodRegistry,
    versions: &mut [ModelVersion],
    episode: &Episode,
) -> Result<(), ConsolidationError> {
    let states = replay(graph, registry, episode)?;
    for version in versions.iter_mut().filter(|v| v.alive) {
        for rule in &version.rules {
            let Some(trigger) = states.iter().position(|s| rule.condition_holds(s)) else {
                continue;
            };
            let satisfied = states[trigger + 1..].iter().any(|s| rule.effect_holds(s));
            if satisfied {
                version.evidence_for += 1;
            } else {
                version.evidence_against += 1;
            }
        }
    }
    Ok(())
}

/// Kill every version some rival dominates by the given factor, requiring at
/// least [`MIN_EVIDENCE_FOR_KILL`] observations on both sides. Scores are
/// compared against the alive set entering the call, so the pass is order
/// independent; the top-scoring version can never be dominated, so at least
/// one version always survives. Returns the ids killed by this pass.
pub fn collapse(versions: &mut [ModelVersion], dominance: f64) -> Vec<String> {
    let snapshot: Vec<(f64, u64)> = versions
        .iter()
        .map(|v| (v.score(), v.evidence_total()))
        .collect();
    let alive: Vec<usize> = versions
        .iter()
        .enumerate()
        .filter(|(_, v)| v.alive)
        .map(|(i, _)| i)
        .collect();
    let mut killed = Vec::new();
    for &i in &alive {
        let (score_i, total_i) = snapshot[i];
        if total_i < MIN_EVIDENCE_FOR_KILL {
            continue;
        }
        let dominated = alive.iter().any(|&j| {
            j != i
                && snapshot[j].1 >= MIN_EVIDENCE_FOR_KILL
                && snapshot[j].0 >= dominance * score_i
        });
        if dominated {
            versions[i].alive = false;
            killed.push(versions[i].id.clone());
        }
    }
    killed
}

// --- event-class induction ------------------------------------------------------

/// Pattern identity of one event window: the action sequence and the exact
/// role-name structure per position.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct PatternKey {
    actions: Vec<ElementId>,
    role_names: Vec<Vec<String>>,
}

/// Induce event classes: every maximal contiguous action subsequence that
/// recurs with identical role structure at least `min_support` times across
/// the corpus becomes a template, with each role generalized to the least
/// common class of its fillers. Output ordered by support (descending), then
/// by pattern.
pub fn induce_event_class(
    graph: &MemoryGraph,
    episodes: &[Episode],
    min_support: usize,
) -> Result<Vec<EventClassTemplate>, ConsolidationError> {
    if min_support < 2 {
        return Err(ConsolidationError::InvalidMinSupport(min_support));
    }
    // every contiguous window of every episode, grouped by pattern
    let mut occurrences: BTreeMap<PatternKey, Vec<Vec<BTreeMap<String, ElementId>>>> =
        BTreeMap::new();
    for ep in episodes {
        let n = ep.events.len();
        for start in 0..n {
            for end in (start + 1)..=n {
                let window = &ep.events[start..end];
                let key = PatternKey {
                    actions: window.iter().map(|e| e.action).collect(),
                    role_names: window
                        .iter()
                        .map(|e| e.participants.keys().cloned().collect())
                        .collect(),
                };
                occurrences
                    .entry(key)
                    .or_default()
                    .push(window.iter().map(|e| e.participants.clone()).collect());
            }
        }
    }
    let supported: BTreeMap<&PatternKey, usize> = occurrences
        .iter()
        .filter(|(_, occ)| occ.len() >= min_support)
        .map(|(k, occ)| (k, occ.len()))
        .collect();
    // maximal = no one-event extension on either side keeps the full
    // support; a shorter pattern that recurs strictly more often than any
    // extension stays its own template
    let mut templates = Vec::new();
    for (&key, &support) in &supported {
        let extended = supported.iter().any(|(other, &other_support)| {
            other_support >= support
                && other.actions.len() == key.actions.len() + 1
                && ((other.actions.starts_with(&key.actions)
                    && other.role_names.starts_with(&key.role_names))
                    || (other.actions.ends_with(&key.actions)
                        && other.role_names.ends_with(&key.role_names)))
        });
        if extended {
            continue;
        }
        let occ = &occurrences[key];
        let mut roles = Vec::with_capacity(key.actions.len());
        for (pos, names) in key.role_names.iter().enumerate() {
            let mut slot = BTreeMap::new();
            for role in names {
                let fillers: BTreeSet<ElementId> =
                    occ.iter().map(|window| window[pos][role]).collect();
                slot.insert(role.clone(), least_common_class(graph, &fillers)?);
            }
            roles.push(slot);
        }
        templates.push(EventClassTemplate { actions: key.actions.clone(), roles, support });
    }
    templates.sort_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then_with(|| pattern_sort_key(graph, a).cmp(&pattern_sort_key(graph, b)))
    });
    Ok(templates)
}

fn pattern_sort_key(graph: &MemoryGraph, t: &EventClassTemplate) -> (Vec<String>, Vec<Vec<String>>) {
    let names = t
        .actions
        .iter()
        .map(|&a| {
            graph
                .element(a)
                .and_then(|e| e.name.clone())
                .unwrap_or_else(|| format!("_{a}"))
        })
        .collect();
    let roles = t.roles.iter().map(|m| m.keys().cloned().collect()).collect();
    (names, roles)
}

/// The most specific class (lowest level, then lowest id) shared by every
/// filler's class closure; None when they share none.
fn least_common_class(
    graph: &MemoryGraph,
    fillers: &BTreeSet<ElementId>,
) -> Result<Option<ElementId>, ConsolidationError> {
    let hierarchy = [EdgeKind::InstanceOf, EdgeKind::IsA];
    let mut shared: Option<BTreeSet<ElementId>> = None;
    for &f in fillers {
        let classes: BTreeSet<ElementId> = graph
            .closure(f, &hierarchy)?
            .into_iter()
            .filter(|&c| graph.element(c).is_some_and(|e| e.level >= 1))
            .collect();
        shared = Some(match shared {
            None => classes,
            Some(prev) => prev.intersection(&classes).copied().collect(),
        });
    }
    let shared = shared.unwrap_or_default();
    Ok(shared
        .into_iter()
        .min_by_key(|&c| (graph.element(c).map_or(u32::MAX, |e| e.level), c)))
}

/// Materialize a template as an event-class element in the graph.
pub fn register_template(graph: &mut MemoryGraph, template: &EventClassTemplate) -> ElementId {
    let name: Vec<String> = template
        .actions
        .iter()
        .map(|&a| {
            graph
                .element(a)
                .and_then(|e| e.name.clone())
                .unwrap_or_else(|| format!("_{a}"))
        })
        .collect();
    graph.add_element(ElementKind::EventClass, Some(&name.join("+")), 1)
}

/// Start indices of every window of the episode that instantiates the
/// template: same actions, same role structure, fillers within their class
/// constraints.
pub fn recognize_event(
    graph: &MemoryGraph,
    template: &EventClassTemplate,
    episode: &Episode,
) -> Result<Vec<usize>, ConsolidationError> {
    let hierarchy = [EdgeKind::InstanceOf, EdgeKind::IsA];
    let len = template.actions.len();
    let mut hits = Vec::new();
    if len == 0 || episode.events.len() < len {
        return Ok(hits);
    }
    'windows: for start in 0..=(episode.events.len() - len) {
        for (offset, (&action, roles)) in
            template.actions.iter().zip(&template.roles).enumerate()
        {
            let event = &episode.events[start + offset];
            if event.action != action {
                continue 'windows;
            }
            let names: Vec<&String> = event.participants.keys().collect();
            let expected: Vec<&String> = roles.keys().collect();
            if names != expected {
                continue 'windows;
            }
            for (role, constraint) in roles {
                let filler = event.participants[role];
                if let Some(class) = constraint {
                    let ok = filler == *class
                        || graph.closure(filler, &hierarchy)?.contains(class);
                    if !ok {
                        continue 'windows;
                    }
                }
            }
        }
        hits.push(start);
    }
    Ok(hits)
}

// --- strengthening ---------------------------------------------------------------

/// Prune non-structural edges below the consolidation floor.
pub fn sparsify(graph: &mut MemoryGraph, floor: f64) -> usize {
    graph.sparsify(floor)
}

/// Touch every element and edge the episode references, once per call:
/// declared objects, their declared classes and instance edges, initial and
/// effect value triples, actions, participants, and the admissibility edges
/// the events exercise. Replaying the same episode n times drives the
/// referenced consolidations to 1 - 0.9^n.
pub fn repetition_boost(
    graph: &mut MemoryGraph,
    registry: &MethodRegistry,
    episode: &Episode,
) -> Result<(), ConsolidationError> {
    replay(graph, registry, episode)?;
    let mut elements: BTreeSet<ElementId> = BTreeSet::new();
    let mut edges: BTreeSet<crate::kernel::EdgeId> = BTreeSet::new();
    for d in &episode.declared {
        elements.insert(d.object);
        elements.insert(d.class);
        for e in graph.edges_from(d.object, EdgeKind::InstanceOf) {
            if e.dst == d.class {
                edges.insert(e.id);
            }
        }
    }
    for (&(obj, attr), &val) in &episode.initial.values {
        elements.extend([obj, attr, val]);
    }
    for event in &episode.events {
        elements.insert(event.action);
        for &p in event.participants.values() {
            elements.insert(p);
            let mut sources = vec![p];
            sources.extend(graph.closure(p, &[EdgeKind::InstanceOf, EdgeKind::IsA])?);
            for src in sources {
                for e in graph.edges_from(src, EdgeKind::AdmissibleAction) {
                    if e.dst == event.action {
                        edges.insert(e.id);
                    }
                }
            }
        }
        for eff in &event.effects {
            elements.extend([eff.object, eff.attribute, eff.value]);
        }
    }
    for id in elements {
        graph.touch(id)?;
    }
    for id in edges {
        graph.touch_edge(id)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::story::parse_story;

    const SYNTH1: &str = include_str!("../../../fixtures/synth1.story");
    const SYNTH2: &str = include_str!("../../../fixtures/synth2.story");

    fn corpus() -> (MemoryGraph, MethodRegistry, Vec<Episode>) {
        let mut g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        let mut eps = parse_story(&mut g, &mut r, crate::story::DAVID_STORY).unwrap();
        eps.extend(parse_story(&mut g, &mut r, SYNTH1).unwrap());
        eps.extend(parse_story(&mut g, &mut r, SYNTH2).unwrap());
        (g, r, eps)
    }

    fn bell_fixture() -> (MemoryGraph, MethodRegistry, Rule, Rule) {
        let mut g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        let text = "episode probe\nobj bell : Thing\nobj dog : Animal\nact 1 ring object=bell => bell.state=rung\nact 2 react actor=dog => dog.response=salivation\n";
        parse_story(&mut g, &mut r, text).unwrap();
        let bell = g.find_by_name("bell")[0];
        let dog = g.find_by_name("dog")[0];
        let state = g.find_by_name("state")[0];
        let response = g.find_by_name("response")[0];
        let rung = g.find_by_name("rung")[0];
        let salivation = g.find_by_name("salivation")[0];
        let silence = g.intern_value("silence");
        let cond = Predicate { object: bell, attribute: state, value: rung };
        let saliva = Rule {
            condition: vec![cond],
            effect: vec![Predicate { object: dog, attribute: response, value: salivation }],
        };
        let quiet = Rule {
            condition: vec![cond],
            effect: vec![Predicate { object: dog, attribute: response, value: silence }],
        };
        (g, r, saliva, quiet)
    }

    fn pavlov_episode(
        g: &mut MemoryGraph,
        r: &mut MethodRegistry,
        id: usize,
        salivates: bool,
    ) -> Episode {
        let response = if salivates { "salivation" } else { "silence" };
        let text = format!(
            "episode pavlov{id}\nobj bell : Thing\nobj dog : Animal\nact 1 ring object=bell => bell.state=rung\nact 2 react actor=dog => dog.response={response}\n"
        );
        parse_story(g, r, &text).unwrap().pop().unwrap()
    }

    #[test]
    fn observe_scores_rules_once_per_episode() {
        let (mut g, mut r, saliva, quiet) = bell_fixture();
        let ep = pavlov_episode(&mut g, &mut r, 0, true);
        let mut versions =
            vec![ModelVersion::new("saliva", vec![saliva]), ModelVersion::new("quiet", vec![quiet])];
        observe(&g, &r, &mut versions, &ep).unwrap();
        assert_eq!((versions[0].evidence_for, versions[0].evidence_against), (1, 0));
        assert_eq!((versions[1].evidence_for, versions[1].evidence_against), (0, 1));
    }

    #[test]
    fn untriggered_rules_leave_counts_unchanged() {
        let (mut g, mut r, saliva, _) = bell_fixture();
        // an episode that never rings the bell
        let text = "episode calm\nobj dog : Animal\nact 1 react actor=dog => dog.response=silence\n";
        let ep = parse_story(&mut g, &mut r, text).unwrap().pop().unwrap();
        let mut versions = vec![ModelVersion::new("saliva", vec![saliva])];
        observe(&g, &r, &mut versions, &ep).unwrap();
        assert_eq!(versions[0].evidence_total(), 0);
    }

    #[test]
    fn effect_before_condition_counts_against() {
        let (mut g, mut r, _, _) = bell_fixture();
        // salivation happens first, then the bell rings: effect never follows
        let text = "episode rev\nobj bell : Thing\nobj dog : Animal\nact 1 react actor=dog => dog.response=salivation\nact 2 ring object=bell => bell.state=rung\n";
        let ep = parse_story(&mut g, &mut r, text).unwrap().pop().unwrap();
        let bell = g.find_by_name("bell")[0];
        let dog = g.find_by_name("dog")[0];
        let state = g.find_by_name("state")[0];
        let response = g.find_by_name("response")[0];
        let rung = g.find_by_name("rung")[0];
        let salivation = g.find_by_name("salivation")[0];
        let rule = Rule {
            condition: vec![Predicate { object: bell, attribute: state, value: rung }],
            effect: vec![Predicate { object: dog, attribute: response, value: salivation }],
        };
        let mut versions = vec![ModelVersion::new("v", vec![rule])];
        observe(&g, &r, &mut versions, &ep).unwrap();
        // condition first holds at the final state; nothing follows it
        assert_eq!((versions[0].evidence_for, versions[0].evidence_against), (0, 1));
    }

    #[test]
    fn collapse_kills_dominated_version() {
        let mut versions = vec![
            ModelVersion { id: "strong".into(), rules: vec![], evidence_for: 17, evidence_against: 1, alive: true },
            ModelVersion { id: "weak".into(), rules: vec![], evidence_for: 3, evidence_against: 15, alive: true },
        ];
        // scores: 18/20 = 0.9 and 4/20 = 0.2; 0.9 >= 2 * 0.2
        let killed = collapse(&mut versions, 2.0);
        assert_eq!(killed, vec!["weak".to_string()]);
        assert!(versions[0].alive);
        assert!(!versions[1].alive);
    }

    #[test]
    fn collapse_needs_evidence_on_both_sides() {
        let mut versions = vec![
            ModelVersion { id: "a".into(), rules: vec![], evidence_for: 9, evidence_against: 0, alive: true },
            ModelVersion { id: "b".into(), rules: vec![], evidence_for: 0, evidence_against: 9, alive: true },
        ];
        assert!(collapse(&mut versions, 2.0).is_empty());
        versions[0].evidence_for = 18;
        versions[1].evidence_against = 18;
        assert_eq!(collapse(&mut versions, 2.0), vec!["b".to_string()]);
    }

    #[test]
    fn single_version_always_survives() {
        let mut versions = vec![ModelVersion {
            id: "only".into(),
            rules: vec![],
            evidence_for: 0,
            evidence_against: 100,
            alive: true,
        }];
        assert!(collapse(&mut versions, 2.0).is_empty());
        assert!(versions[0].alive);
    }

    #[test]
    fn tied_versions_all_survive() {
        let mut versions: Vec<ModelVersion> = (0..3)
            .map(|i| ModelVersion {
                id: format!("v{i}"),
                rules: vec![],
                evidence_for: 10,
                evidence_against: 10,
                alive: true,
            })
            .collect();
        assert!(collapse(&mut versions, 2.0).is_empty());
        assert!(versions.iter().all(|v| v.alive));
    }

    #[test]
    fn death_is_absorbing_under_observation() {
        let (mut g, mut r, saliva, _) = bell_fixture();
        let ep = pavlov_episode(&mut g, &mut r, 1, true);
        let mut versions = vec![ModelVersion::new("dead", vec![saliva])];
        versions[0].alive = false;
        observe(&g, &r, &mut versions, &ep).unwrap();
        assert_eq!(versions[0].evidence_total(), 0);
        assert!(!versions[0].alive);
    }

    #[test]
    fn majority_version_survives_within_fifty_observations() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let (mut g, mut r, saliva, quiet) = bell_fixture();
        let mut versions =
            vec![ModelVersion::new("saliva", vec![saliva]), ModelVersion::new("quiet", vec![quiet])];
        let mut outcomes: Vec<bool> = (0..50).map(|i| i % 5 != 0).collect(); // 80% true
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        outcomes.shuffle(&mut rng);
        let mut killed_at = None;
        for (i, &salivates) in outcomes.iter().enumerate() {
            let ep = pavlov_episode(&mut g, &mut r, 100 + i, salivates);
            observe(&g, &r, &mut versions, &ep).unwrap();
            let killed = collapse(&mut versions, 2.0);
            if !killed.is_empty() && killed_at.is_none() {
                killed_at = Some(i + 1);
            }
        }
        assert!(versions[0].alive, "majority version must survive");
        assert!(!versions[1].alive, "minority version must die");
        assert!(killed_at.unwrap() <= 50);
        // a further 100 favorable observations never revive the dead version
        for i in 0..100 {
            let ep = pavlov_episode(&mut g, &mut r, 500 + i, false);
            observe(&g, &r, &mut versions, &ep).unwrap();
            collapse(&mut versions, 2.0);
            assert!(!versions[1].alive);
        }
        assert!(versions[0].alive);
    }

    #[test]
    fn induction_finds_exactly_the_search_template() {
        let (g, _, eps) = corpus();
        let templates = induce_event_class(&g, &eps, 3).unwrap();
        assert_eq!(templates.len(), 1);
        let t = &templates[0];
        assert_eq!(t.support, 5);
        assert_eq!(t.actions.len(), 1);
        let search = g
            .elements()
            .find(|e| e.kind == ElementKind::Action && e.name.as_deref() == Some("search"))
            .unwrap()
            .id;
        assert_eq!(t.actions[0], search);
        let person = g
            .elements()
            .find(|e| e.level == 1 && e.name.as_deref() == Some("Person"))
            .unwrap()
            .id;
        let place = g
            .elements()
            .find(|e| e.level == 1 && e.name.as_deref() == Some("Place"))
            .unwrap()
            .id;
        assert_eq!(t.roles[0].get("actor"), Some(&Some(person)));
        assert_eq!(t.roles[0].get("location"), Some(&Some(place)));
    }

    #[test]
    fn recognition_matches_the_three_searches() {
        let (g, _, eps) = corpus();
        let templates = induce_event_class(&g, &eps, 3).unwrap();
        let hits = recognize_event(&g, &templates[0], &eps[0]).unwrap();
        // events 2, 3, 4 of the first episode (zero-based indices 1, 2, 3)
        assert_eq!(hits, vec![1, 2, 3]);
        // a fresh search event is recognized as an instance
        let mut g2 = g.clone();
        let mut r2 = MethodRegistry::new();
        let extra = "episode extra\nobj Carol : Person\nobj attic : Place\nact 1 search actor=Carol location=attic\n";
        let ep = parse_story(&mut g2, &mut r2, extra).unwrap().pop().unwrap();
        assert_eq!(recognize_event(&g2, &templates[0], &ep).unwrap(), vec![0]);
    }

    #[test]
    fn support_below_threshold_yields_nothing() {
        let (g, _, eps) = corpus();
        assert!(induce_event_class(&g, &eps, 100).unwrap().is_empty());
        assert_eq!(
            induce_event_class(&g, &eps, 1).unwrap_err(),
            ConsolidationError::InvalidMinSupport(1)
        );
    }

    #[test]
    fn induction_is_invariant_under_episode_permutation() {
        let (g, _, eps) = corpus();
        let forward = induce_event_class(&g, &eps, 3).unwrap();
        let mut reversed = eps.clone();
        reversed.reverse();
        let backward = induce_event_class(&g, &reversed, 3).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn longer_supported_sequences_absorb_their_parts() {
        let mut g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        let mut eps = Vec::new();
        for i in 0..3 {
            let text = format!(
                "episode pair{i}\nobj w{i} : Worker\nact 1 lift actor=w{i}\nact 2 carry actor=w{i}\n"
            );
            eps.extend(parse_story(&mut g, &mut r, &text).unwrap());
        }
        let templates = induce_event_class(&g, &eps, 3).unwrap();
        // [lift, carry] has support 3 and absorbs [lift] and [carry]
        assert_eq!(templates.len(), 1);
        assert_eq!(templates[0].actions.len(), 2);
        assert_eq!(templates[0].support, 3);
    }

    #[test]
    fn interleaved_sequences_order_by_support() {
        let mut g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        let mut eps = Vec::new();
        // "wave" occurs 4 times, "jump" 3 times, in alternating episodes
        for i in 0..4 {
            let jump = if i < 3 { format!("act 2 jump actor=p{i}\n") } else { String::new() };
            let text =
                format!("episode mix{i}\nobj p{i} : Person\nact 1 wave actor=p{i}\n{jump}");
            eps.extend(parse_story(&mut g, &mut r, &text).unwrap());
        }
        let templates = induce_event_class(&g, &eps, 3).unwrap();
        assert_eq!(templates.len(), 2);
        assert!(templates[0].support > templates[1].support);
        assert_eq!(templates[0].support, 4);
        assert_eq!(templates[1].support, 3);
    }

    #[test]
    fn repetition_compounds_consolidation() {
        let (mut g, r, eps) = corpus();
        let search = g.find_by_name("search")[0];
        let david = g.find_by_name("David")[0];
        for _ in 0..5 {
            repetition_boost(&mut g, &r, &eps[0]).unwrap();
        }
        let expect = 1.0 - 0.9f64.powi(5);
        assert!((g.element(search).unwrap().stats.consolidation - expect).abs() < 1e-12);
        assert!((g.element(david).unwrap().stats.consolidation - expect).abs() < 1e-12);
        assert_eq!(g.element(david).unwrap().stats.visits, 5);
    }

    #[test]
    fn disjoint_episodes_touch_disjoint_stats() {
        let (mut g, r, eps) = corpus();
        // synth1 mentions Alice/garden only; David's cast stays untouched
        let alice = g.find_by_name("Alice")[0];
        let david = g.find_by_name("David")[0];
        repetition_boost(&mut g, &r, &eps[1]).unwrap();
        assert_eq!(g.element(alice).unwrap().stats.visits, 1);
        assert_eq!(g.element(david).unwrap().stats.visits, 0);
    }

    #[test]
    fn schedule_halves_per_half_life() {
        let s = Schedule::new(0.8, 10.0);
        assert_eq!(s.rate_at(0), 0.8);
        assert!((s.rate_at(10) - 0.4).abs() < 1e-12);
        assert!((s.rate_at(20) - 0.2).abs() < 1e-12);
        for t in 0..100 {
            assert!(s.rate_at(t + 1) < s.rate_at(t));
        }
        let mut s2 = Schedule::new(1.0, 5.0);
        s2.step();
        assert!(s2.exploration_rate() < 1.0);
    }

    #[test]
    fn sparsify_delegates_to_graph_pruning() {
        let mut g = MemoryGraph::new();
        let a = g.add_element(ElementKind::Object, Some("a"), 0);
        let b = g.add_element(ElementKind::Object, Some("b"), 1);
        let weak = g.add_edge(a, b, EdgeKind::Has, 1.0).unwrap();
        g.add_edge(a, b, EdgeKind::InstanceOf, 1.0).unwrap();
        g.set_edge_consolidation(weak, 0.1).unwrap();
        assert_eq!(sparsify(&mut g, 0.5), 1);
        assert!(g.edge(weak).is_none());
    }
}
