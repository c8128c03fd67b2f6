//! One handler per subcommand. Handlers buffer records in an [`Emitter`],
//! persist the session before printing, and surface module errors by their
//! taxonomy name.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::ValueEnum;

use mom_core::abstraction::abstract_instances;
use mom_core::attention::{focus_filter, CandidateOp, FocusSet};
use mom_core::consolidation::{collapse, induce_event_class, register_template};
use mom_core::kernel::{ElementId, ElementKind, MemoryGraph};
use mom_core::method::{admissible_actions, Mode};
use mom_core::planner::{
    build_hierarchy, design, parse_space, solve, solve_traced, Coarsening, GroundSpace,
    LayeredSpace, PlanError, SpaceFile, TraceEntry, Will,
};
use mom_core::snapshot::{self, Session};
use mom_core::story::{parse_story, state_at, StoryError};

use crate::records::{Emitter, FocusEntry, Record, SlotEntry, ValueEntry};
use crate::session::{load_session, read_file, save_session, CliError, SessionConfig};

/// What makes a designed start good.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scorer {
    /// Farthest from the goal by reversed breadth-first distance
    Far,
    /// Highest state index
    Index,
}

fn name_of(graph: &MemoryGraph, id: ElementId) -> String {
    graph
        .element(id)
        .and_then(|e| e.name.clone())
        .unwrap_or_else(|| format!("#{}", id.0))
}

/// The lowest-id element carrying the name.
fn resolve(graph: &MemoryGraph, name: &str) -> Result<ElementId, CliError> {
    graph
        .find_by_name(name)
        .first()
        .copied()
        .ok_or_else(|| CliError::Domain(format!("UnknownElement: no element named `{name}`")))
}

fn parse_episodes(
    session: &mut Session,
    path: &Path,
    emitted: &mut Vec<Record>,
) -> Result<(), CliError> {
    let text = read_file(path)?;
    let episodes = parse_story(&mut session.graph, &mut session.registry, &text)
        .map_err(|e| CliError::Domain(format!("{e} in {}", path.display())))?;
    for ep in episodes {
        if session.episodes.contains_key(&ep.id) {
            return Err(CliError::Domain(format!(
                "DuplicateEpisode: `{}` is already in the session",
                ep.id
            )));
        }
        emitted.push(Record::Ingest {
            episode: ep.id.clone(),
            objects: ep.declared.len(),
            events: ep.events.len(),
        });
        session.episodes.insert(ep.id.clone(), ep);
    }
    Ok(())
}

pub fn ingest(cfg: &SessionConfig, files: &[PathBuf]) -> Result<(), CliError> {
    let mut session = load_session(cfg)?;
    let mut records = Vec::new();
    for path in files {
        parse_episodes(&mut session, path, &mut records)?;
    }
    save_session(cfg, &session)?;
    let mut em = Emitter::new(cfg.output);
    for r in &records {
        em.emit(r);
    }
    em.finish();
    Ok(())
}

pub fn replay(cfg: &SessionConfig, episode: &str, at: Option<usize>) -> Result<(), CliError> {
    let session = load_session(cfg)?;
    let ep = session
        .episodes
        .get(episode)
        .ok_or_else(|| CliError::from(StoryError::UnknownEpisode(episode.to_string())))?;
    let t = at.unwrap_or(ep.events.len());
    let state = state_at(&session.graph, &session.registry, ep, t)?;
    let graph = &session.graph;
    let mut present: Vec<String> = state.present.iter().map(|&o| name_of(graph, o)).collect();
    present.sort();
    let mut values: Vec<ValueEntry> = state
        .values
        .iter()
        .map(|(&(obj, attr), &val)| ValueEntry {
            object: name_of(graph, obj),
            attribute: name_of(graph, attr),
            value: name_of(graph, val),
        })
        .collect();
    values.sort_by(|a, b| (&a.object, &a.attribute).cmp(&(&b.object, &b.attribute)));
    let mut em = Emitter::new(cfg.output);
    em.emit(&Record::State { episode: episode.to_string(), time: t, present, values });
    em.finish();
    Ok(())
}

pub fn query(cfg: &SessionConfig, name: &str, creative: bool) -> Result<(), CliError> {
    let session = load_session(cfg)?;
    let graph = &session.graph;
    let id = resolve(graph, name)?;
    let el = graph.element(id).expect("resolved ids exist");
    let mut em = Emitter::new(cfg.output);
    em.emit(&Record::Element {
        name: name_of(graph, id),
        id: id.0,
        kind: format!("{:?}", el.kind),
        level: el.level,
        visits: el.stats.visits,
        uncertainty: el.stats.uncertainty,
        consolidation: el.stats.consolidation,
    });
    for b in graph.attributes_of(id)? {
        em.emit(&Record::Attribute {
            element: name_of(graph, id),
            attribute: name_of(graph, b.attribute),
            value: b.value.map(|v| name_of(graph, v)),
            provenance: name_of(graph, b.provenance),
        });
    }
    let mode = if creative { Mode::Creative } else { Mode::Normal };
    for (i, (action, score)) in admissible_actions(graph, id, mode)?.into_iter().enumerate() {
        em.emit(&Record::Action {
            element: name_of(graph, id),
            rank: i + 1,
            action: name_of(graph, action),
            score,
        });
    }
    em.finish();
    Ok(())
}

pub fn abstract_cmd(
    cfg: &SessionConfig,
    members: &[String],
    class_name: &str,
) -> Result<(), CliError> {
    let mut session = load_session(cfg)?;
    let ids: Vec<ElementId> = members
        .iter()
        .map(|m| resolve(&session.graph, m))
        .collect::<Result<_, _>>()?;
    let (class, signature) = abstract_instances(&mut session.graph, &ids, class_name)?;
    let graph = &session.graph;
    let record = Record::Class {
        name: class_name.to_string(),
        id: class.0,
        members: signature.member_count,
        attributes: signature
            .common_attributes
            .iter()
            .map(|&(a, v)| SlotEntry {
                attribute: name_of(graph, a),
                value: v.map(|v| name_of(graph, v)),
            })
            .collect(),
        actions: signature.common_actions.iter().map(|&a| name_of(graph, a)).collect(),
    };
    save_session(cfg, &session)?;
    let mut em = Emitter::new(cfg.output);
    em.emit(&record);
    em.finish();
    Ok(())
}

pub fn consolidate(
    cfg: &SessionConfig,
    episodes_dir: Option<&Path>,
    min_support: usize,
    dominance: f64,
) -> Result<(), CliError> {
    if dominance <= 1.0 {
        return Err(CliError::Usage(format!("dominance must exceed 1, got {dominance}")));
    }
    let mut session = load_session(cfg)?;
    let mut records = Vec::new();
    if let Some(dir) = episodes_dir {
        let entries = std::fs::read_dir(dir)
            .map_err(|e| CliError::Domain(format!("Io: {}: {e}", dir.display())))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "story"))
            .collect();
        paths.sort();
        let mut ingests = Vec::new();
        for p in &paths {
            parse_episodes(&mut session, p, &mut ingests)?;
        }
    }
    let episodes: Vec<_> = session.episodes.values().cloned().collect();
    let templates = induce_event_class(&session.graph, &episodes, min_support)?;
    for t in &templates {
        let pattern = t.describe(&session.graph);
        // re-running against the same snapshot must not mint duplicate classes
        let would_be: Vec<String> =
            t.actions.iter().map(|&a| name_of(&session.graph, a)).collect();
        let would_be = would_be.join("+");
        let class = session
            .graph
            .find_by_name(&would_be)
            .iter()
            .copied()
            .find(|&c| {
                session
                    .graph
                    .element(c)
                    .is_some_and(|e| e.kind == ElementKind::EventClass && e.level >= 1)
            })
            .unwrap_or_else(|| register_template(&mut session.graph, t));
        records.push(Record::Template {
            pattern,
            support: t.support,
            class: name_of(&session.graph, class),
        });
    }
    if !session.versions.is_empty() {
        let killed = collapse(&mut session.versions, dominance);
        let alive: Vec<String> = session
            .versions
            .iter()
            .filter(|v| v.alive)
            .map(|v| v.id.clone())
            .collect();
        records.push(Record::Versions { alive, killed });
    }
    save_session(cfg, &session)?;
    let mut em = Emitter::new(cfg.output);
    for r in &records {
        em.emit(r);
    }
    em.finish();
    Ok(())
}

/// Space, start state, and goal state from a file plus optional overrides.
fn load_space(
    path: &Path,
    start: Option<&str>,
    goal: Option<&str>,
) -> Result<(SpaceFile, Option<usize>, Option<usize>), CliError> {
    let text = read_file(path)?;
    let file = parse_space(&text)
        .map_err(|e| CliError::Domain(format!("{e} in {}", path.display())))?;
    let by_name = |name: Option<&str>, fallback: Option<usize>| -> Result<Option<usize>, CliError> {
        match name {
            Some(n) => file
                .space
                .state(n)
                .map(Some)
                .ok_or_else(|| CliError::from(PlanError::UnknownState(n.to_string()))),
            None => Ok(fallback),
        }
    };
    let s = by_name(start, file.start)?;
    let g = by_name(goal, file.goal)?;
    Ok((file, s, g))
}

fn hierarchy(space: GroundSpace, levels: usize) -> Result<LayeredSpace, CliError> {
    // a single level means flat search; no partition of any shape is needed
    let coarsening =
        if levels == 1 { Coarsening::Explicit(Vec::new()) } else { Coarsening::Grid2x2 };
    Ok(build_hierarchy(space, levels, coarsening)?)
}

fn plan_record(ground: &GroundSpace, plan: &mom_core::planner::Plan) -> Record {
    Record::Plan {
        steps: plan.actions.len(),
        cost: plan.cost,
        states: plan.states.iter().map(|&s| ground.name(s).to_string()).collect(),
        actions: plan.actions.clone(),
        expansions: plan.stats.expansions.clone(),
        backtracks: plan.stats.backtracks,
        widenings: plan.stats.widenings,
        flat_fallback: plan.stats.flat_fallback,
    }
}

pub fn plan(
    cfg: &SessionConfig,
    space: &Path,
    levels: usize,
    trace: bool,
    start: Option<&str>,
    goal: Option<&str>,
) -> Result<(), CliError> {
    let (file, start, goal) = load_space(space, start, goal)?;
    let start = start.ok_or_else(|| {
        CliError::Domain("UnknownState: the space names no start; pass --start".into())
    })?;
    let goal = goal.ok_or(PlanError::NotPurposeful)?;
    let layered = hierarchy(file.space, levels)?;
    let will = Will::purposeful([start], [goal]);
    let mut em = Emitter::new(cfg.output);
    let plan = if trace {
        let mut entries: Vec<TraceEntry> = Vec::new();
        let plan = solve_traced(&layered, &will, &mut entries)?;
        for e in &entries {
            // abstract transitions carry no label; print the start marker
            let action = if e.action.is_empty() { "-".to_string() } else { e.action.clone() };
            em.emit(&Record::Trace { level: e.level, state: e.state.clone(), action });
        }
        plan
    } else {
        solve(&layered, &will)?
    };
    em.emit(&plan_record(&layered.ground, &plan));
    em.finish();
    Ok(())
}

/// Hop counts to the goal region, following transitions backwards.
fn reverse_bfs(ground: &GroundSpace, goals: &BTreeSet<usize>) -> Vec<Option<u64>> {
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
    dist
}

pub fn design_cmd(
    cfg: &SessionConfig,
    space: &Path,
    levels: usize,
    scorer: Scorer,
    goal: Option<&str>,
) -> Result<(), CliError> {
    let (file, _, goal) = load_space(space, None, goal)?;
    let goal = goal.ok_or(PlanError::NotPurposeful)?;
    let layered = hierarchy(file.space, levels)?;
    let goals: BTreeSet<usize> = [goal].into();
    let dist = match scorer {
        Scorer::Far => Some(reverse_bfs(&layered.ground, &goals)),
        Scorer::Index => None,
    };
    let score_of = |s: usize| -> Option<f64> {
        match &dist {
            Some(d) => d[s].map(|h| h as f64),
            None => Some(s as f64),
        }
    };
    let (start, plan) = design(&layered, &goals, score_of)?;
    let mut em = Emitter::new(cfg.output);
    em.emit(&Record::Design {
        start: layered.ground.name(start).to_string(),
        score: score_of(start).expect("the chosen start was scored"),
    });
    em.emit(&plan_record(&layered.ground, &plan));
    em.finish();
    Ok(())
}

fn focus_record(graph: &MemoryGraph, focus: &FocusSet, w: f64, evicted: Vec<String>) -> Record {
    Record::Focus {
        size: focus.len(),
        capacity: focus.capacity(),
        w,
        entries: focus
            .ordered()
            .into_iter()
            .map(|(e, p)| FocusEntry { element: name_of(graph, e), priority: p })
            .collect(),
        evicted,
    }
}

pub fn attend(cfg: &SessionConfig, w: f64, items: &[String]) -> Result<(), CliError> {
    let session = load_session(cfg)?;
    let graph = &session.graph;
    let mut focus = FocusSet::with_capacity(cfg.wm_capacity)?;
    let mut evicted = Vec::new();
    for item in items {
        let (name, internal, external) = parse_item(item)?;
        let id = resolve(graph, &name)?;
        if let Some(out) = focus.attend(graph, id, w, internal, external)? {
            evicted.push(name_of(graph, out));
        }
    }
    let mut em = Emitter::new(cfg.output);
    em.emit(&focus_record(graph, &focus, w, evicted));
    em.finish();
    Ok(())
}

/// `NAME=INTERNAL,EXTERNAL` → (name, internal, external).
fn parse_item(item: &str) -> Result<(String, f64, f64), CliError> {
    let bad =
        || CliError::Usage(format!("expected NAME=INTERNAL,EXTERNAL, got `{item}`"));
    let (name, rest) = item.split_once('=').ok_or_else(bad)?;
    let (i, e) = rest.split_once(',').ok_or_else(bad)?;
    let internal: f64 = i.trim().parse().map_err(|_| bad())?;
    let external: f64 = e.trim().parse().map_err(|_| bad())?;
    Ok((name.to_string(), internal, external))
}

pub fn step(cfg: &SessionConfig, script: Option<&Path>, w: f64) -> Result<(), CliError> {
    let session = load_session(cfg)?;
    let graph = &session.graph;
    let text = match script {
        Some(p) => read_file(p)?,
        None => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| CliError::Domain(format!("Io: stdin: {e}")))?;
            buf
        }
    };
    let mut focus = FocusSet::with_capacity(cfg.wm_capacity)?;
    let mut em = Emitter::new(cfg.output);
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |msg: String| {
            CliError::Domain(format!("SyntaxError: script line {}: {msg}", idx + 1))
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        let mut evicted = Vec::new();
        match toks[0] {
            "attend" if toks.len() == 4 => {
                let internal: f64 =
                    toks[2].parse().map_err(|_| syntax(format!("bad number `{}`", toks[2])))?;
                let external: f64 =
                    toks[3].parse().map_err(|_| syntax(format!("bad number `{}`", toks[3])))?;
                let id = resolve(graph, toks[1])?;
                if let Some(out) = focus.attend(graph, id, w, internal, external)? {
                    evicted.push(name_of(graph, out));
                }
            }
            "remove" if toks.len() == 2 => {
                let id = resolve(graph, toks[1])?;
                focus.remove(id);
            }
            "clear" if toks.len() == 1 => focus.clear(),
            "show" if toks.len() == 1 => {}
            "filter" if toks.len() >= 3 => {
                let participants: Vec<ElementId> = toks[2..]
                    .iter()
                    .map(|n| resolve(graph, n))
                    .collect::<Result<_, _>>()?;
                let op = CandidateOp::new(toks[1], participants);
                let report = focus_filter(&focus, graph, &[op]);
                let permitted = report.rejected.is_empty();
                let missing = report
                    .rejected
                    .first()
                    .map(|(_, ids)| ids.iter().map(|&m| name_of(graph, m)).collect())
                    .unwrap_or_default();
                em.emit(&Record::Filter { op: toks[1].to_string(), permitted, missing });
            }
            verb => {
                return Err(syntax(format!(
                    "unrecognized `{verb}` (want attend NAME I E, remove NAME, clear, \
                     filter OP NAME.., show)"
                )));
            }
        }
        em.emit(&focus_record(graph, &focus, w, evicted));
    }
    em.finish();
    Ok(())
}

fn snapshot_record(op: &str, path: &Path, session: &Session) -> Record {
    Record::Snapshot {
        op: op.to_string(),
        path: path.display().to_string(),
        elements: session.graph.elements().count(),
        edges: session.graph.edges().count(),
        methods: session.registry.methods().count(),
        episodes: session.episodes.len(),
        versions: session.versions.len(),
    }
}

pub fn snapshot_save(cfg: &SessionConfig, to: &Path) -> Result<(), CliError> {
    let session = load_session(cfg)?;
    snapshot::save_to(&session, to)?;
    let mut em = Emitter::new(cfg.output);
    em.emit(&snapshot_record("save", to, &session));
    em.finish();
    Ok(())
}

pub fn snapshot_load(cfg: &SessionConfig, from: &Path) -> Result<(), CliError> {
    let session = snapshot::load_from(from)?;
    if let Some(dest) = &cfg.snapshot {
        if dest != from {
            snapshot::save_to(&session, dest)?;
        }
    }
    let mut em = Emitter::new(cfg.output);
    em.emit(&snapshot_record("load", from, &session));
    em.finish();
    Ok(())
}
