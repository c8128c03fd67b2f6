//! Output records and their two renderings.
//!
//! Every subcommand produces a sequence of [`Record`]s. JSON mode prints one
//! self-describing object per line; human mode prints the same records
//! formatted for reading. Records are buffered and flushed at the end of the
//! command, so a failing command never leaves partial output behind.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    Human,
    Json,
}

/// One `object.attribute = value` row of a story state.
#[derive(Debug, Clone, Serialize)]
pub struct ValueEntry {
    pub object: String,
    pub attribute: String,
    pub value: String,
}

/// One signature slot of a class: attribute plus promoted value, if any.
#[derive(Debug, Clone, Serialize)]
pub struct SlotEntry {
    pub attribute: String,
    pub value: Option<String>,
}

/// One focus member with its blended priority.
#[derive(Debug, Clone, Serialize)]
pub struct FocusEntry {
    pub element: String,
    pub priority: f64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Ingest {
        episode: String,
        objects: usize,
        events: usize,
    },
    State {
        episode: String,
        time: usize,
        present: Vec<String>,
        values: Vec<ValueEntry>,
    },
    Element {
        name: String,
        id: u64,
        kind: String,
        level: u32,
        visits: u64,
        uncertainty: f64,
        consolidation: f64,
    },
    Attribute {
        element: String,
        attribute: String,
        value: Option<String>,
        provenance: String,
    },
    Action {
        element: String,
        rank: usize,
        action: String,
        score: f64,
    },
    Class {
        name: String,
        id: u64,
        members: usize,
        attributes: Vec<SlotEntry>,
        actions: Vec<String>,
    },
    Template {
        pattern: String,
        support: usize,
        class: String,
    },
    Versions {
        alive: Vec<String>,
        killed: Vec<String>,
    },
    Plan {
        steps: usize,
        cost: f64,
        states: Vec<String>,
        actions: Vec<String>,
        expansions: Vec<u64>,
        backtracks: u64,
        widenings: u64,
        flat_fallback: bool,
    },
    Trace {
        level: usize,
        state: String,
        action: String,
    },
    Design {
        start: String,
        score: f64,
    },
    Focus {
        size: usize,
        capacity: usize,
        w: f64,
        entries: Vec<FocusEntry>,
        evicted: Vec<String>,
    },
    Filter {
        op: String,
        permitted: bool,
        missing: Vec<String>,
    },
    Snapshot {
        op: String,
        path: String,
        elements: usize,
        edges: usize,
        methods: usize,
        episodes: usize,
        versions: usize,
    },
}

impl Record {
    fn human(&self) -> String {
        match self {
            Record::Ingest { episode, objects, events } => {
                format!("ingested episode {episode}: {objects} objects, {events} events")
            }
            Record::State { episode, time, present, values } => {
                let mut out = format!("episode {episode} at t={time}\n");
                out.push_str(&format!("present: {}", present.join(", ")));
                for v in values {
                    out.push_str(&format!("\n{}.{} = {}", v.object, v.attribute, v.value));
                }
                out
            }
            Record::Element { name, id, kind, level, visits, uncertainty, consolidation } => {
                format!(
                    "{name} (#{id}): {kind}, level {level}, visits {visits}, \
                     uncertainty {uncertainty}, consolidation {consolidation}"
                )
            }
            Record::Attribute { attribute, value, provenance, .. } => {
                let v = value.as_deref().unwrap_or("(unset)");
                format!("  {attribute} = {v} (from {provenance})")
            }
            Record::Action { rank, action, score, .. } => {
                format!("  action {rank}: {action} ({score})")
            }
            Record::Class { name, id, members, attributes, actions } => {
                let attrs: Vec<String> = attributes
                    .iter()
                    .map(|s| match &s.value {
                        Some(v) => format!("{}={v}", s.attribute),
                        None => s.attribute.clone(),
                    })
                    .collect();
                let none = "(none)".to_string();
                let attrs = if attrs.is_empty() { none.clone() } else { attrs.join(", ") };
                let acts = if actions.is_empty() { none } else { actions.join(", ") };
                format!(
                    "class {name} (#{id}): {members} members\n  attributes: {attrs}\n  actions: {acts}"
                )
            }
            Record::Template { pattern, support, class } => {
                format!("template {pattern}: support {support}, class {class}")
            }
            Record::Versions { alive, killed } => {
                format!("versions: alive [{}], killed [{}]", alive.join(", "), killed.join(", "))
            }
            Record::Plan {
                steps,
                cost,
                states,
                actions,
                expansions,
                backtracks,
                widenings,
                flat_fallback,
            } => {
                let mut route = String::new();
                for (i, s) in states.iter().enumerate() {
                    if i > 0 {
                        route.push_str(&format!(" {} ", actions[i - 1]));
                    }
                    route.push_str(s);
                }
                format!(
                    "plan: {steps} steps, cost {cost}\nroute: {route}\n\
                     search: expansions {expansions:?}, backtracks {backtracks}, \
                     widenings {widenings}, fallback {flat_fallback}"
                )
            }
            Record::Trace { level, state, action } => format!("{level} {state} {action}"),
            Record::Design { start, score } => format!("designed start {start} (score {score})"),
            Record::Focus { size, capacity, w, entries, evicted } => {
                let mut out = format!("focus {size}/{capacity} (w={w})");
                for e in entries {
                    out.push_str(&format!("\n  {} {}", e.element, e.priority));
                }
                if !evicted.is_empty() {
                    out.push_str(&format!("\nevicted: {}", evicted.join(", ")));
                }
                out
            }
            Record::Filter { op, permitted, missing } => {
                if *permitted {
                    format!("filter {op}: permitted")
                } else {
                    format!("filter {op}: rejected, missing [{}]", missing.join(", "))
                }
            }
            Record::Snapshot { op, path, elements, edges, methods, episodes, versions } => {
                let verb = if op == "save" { "saved" } else { "loaded" };
                format!(
                    "{verb} snapshot {path}: {elements} elements, {edges} edges, \
                     {methods} methods, {episodes} episodes, {versions} versions"
                )
            }
        }
    }
}

/// Buffers records and prints them all at once when the command succeeds.
pub struct Emitter {
    mode: OutputMode,
    lines: Vec<String>,
}

impl Emitter {
    pub fn new(mode: OutputMode) -> Self {
        Emitter { mode, lines: Vec::new() }
    }

    pub fn emit(&mut self, record: &Record) {
        let line = match self.mode {
            OutputMode::Json => {
                serde_json::to_string(record).expect("records serialize infallibly")
            }
            OutputMode::Human => record.human(),
        };
        self.lines.push(line);
    }

    pub fn finish(self) {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        print!("{out}");
    }
}
