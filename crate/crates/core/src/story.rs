//! Episode DSL: parsing, evolving story states, pure replay, and state
//! diffing.
//!
//! An episode is a cast of declared objects plus a time-ordered list of
//! events. Presence is controlled by the built-in `enter`/`exit` verbs:
//! declared objects are on stage from the start unless they enter later.
//! Replay is pure over a graph snapshot; strengthening happens separately
//! (see [`crate::consolidation::repetition_boost`]).

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::kernel::{EdgeKind, ElementId, ElementKind, KernelError, MemoryGraph};
use crate::method::MethodRegistry;

/// Distinguished value meaning "no value / removed".
pub const ABSENT: &str = "absent";
/// Built-in presence verbs.
pub const ENTER: &str = "enter";
pub const EXIT: &str = "exit";
/// Role that enter/exit act on.
pub const ACTOR_ROLE: &str = "actor";

/// A snapshot of the story world at one time index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StoryState {
    pub present: BTreeSet<ElementId>,
    /// (object, attribute) -> value element; keyed only by present objects.
    pub values: BTreeMap<(ElementId, ElementId), ElementId>,
    pub time: usize,
}

impl StoryState {
    pub fn value(&self, object: ElementId, attribute: ElementId) -> Option<ElementId> {
        self.values.get(&(object, attribute)).copied()
    }

    pub fn is_present(&self, object: ElementId) -> bool {
        self.present.contains(&object)
    }
}

/// One attribute assignment carried by an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Effect {
    pub object: ElementId,
    pub attribute: ElementId,
    pub value: ElementId,
}

/// One event: an action with named role fillers and its effects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub time: u64,
    pub action: ElementId,
    pub verb: String,
    pub participants: BTreeMap<String, ElementId>,
    pub effects: Vec<Effect>,
}

/// An object declaration: the instance and the class it was declared under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Declaration {
    pub object: ElementId,
    pub class: ElementId,
}

/// A parsed episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub id: String,
    pub declared: Vec<Declaration>,
    pub initial: StoryState,
    pub events: Vec<EventRecord>,
}

/// The (object, attribute, old, new) record of one applied effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProvenanceEntry {
    pub object: ElementId,
    pub attribute: ElementId,
    pub old: Option<ElementId>,
    pub new: ElementId,
}

/// Differences between two states: changed values plus presence changes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StateDiff {
    pub changed: Vec<(ElementId, ElementId, Option<ElementId>, Option<ElementId>)>,
    pub joined: BTreeSet<ElementId>,
    pub left: BTreeSet<ElementId>,
}

impl StateDiff {
    pub fn is_empty(&self) -> bool {
        self.changed.is_empty() && self.joined.is_empty() && self.left.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoryError {
    #[error("SyntaxError: line {line}, col {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("UnknownReference: line {line}: `{name}` is not declared in this episode")]
    UnknownReference { line: usize, name: String },
    #[error("DuplicateObject: line {line}: `{name}` is already declared in this episode")]
    DuplicateObject { line: usize, name: String },
    #[error("MissingBinding: action `{name}` has no method binding")]
    MissingBinding { name: String },
    #[error("EffectTargetAbsent: event {time}: effect targets object {object} which is not present")]
    EffectTargetAbsent { time: u64, object: ElementId },
    #[error("MissingRole: event {time}: `{verb}` requires role `{role}`")]
    MissingRole { time: u64, verb: String, role: String },
    #[error("TimeOutOfRange: requested state {requested}, episode has states 0..={max}")]
    TimeOutOfRange { requested: usize, max: usize },
    #[error("UnknownEpisode: `{0}` has not been ingested")]
    UnknownEpisode(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

// --- line tokenizer ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TokKind {
    Ident(String),
    Int(i64),
    Float(f64),
    Quoted(String),
    LParen,
    RParen,
    Colon,
    Comma,
    Dot,
    Assign,
    FatArrow,
    ThinArrow,
}

impl TokKind {
    pub(crate) fn describe(&self) -> String {
        match self {
            TokKind::Ident(s) => format!("`{s}`"),
            TokKind::Int(n) => format!("`{n}`"),
            TokKind::Float(x) => format!("`{x}`"),
            TokKind::Quoted(s) => format!("\"{s}\""),
            TokKind::LParen => "`(`".into(),
            TokKind::RParen => "`)`".into(),
            TokKind::Colon => "`:`".into(),
            TokKind::Comma => "`,`".into(),
            TokKind::Dot => "`.`".into(),
            TokKind::Assign => "`=`".into(),
            TokKind::FatArrow => "`=>`".into(),
            TokKind::ThinArrow => "`->`".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tok {
    pub col: usize,
    pub kind: TokKind,
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Tokenize one line. `#` starts a comment (outside quotes).
pub(crate) fn lex_line(line_no: usize, line: &str) -> Result<Vec<Tok>, StoryError> {
    let mut toks = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0usize;
    let syntax = |col: usize, msg: String| StoryError::Syntax { line: line_no, col, msg };
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            ' ' | '\t' | '\r' => i += 1,
            '#' => break,
            '(' => {
                toks.push(Tok { col, kind: TokKind::LParen });
                i += 1;
            }
            ')' => {
                toks.push(Tok { col, kind: TokKind::RParen });
                i += 1;
            }
            ':' => {
                toks.push(Tok { col, kind: TokKind::Colon });
                i += 1;
            }
            ',' => {
                toks.push(Tok { col, kind: TokKind::Comma });
                i += 1;
            }
            '.' => {
                toks.push(Tok { col, kind: TokKind::Dot });
                i += 1;
            }
            '=' => {
                if chars.get(i + 1) == Some(&'>') {
                    toks.push(Tok { col, kind: TokKind::FatArrow });
                    i += 2;
                } else {
                    toks.push(Tok { col, kind: TokKind::Assign });
                    i += 1;
                }
            }
            '-' => {
                if chars.get(i + 1) == Some(&'>') {
                    toks.push(Tok { col, kind: TokKind::ThinArrow });
                    i += 2;
                } else if chars.get(i + 1).is_some_and(|c| c.is_ascii_digit()) {
                    let (kind, next) = lex_number(&chars, i, line_no)?;
                    toks.push(Tok { col, kind });
                    i = next;
                } else {
                    return Err(syntax(col, "stray `-`".into()));
                }
            }
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        Some('"') => break,
                        Some(&c) => {
                            s.push(c);
                            j += 1;
                        }
                        None => return Err(syntax(col, "unterminated string".into())),
                    }
                }
                toks.push(Tok { col, kind: TokKind::Quoted(s) });
                i = j + 1;
            }
            c if c.is_ascii_digit() => {
                let (kind, next) = lex_number(&chars, i, line_no)?;
                toks.push(Tok { col, kind });
                i = next;
            }
            c if is_ident_start(c) => {
                let mut s = String::new();
                let mut j = i;
                while j < chars.len() && is_ident_continue(chars[j]) {
                    s.push(chars[j]);
                    j += 1;
                }
                toks.push(Tok { col, kind: TokKind::Ident(s) });
                i = j;
            }
            other => return Err(syntax(col, format!("unexpected character `{other}`"))),
        }
    }
    Ok(toks)
}

fn lex_number(chars: &[char], start: usize, line_no: usize) -> Result<(TokKind, usize), StoryError> {
    let mut j = start;
    if chars[j] == '-' {
        j += 1;
    }
    while j < chars.len() && chars[j].is_ascii_digit() {
        j += 1;
    }
    let mut is_float = false;
    if chars.get(j) == Some(&'.') && chars.get(j + 1).is_some_and(|c| c.is_ascii_digit()) {
        is_float = true;
        j += 1;
        while j < chars.len() && chars[j].is_ascii_digit() {
            j += 1;
        }
    }
    let text: String = chars[start..j].iter().collect();
    let kind = if is_float {
        TokKind::Float(text.parse().map_err(|_| StoryError::Syntax {
            line: line_no,
            col: start + 1,
            msg: format!("bad number `{text}`"),
        })?)
    } else {
        TokKind::Int(text.parse().map_err(|_| StoryError::Syntax {
            line: line_no,
            col: start + 1,
            msg: format!("bad number `{text}`"),
        })?)
    };
    Ok((kind, j))
}

/// Cursor over one line's tokens with location-aware errors.
pub(crate) struct Cursor<'a> {
    toks: &'a [Tok],
    pos: usize,
    line: usize,
    line_len: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(line: usize, toks: &'a [Tok], line_len: usize) -> Self {
        Cursor { toks, pos: 0, line, line_len }
    }

    pub(crate) fn peek(&self) -> Option<&'a TokKind> {
        self.toks.get(self.pos).map(|t| &t.kind)
    }

    pub(crate) fn next(&mut self) -> Option<&'a Tok> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    pub(crate) fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.line_len + 1, |t| t.col)
    }

    pub(crate) fn err(&self, msg: impl Into<String>) -> StoryError {
        StoryError::Syntax { line: self.line, col: self.col(), msg: msg.into() }
    }

    pub(crate) fn expect_ident(&mut self, what: &str) -> Result<String, StoryError> {
        match self.next() {
            Some(Tok { kind: TokKind::Ident(s), .. }) => Ok(s.clone()),
            Some(t) => Err(StoryError::Syntax {
                line: self.line,
                col: t.col,
                msg: format!("expected {what}, found {}", t.kind.describe()),
            }),
            None => Err(self.err(format!("expected {what}, found end of line"))),
        }
    }

    pub(crate) fn expect(&mut self, kind: &TokKind, what: &str) -> Result<(), StoryError> {
        match self.next() {
            Some(t) if t.kind == *kind => Ok(()),
            Some(t) => Err(StoryError::Syntax {
                line: self.line,
                col: t.col,
                msg: format!("expected {what}, found {}", t.kind.describe()),
            }),
            None => Err(self.err(format!("expected {what}, found end of line"))),
        }
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub(crate) fn expect_end(&self) -> Result<(), StoryError> {
        if self.at_end() {
            Ok(())
        } else {
            let t = &self.toks[self.pos];
            Err(StoryError::Syntax {
                line: self.line,
                col: t.col,
                msg: format!("unexpected trailing {}", t.kind.describe()),
            })
        }
    }
}

// --- element resolution -----------------------------------------------------

/// Find or create the level-1 class element (same kind as its members).
pub(crate) fn resolve_class(graph: &mut MemoryGraph, name: &str, kind: ElementKind) -> ElementId {
    let found = graph
        .elements()
        .find(|e| e.kind == kind && e.level == 1 && e.name.as_deref() == Some(name))
        .map(|e| e.id);
    found.unwrap_or_else(|| graph.add_element(kind, Some(name), 1))
}

/// Find or create a level-0 attribute element.
pub(crate) fn resolve_attribute(graph: &mut MemoryGraph, name: &str) -> ElementId {
    let found = graph
        .elements()
        .find(|e| e.kind == ElementKind::Attribute && e.name.as_deref() == Some(name))
        .map(|e| e.id);
    found.unwrap_or_else(|| graph.add_element(ElementKind::Attribute, Some(name), 0))
}

/// Find or create the level-1 action element for a verb.
pub(crate) fn resolve_action(graph: &mut MemoryGraph, name: &str) -> ElementId {
    resolve_class(graph, name, ElementKind::Action)
}

// --- parser -----------------------------------------------------------------

struct EpisodeBuilder {
    id: String,
    header_line: usize,
    names: BTreeMap<String, ElementId>,
    decl_lines: BTreeMap<ElementId, usize>,
    declared: Vec<Declaration>,
    initial_values: Vec<(ElementId, ElementId, ElementId)>,
    events: Vec<EventRecord>,
    enter_actors: BTreeSet<ElementId>,
    last_time: u64,
}

impl EpisodeBuilder {
    fn new(id: String, header_line: usize) -> Self {
        EpisodeBuilder {
            id,
            header_line,
            names: BTreeMap::new(),
            decl_lines: BTreeMap::new(),
            declared: Vec::new(),
            initial_values: Vec::new(),
            events: Vec::new(),
            enter_actors: BTreeSet::new(),
            last_time: 0,
        }
    }

    fn finish(self) -> Result<Episode, StoryError> {
        let mut initial = StoryState::default();
        for d in &self.declared {
            if !self.enter_actors.contains(&d.object) {
                initial.present.insert(d.object);
            }
        }
        for &(obj, attr, val) in &self.initial_values {
            if !initial.present.contains(&obj) {
                // initial values on a later-entering object have no state to
                // live in before the entry event
                return Err(StoryError::Syntax {
                    line: *self.decl_lines.get(&obj).unwrap_or(&self.header_line),
                    col: 1,
                    msg: "initial attributes are not allowed on an object that enters later"
                        .into(),
                });
            }
            initial.values.insert((obj, attr), val);
        }
        Ok(Episode {
            id: self.id,
            declared: self.declared,
            initial,
            events: self.events,
        })
    }
}

/// Parse DSL text, registering declared classes, objects, attributes, values,
/// verbs, and admissibility edges into the graph, plus method definitions and
/// default verb bindings into the registry. A file may define several
/// episodes; each `episode` header starts a new one.
pub fn parse_story(
    graph: &mut MemoryGraph,
    registry: &mut MethodRegistry,
    text: &str,
) -> Result<Vec<Episode>, StoryError> {
    let mut episodes = Vec::new();
    let mut cur: Option<EpisodeBuilder> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let toks = lex_line(line_no, raw)?;
        if toks.is_empty() {
            continue;
        }
        let mut cursor = Cursor::new(line_no, &toks, raw.chars().count());
        let head = cursor.expect_ident("a directive (episode/obj/act/method)")?;
        match head.as_str() {
            "episode" => {
                let id = cursor.expect_ident("an episode id")?;
                cursor.expect_end()?;
                if let Some(b) = cur.take() {
                    episodes.push(b.finish()?);
                }
                cur = Some(EpisodeBuilder::new(id, line_no));
            }
            "obj" => {
                let b = cur
                    .as_mut()
                    .ok_or_else(|| cursor.err("`obj` before any `episode` header"))?;
                parse_obj(graph, b, &mut cursor, line_no)?;
            }
            "act" => {
                let b = cur
                    .as_mut()
                    .ok_or_else(|| cursor.err("`act` before any `episode` header"))?;
                parse_act(graph, registry, b, &mut cursor, line_no)?;
            }
            "method" => {
                crate::method::parse_method_line(graph, registry, &mut cursor, line_no)?;
            }
            other => {
                return Err(StoryError::Syntax {
                    line: line_no,
                    col: toks[0].col,
                    msg: format!("unknown directive `{other}`"),
                })
            }
        }
    }
    if let Some(b) = cur.take() {
        episodes.push(b.finish()?);
    }
    Ok(episodes)
}

fn parse_obj(
    graph: &mut MemoryGraph,
    b: &mut EpisodeBuilder,
    cursor: &mut Cursor,
    line_no: usize,
) -> Result<(), StoryError> {
    let name = cursor.expect_ident("an object name")?;
    if b.names.contains_key(&name) {
        return Err(StoryError::DuplicateObject { line: line_no, name });
    }
    cursor.expect(&TokKind::Colon, "`:`")?;
    let class_name = cursor.expect_ident("a class name")?;
    let class = resolve_class(graph, &class_name, ElementKind::Object);
    let object = graph
        .find_by_name(&name)
        .into_iter()
        .find(|&id| {
            let e = graph.element(id).expect("listed id exists");
            e.kind == ElementKind::Object && e.level == 0
        })
        .unwrap_or_else(|| graph.add_element(ElementKind::Object, Some(&name), 0));
    let already_linked = graph
        .edges_from(object, EdgeKind::InstanceOf)
        .iter()
        .any(|e| e.dst == class);
    if !already_linked {
        graph.add_edge(object, class, EdgeKind::InstanceOf, 1.0)?;
    }
    b.names.insert(name, object);
    b.decl_lines.insert(object, line_no);
    b.declared.push(Declaration { object, class });
    while !cursor.at_end() {
        let attr_name = cursor.expect_ident("an attribute name")?;
        cursor.expect(&TokKind::Assign, "`=`")?;
        let attr = resolve_attribute(graph, &attr_name);
        let value = parse_value(graph, b, cursor, line_no)?;
        b.initial_values.push((object, attr, value));
    }
    Ok(())
}

fn parse_value(
    graph: &mut MemoryGraph,
    b: &EpisodeBuilder,
    cursor: &mut Cursor,
    line_no: usize,
) -> Result<ElementId, StoryError> {
    match cursor.next() {
        Some(Tok { kind: TokKind::Ident(s), .. }) => {
            if let Some(&obj) = b.names.get(s) {
                Ok(obj)
            } else {
                Ok(graph.intern_value(s))
            }
        }
        Some(Tok { kind: TokKind::Int(n), .. }) => Ok(graph.intern_value(&n.to_string())),
        Some(t) => Err(StoryError::Syntax {
            line: line_no,
            col: t.col,
            msg: format!("expected a value, found {}", t.kind.describe()),
        }),
        None => Err(cursor.err("expected a value, found end of line")),
    }
}

fn parse_act(
    graph: &mut MemoryGraph,
    registry: &mut MethodRegistry,
    b: &mut EpisodeBuilder,
    cursor: &mut Cursor,
    line_no: usize,
) -> Result<(), StoryError> {
    let time = match cursor.next() {
        Some(Tok { kind: TokKind::Int(n), col }) => {
            if *n < 1 {
                return Err(StoryError::Syntax {
                    line: line_no,
                    col: *col,
                    msg: "event times start at 1".into(),
                });
            }
            *n as u64
        }
        Some(t) => {
            return Err(StoryError::Syntax {
                line: line_no,
                col: t.col,
                msg: format!("expected an event time, found {}", t.kind.describe()),
            })
        }
        None => return Err(cursor.err("expected an event time, found end of line")),
    };
    if time <= b.last_time {
        return Err(StoryError::Syntax {
            line: line_no,
            col: 1,
            msg: format!(
                "event times must strictly increase (got {time} after {})",
                b.last_time
            ),
        });
    }
    b.last_time = time;
    let verb = cursor.expect_ident("a verb")?;
    let action = resolve_action(graph, &verb);
    let mut participants: BTreeMap<String, ElementId> = BTreeMap::new();
    let mut effects = Vec::new();
    while !cursor.at_end() {
        if cursor.peek() == Some(&TokKind::FatArrow) {
            cursor.next();
            parse_effects(graph, b, cursor, line_no, &mut effects)?;
            break;
        }
        let role = cursor.expect_ident("a role name")?;
        cursor.expect(&TokKind::Assign, "`=`")?;
        let filler_name = cursor.expect_ident("an object name")?;
        let filler = *b
            .names
            .get(&filler_name)
            .ok_or(StoryError::UnknownReference { line: line_no, name: filler_name })?;
        if participants.insert(role.clone(), filler).is_some() {
            return Err(StoryError::Syntax {
                line: line_no,
                col: 1,
                msg: format!("role `{role}` given twice"),
            });
        }
    }
    if (verb == ENTER || verb == EXIT) && !participants.contains_key(ACTOR_ROLE) {
        return Err(StoryError::MissingRole { time, verb, role: ACTOR_ROLE.into() });
    }
    if verb == ENTER {
        b.enter_actors.insert(participants[ACTOR_ROLE]);
    }
    // admissibility: each participant's declared classes admit this action
    for &p in participants.values() {
        let classes: Vec<ElementId> = graph
            .edges_from(p, EdgeKind::InstanceOf)
            .iter()
            .map(|e| e.dst)
            .collect();
        for c in classes {
            let exists = graph
                .edges_from(c, EdgeKind::AdmissibleAction)
                .iter()
                .any(|e| e.dst == action);
            if !exists {
                graph.add_edge(c, action, EdgeKind::AdmissibleAction, 1.0)?;
            }
        }
    }
    registry.ensure_default_binding(action, &verb);
    b.events.push(EventRecord { time, action, verb, participants, effects });
    Ok(())
}

fn parse_effects(
    graph: &mut MemoryGraph,
    b: &EpisodeBuilder,
    cursor: &mut Cursor,
    line_no: usize,
    effects: &mut Vec<Effect>,
) -> Result<(), StoryError> {
    if cursor.at_end() {
        return Err(cursor.err("expected at least one effect after `=>`"));
    }
    while !cursor.at_end() {
        let obj_name = cursor.expect_ident("an object name")?;
        let object = *b
            .names
            .get(&obj_name)
            .ok_or(StoryError::UnknownReference { line: line_no, name: obj_name })?;
        cursor.expect(&TokKind::Dot, "`.`")?;
        let attr_name = cursor.expect_ident("an attribute name")?;
        let attribute = resolve_attribute(graph, &attr_name);
        cursor.expect(&TokKind::Assign, "`=`")?;
        let value = parse_value(graph, b, cursor, line_no)?;
        effects.push(Effect { object, attribute, value });
    }
    Ok(())
}

// --- replay -----------------------------------------------------------------

/// Apply one event to a state, purely. Presence changes first for `enter`
/// (so effects may target the newcomer), last for `exit` (which also clears
/// the leaver's values).
pub fn transition(
    state: &StoryState,
    event: &EventRecord,
) -> Result<(StoryState, Vec<ProvenanceEntry>), StoryError> {
    let mut next = state.clone();
    next.time = state.time + 1;
    if event.verb == ENTER {
        let actor = *event.participants.get(ACTOR_ROLE).ok_or(StoryError::MissingRole {
            time: event.time,
            verb: event.verb.clone(),
            role: ACTOR_ROLE.into(),
        })?;
        next.present.insert(actor);
    }
    let mut provenance = Vec::with_capacity(event.effects.len());
    for eff in &event.effects {
        if !next.present.contains(&eff.object) {
            return Err(StoryError::EffectTargetAbsent { time: event.time, object: eff.object });
        }
        let old = next.values.insert((eff.object, eff.attribute), eff.value);
        provenance.push(ProvenanceEntry {
            object: eff.object,
            attribute: eff.attribute,
            old,
            new: eff.value,
        });
    }
    if event.verb == EXIT {
        let actor = *event.participants.get(ACTOR_ROLE).ok_or(StoryError::MissingRole {
            time: event.time,
            verb: event.verb.clone(),
            role: ACTOR_ROLE.into(),
        })?;
        next.present.remove(&actor);
        next.values.retain(|&(obj, _), _| obj != actor);
    }
    Ok((next, provenance))
}

/// Replay an episode into the full state sequence (length = events + 1).
/// Pure over the graph snapshot; every referenced action must have a method
/// binding.
pub fn replay(
    graph: &MemoryGraph,
    registry: &MethodRegistry,
    episode: &Episode,
) -> Result<Vec<StoryState>, StoryError> {
    for ev in &episode.events {
        if registry.binding_for(ev.action).is_none() {
            let name = graph
                .element(ev.action)
                .and_then(|e| e.name.clone())
                .unwrap_or_else(|| ev.action.to_string());
            return Err(StoryError::MissingBinding { name });
        }
    }
    let mut states = Vec::with_capacity(episode.events.len() + 1);
    let mut cur = episode.initial.clone();
    cur.time = 0;
    states.push(cur.clone());
    for ev in &episode.events {
        let (next, _) = transition(&cur, ev)?;
        states.push(next.clone());
        cur = next;
    }
    Ok(states)
}

/// The state after the first `t` events.
pub fn state_at(
    graph: &MemoryGraph,
    registry: &MethodRegistry,
    episode: &Episode,
    t: usize,
) -> Result<StoryState, StoryError> {
    let states = replay(graph, registry, episode)?;
    let max = states.len() - 1;
    states
        .into_iter()
        .nth(t)
        .ok_or(StoryError::TimeOutOfRange { requested: t, max })
}

/// Value changes and presence changes from `a` to `b`.
pub fn diff_states(a: &StoryState, b: &StoryState) -> StateDiff {
    let mut keys: BTreeSet<(ElementId, ElementId)> = a.values.keys().copied().collect();
    keys.extend(b.values.keys().copied());
    let mut changed = Vec::new();
    for (obj, attr) in keys {
        let va = a.value(obj, attr);
        let vb = b.value(obj, attr);
        if va != vb {
            changed.push((obj, attr, va, vb));
        }
    }
    StateDiff {
        changed,
        joined: b.present.difference(&a.present).copied().collect(),
        left: a.present.difference(&b.present).copied().collect(),
    }
}

// --- serialization ----------------------------------------------------------

fn element_name(graph: &MemoryGraph, id: ElementId) -> String {
    graph
        .element(id)
        .and_then(|e| e.name.clone())
        .unwrap_or_else(|| format!("_{id}"))
}

/// Regenerate DSL text for an episode. Reparsing the output yields a
/// structurally identical episode (same names, times, roles, effects).
pub fn serialize_episode(graph: &MemoryGraph, episode: &Episode) -> String {
    let mut out = String::new();
    out.push_str(&format!("episode {}\n", episode.id));
    for d in &episode.declared {
        let mut line = format!(
            "obj {} : {}",
            element_name(graph, d.object),
            element_name(graph, d.class)
        );
        for (&(obj, attr), &val) in &episode.initial.values {
            if obj == d.object {
                line.push_str(&format!(
                    " {}={}",
                    element_name(graph, attr),
                    element_name(graph, val)
                ));
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    for ev in &episode.events {
        let mut line = format!("act {} {}", ev.time, ev.verb);
        for (role, filler) in &ev.participants {
            line.push_str(&format!(" {role}={}", element_name(graph, *filler)));
        }
        if !ev.effects.is_empty() {
            line.push_str(" =>");
            for eff in &ev.effects {
                line.push_str(&format!(
                    " {}.{}={}",
                    element_name(graph, eff.object),
                    element_name(graph, eff.attribute),
                    element_name(graph, eff.value)
                ));
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

#[cfg(test)]
pub(crate) const DAVID_STORY: &str = include_str!("../../../fixtures/david.story");
