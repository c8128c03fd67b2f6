//! Executable methods: pure expression trees over a closed primitive set,
//! bound to action elements, filtered by admissibility, and able to produce
//! new elements.
//!
//! Evaluation is read-only over a graph snapshot and budgeted (default one
//! million steps), so every call terminates with a value or `NonTermination`.
//! Produced elements are returned as a creation list; only [`apply_action`]
//! inserts them into the graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::kernel::{EdgeKind, ElementId, ElementKind, KernelError, MemoryGraph};
use crate::story::{transition, Cursor, EventRecord, ProvenanceEntry, StoryError, StoryState, Tok, TokKind};

/// Default evaluation step budget.
pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;

/// The closed primitive operation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Primitive {
    And,
    Or,
    Not,
    ForAll,
    Exists,
    Count,
    Eq,
    Neq,
    Lt,
    Leq,
    Gt,
    Geq,
    If,
    While,
    For,
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
    Norm,
    Log,
    Slice,
    Union,
    Sort,
}

/// Declared argument count per primitive; see docs/primitives.md.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exact(usize),
    AtLeast(usize),
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Primitive::And => "and",
            Primitive::Or => "or",
            Primitive::Not => "not",
            Primitive::ForAll => "forall",
            Primitive::Exists => "exists",
            Primitive::Count => "count",
            Primitive::Eq => "eq",
            Primitive::Neq => "neq",
            Primitive::Lt => "lt",
            Primitive::Leq => "leq",
            Primitive::Gt => "gt",
            Primitive::Geq => "geq",
            Primitive::If => "if",
            Primitive::While => "while",
            Primitive::For => "for",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Min => "min",
            Primitive::Max => "max",
            Primitive::Norm => "norm",
            Primitive::Log => "log",
            Primitive::Slice => "slice",
            Primitive::Union => "union",
            Primitive::Sort => "sort",
        }
    }

    pub fn from_name(name: &str) -> Option<Primitive> {
        Primitive::ALL.iter().copied().find(|p| p.name() == name)
    }

    pub fn arity(self) -> Arity {
        match self {
            Primitive::And | Primitive::Or => Arity::AtLeast(1),
            Primitive::Not
            | Primitive::ForAll
            | Primitive::Exists
            | Primitive::Count
            | Primitive::Norm
            | Primitive::Log
            | Primitive::Sort => Arity::Exact(1),
            Primitive::Eq
            | Primitive::Neq
            | Primitive::Lt
            | Primitive::Leq
            | Primitive::Gt
            | Primitive::Geq
            | Primitive::While
            | Primitive::For
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::Div
            | Primitive::Min
            | Primitive::Max
            | Primitive::Union => Arity::Exact(2),
            Primitive::If | Primitive::Slice => Arity::Exact(3),
        }
    }

    pub const ALL: [Primitive; 26] = [
        Primitive::And,
        Primitive::Or,
        Primitive::Not,
        Primitive::ForAll,
        Primitive::Exists,
        Primitive::Count,
        Primitive::Eq,
        Primitive::Neq,
        Primitive::Lt,
        Primitive::Leq,
        Primitive::Gt,
        Primitive::Geq,
        Primitive::If,
        Primitive::While,
        Primitive::For,
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Div,
        Primitive::Min,
        Primitive::Max,
        Primitive::Norm,
        Primitive::Log,
        Primitive::Slice,
        Primitive::Union,
        Primitive::Sort,
    ];
}

/// Runtime values. Numeric equality is bitwise, so evaluation results can be
/// compared exactly.
#[derive(Debug, Clone)]
pub enum Val {
    Num(f64),
    Bool(bool),
    Str(String),
    Elem(ElementId),
    List(Vec<Val>),
    Unit,
}

impl PartialEq for Val {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Val::Num(a), Val::Num(b)) => a.to_bits() == b.to_bits(),
            (Val::Bool(a), Val::Bool(b)) => a == b,
            (Val::Str(a), Val::Str(b)) => a == b,
            (Val::Elem(a), Val::Elem(b)) => a == b,
            (Val::List(a), Val::List(b)) => a == b,
            (Val::Unit, Val::Unit) => true,
            _ => false,
        }
    }
}

impl Eq for Val {}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Num(x) => write!(f, "{x}"),
            Val::Bool(b) => write!(f, "{b}"),
            Val::Str(s) => write!(f, "\"{s}\""),
            Val::Elem(id) => write!(f, "#{id}"),
            Val::List(items) => {
                write!(f, "[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
            Val::Unit => write!(f, "()"),
        }
    }
}

/// Method body expressions: literals, parameters, element references,
/// primitive applications, calls, and memory-access forms.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Bool(bool),
    Str(String),
    Elem(ElementId),
    Param(String),
    ListOf(Vec<Expr>),
    Prim(Primitive, Vec<Expr>),
    Call(String, Vec<Expr>),
    /// Transitive contents of an element via inverse part-of edges.
    Members(Box<Expr>),
    /// Transitive closure over the given edge kinds.
    ClosureOf(Box<Expr>, Vec<EdgeKind>),
    /// Shadow-aware attribute value lookup; Unit when unset.
    AttrOf(Box<Expr>, Box<Expr>),
    /// Queue a new element (kind, name); evaluates to the name.
    Produce(ElementKind, Box<Expr>),
}

/// One parameter: a name and an optional class constraint (None = any).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub constraint: Option<ElementId>,
}

/// A pure method: named, parameterized, with an expression body.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodDef {
    pub name: String,
    pub params: Vec<ParamSpec>,
    pub body: Expr,
    /// Element kind this method creates, inferred from `produce` forms.
    pub produces: Option<ElementKind>,
}

/// An element queued for creation during evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProducedElement {
    pub kind: ElementKind,
    pub name: String,
    pub level: u32,
}

/// Result of one evaluation: the value plus the creation list.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub value: Val,
    pub produced: Vec<ProducedElement>,
}

/// Result of applying an action: the new state, what changed, and any
/// elements the bound method produced (already inserted).
#[derive(Debug, Clone, PartialEq)]
pub struct ApplyOutcome {
    pub state: StoryState,
    pub provenance: Vec<ProvenanceEntry>,
    pub produced: Vec<ElementId>,
}

/// Admissibility ranking direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Normal,
    Creative,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MethodError {
    #[error("ArityMismatch: `{what}` expects {expected}, got {got}")]
    ArityMismatch { what: String, expected: String, got: usize },
    #[error("TypeInadmissible: {0}")]
    TypeInadmissible(String),
    #[error("DivisionByZero")]
    DivisionByZero,
    #[error("NonTermination: step budget of {budget} exhausted")]
    NonTermination { budget: u64 },
    #[error("UnknownMethod: `{0}` is not defined")]
    UnknownMethod(String),
    #[error("UnknownParam: `{param}` is not a declared parameter of `{method}`")]
    UnknownParam { method: String, param: String },
    #[error("CyclicCalls: method call graph has an unguarded cycle through `{0}`")]
    CyclicCalls(String),
    #[error("DuplicateMethod: `{0}` is already defined")]
    DuplicateMethod(String),
    #[error("NotAnAction: element {0} is not an Action")]
    NotAnAction(ElementId),
    #[error("NotAdmissible: action {action} is not admissible for participant {participant}")]
    NotAdmissible { action: ElementId, participant: ElementId },
    #[error("NoBinding: action {0} has no bound method")]
    NoBinding(ElementId),
    #[error("MissingRoleBinding: method `{method}` needs role `{role}` which the event does not bind")]
    MissingRoleBinding { method: String, role: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Story(Box<StoryError>),
}

impl From<StoryError> for MethodError {
    fn from(e: StoryError) -> Self {
        MethodError::Story(Box::new(e))
    }
}

/// Methods by name plus action-element bindings.
#[derive(Debug, Clone, Default)]
pub struct MethodRegistry {
    methods: BTreeMap<String, MethodDef>,
    bindings: BTreeMap<ElementId, String>,
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validate and register a method: declared params only, primitive
    /// arities respected, and no unguarded call cycles.
    pub fn define(&mut self, def: MethodDef) -> Result<(), MethodError> {
        if self.methods.contains_key(&def.name) {
            return Err(MethodError::DuplicateMethod(def.name));
        }
        let declared: BTreeSet<&str> = def.params.iter().map(|p| p.name.as_str()).collect();
        validate_expr(&def.body, &def.name, &declared)?;
        self.methods.insert(def.name.clone(), def);
        if let Err(e) = self.check_cycles() {
            // reject the definition that closed the cycle
            if let MethodError::CyclicCalls(_) = e {
                let name = self
                    .methods
                    .values()
                    .last()
                    .map(|d| d.name.clone())
                    .unwrap_or_default();
                self.methods.remove(&name);
            }
            return Err(e);
        }
        Ok(())
    }

    pub fn method(&self, name: &str) -> Option<&MethodDef> {
        self.methods.get(name)
    }

    pub fn methods(&self) -> impl Iterator<Item = &MethodDef> {
        self.methods.values()
    }

    pub fn bindings(&self) -> impl Iterator<Item = (ElementId, &str)> {
        self.bindings.iter().map(|(&a, n)| (a, n.as_str()))
    }

    /// Bind an action element to a method by name.
    pub fn bind(
        &mut self,
        graph: &MemoryGraph,
        action: ElementId,
        method: &str,
    ) -> Result<(), MethodError> {
        let el = graph.require_element(action)?;
        if el.kind != ElementKind::Action {
            return Err(MethodError::NotAnAction(action));
        }
        if !self.methods.contains_key(method) {
            return Err(MethodError::UnknownMethod(method.to_string()));
        }
        self.bindings.insert(action, method.to_string());
        Ok(())
    }

    /// Install a trivially-true guard method for a verb if it has no binding.
    pub fn ensure_default_binding(&mut self, action: ElementId, verb: &str) {
        if self.bindings.contains_key(&action) {
            return;
        }
        let name = format!("do_{verb}");
        if !self.methods.contains_key(&name) {
            let def = MethodDef {
                name: name.clone(),
                params: Vec::new(),
                body: Expr::Bool(true),
                produces: None,
            };
            self.methods.insert(name.clone(), def);
        }
        self.bindings.insert(action, name);
    }

    pub fn binding_for(&self, action: ElementId) -> Option<&MethodDef> {
        self.bindings.get(&action).and_then(|n| self.methods.get(n))
    }

    /// Raw (action id, method name) binding pairs, for persistence.
    pub fn binding_names(&self) -> &BTreeMap<ElementId, String> {
        &self.bindings
    }

    pub fn restore_binding(&mut self, action: ElementId, method: String) {
        self.bindings.insert(action, method);
    }

    fn check_cycles(&self) -> Result<(), MethodError> {
        // unguarded call edges only: calls under While/For may recurse, the
        // step budget bounds them at runtime
        let mut edges: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for def in self.methods.values() {
            let mut callees = BTreeSet::new();
            collect_unguarded_calls(&def.body, &mut callees);
            edges.insert(def.name.as_str(), callees);
        }
        #[derive(Clone, Copy, PartialEq)]
        enum Color {
            White,
            Gray,
            Black,
        }
        let mut color: BTreeMap<&str, Color> =
            edges.keys().map(|&k| (k, Color::White)).collect();
        fn dfs<'a>(
            node: &'a str,
            edges: &BTreeMap<&'a str, BTreeSet<&'a str>>,
            color: &mut BTreeMap<&'a str, Color>,
        ) -> Result<(), MethodError> {
            color.insert(node, Color::Gray);
            if let Some(next) = edges.get(node) {
                for &n in next {
                    match color.get(n) {
                        Some(Color::Gray) => return Err(MethodError::CyclicCalls(n.to_string())),
                        Some(Color::White) => dfs(n, edges, color)?,
                        _ => {}
                    }
                }
            }
            color.insert(node, Color::Black);
            Ok(())
        }
        let names: Vec<&str> = edges.keys().copied().collect();
        for name in names {
            if color[name] == Color::White {
                dfs(name, &edges, &mut color)?;
            }
        }
        Ok(())
    }
}

fn collect_unguarded_calls<'a>(expr: &'a Expr, out: &mut BTreeSet<&'a str>) {
    match expr {
        Expr::Call(name, args) => {
            out.insert(name.as_str());
            for a in args {
                collect_unguarded_calls(a, out);
            }
        }
        Expr::Prim(Primitive::While, _) | Expr::Prim(Primitive::For, _) => {}
        Expr::Prim(_, args) | Expr::ListOf(args) => {
            for a in args {
                collect_unguarded_calls(a, out);
            }
        }
        Expr::Members(e) | Expr::Produce(_, e) => collect_unguarded_calls(e, out),
        Expr::ClosureOf(e, _) => collect_unguarded_calls(e, out),
        Expr::AttrOf(a, b) => {
            collect_unguarded_calls(a, out);
            collect_unguarded_calls(b, out);
        }
        _ => {}
    }
}

fn validate_expr(
    expr: &Expr,
    method: &str,
    declared: &BTreeSet<&str>,
) -> Result<(), MethodError> {
    match expr {
        Expr::Param(name) => {
            if !declared.contains(name.as_str()) {
                return Err(MethodError::UnknownParam {
                    method: method.to_string(),
                    param: name.clone(),
                });
            }
        }
        Expr::Prim(p, args) => {
            let ok = match p.arity() {
                Arity::Exact(n) => args.len() == n,
                Arity::AtLeast(n) => args.len() >= n,
            };
            if !ok {
                let expected = match p.arity() {
                    Arity::Exact(n) => format!("{n} argument(s)"),
                    Arity::AtLeast(n) => format!("at least {n} argument(s)"),
                };
                return Err(MethodError::ArityMismatch {
                    what: p.name().to_string(),
                    expected,
                    got: args.len(),
                });
            }
            for a in args {
                validate_expr(a, method, declared)?;
            }
        }
        Expr::Call(_, args) | Expr::ListOf(args) => {
            for a in args {
                validate_expr(a, method, declared)?;
            }
        }
        Expr::Members(e) | Expr::Produce(_, e) => validate_expr(e, method, declared)?,
        Expr::ClosureOf(e, _) => validate_expr(e, method, declared)?,
        Expr::AttrOf(a, b) => {
            validate_expr(a, method, declared)?;
            validate_expr(b, method, declared)?;
        }
        _ => {}
    }
    Ok(())
}

/// Count (call nodes) / (call nodes + primitive nodes); 0 when the body has
/// no calls.
pub fn reuse_ratio(def: &MethodDef) -> f64 {
    fn walk(expr: &Expr, calls: &mut u64, prims: &mut u64) {
        match expr {
            Expr::Call(_, args) => {
                *calls += 1;
                for a in args {
                    walk(a, calls, prims);
                }
            }
            Expr::Prim(_, args) => {
                *prims += 1;
                for a in args {
                    walk(a, calls, prims);
                }
            }
            Expr::ListOf(args) => {
                for a in args {
                    walk(a, calls, prims);
                }
            }
            Expr::Members(e) | Expr::Produce(_, e) => walk(e, calls, prims),
            Expr::ClosureOf(e, _) => walk(e, calls, prims),
            Expr::AttrOf(a, b) => {
                walk(a, calls, prims);
                walk(b, calls, prims);
            }
            _ => {}
        }
    }
    let (mut calls, mut prims) = (0u64, 0u64);
    walk(&def.body, &mut calls, &mut prims);
    if calls + prims == 0 {
        0.0
    } else {
        calls as f64 / (calls + prims) as f64
    }
}

// --- evaluation ---------------------------------------------------------------

struct EvalCtx<'a> {
    graph: &'a MemoryGraph,
    registry: &'a MethodRegistry,
    steps: u64,
    budget: u64,
    produced: Vec<ProducedElement>,
}

impl EvalCtx<'_> {
    fn charge(&mut self) -> Result<(), MethodError> {
        self.steps += 1;
        if self.steps > self.budget {
            Err(MethodError::NonTermination { budget: self.budget })
        } else {
            Ok(())
        }
    }
}

/// Evaluate a registered method on argument values with the default budget.
pub fn eval(
    graph: &MemoryGraph,
    registry: &MethodRegistry,
    method: &str,
    args: &[Val],
) -> Result<EvalOutcome, MethodError> {
    eval_with_budget(graph, registry, method, args, DEFAULT_STEP_BUDGET)
}

pub fn eval_with_budget(
    graph: &MemoryGraph,
    registry: &MethodRegistry,
    method: &str,
    args: &[Val],
    budget: u64,
) -> Result<EvalOutcome, MethodError> {
    let mut ctx = EvalCtx { graph, registry, steps: 0, budget, produced: Vec::new() };
    let value = eval_call(&mut ctx, method, args)?;
    Ok(EvalOutcome { value, produced: ctx.produced })
}

fn eval_call(ctx: &mut EvalCtx, method: &str, args: &[Val]) -> Result<Val, MethodError> {
    let def = ctx
        .registry
        .method(method)
        .ok_or_else(|| MethodError::UnknownMethod(method.to_string()))?;
    if args.len() != def.params.len() {
        return Err(MethodError::ArityMismatch {
            what: def.name.clone(),
            expected: format!("{} argument(s)", def.params.len()),
            got: args.len(),
        });
    }
    let mut env = BTreeMap::new();
    for (spec, arg) in def.params.iter().zip(args) {
        if let Some(class) = spec.constraint {
            let Val::Elem(e) = arg else {
                return Err(MethodError::TypeInadmissible(format!(
                    "param `{}` of `{}` requires an element of class {}",
                    spec.name, def.name, class
                )));
            };
            let admissible = *e == class
                || ctx
                    .graph
                    .closure(*e, &[EdgeKind::InstanceOf, EdgeKind::IsA])?
                    .contains(&class);
            if !admissible {
                return Err(MethodError::TypeInadmissible(format!(
                    "element {} is not within class {} required by param `{}` of `{}`",
                    e, class, spec.name, def.name
                )));
            }
        }
        env.insert(spec.name.clone(), arg.clone());
    }
    let body = def.body.clone();
    eval_expr(ctx, &env, &body)
}

fn num(v: Val, what: &str) -> Result<f64, MethodError> {
    match v {
        Val::Num(x) => Ok(x),
        other => Err(MethodError::TypeInadmissible(format!("{what} needs a number, got {other}"))),
    }
}

fn boolean(v: Val, what: &str) -> Result<bool, MethodError> {
    match v {
        Val::Bool(b) => Ok(b),
        other => Err(MethodError::TypeInadmissible(format!("{what} needs a boolean, got {other}"))),
    }
}

fn list(v: Val, what: &str) -> Result<Vec<Val>, MethodError> {
    match v {
        Val::List(items) => Ok(items),
        other => Err(MethodError::TypeInadmissible(format!("{what} needs a list, got {other}"))),
    }
}

fn elem(v: Val, what: &str) -> Result<ElementId, MethodError> {
    match v {
        Val::Elem(e) => Ok(e),
        other => Err(MethodError::TypeInadmissible(format!("{what} needs an element, got {other}"))),
    }
}

fn eval_expr(
    ctx: &mut EvalCtx,
    env: &BTreeMap<String, Val>,
    expr: &Expr,
) -> Result<Val, MethodError> {
    ctx.charge()?;
    match expr {
        Expr::Num(x) => Ok(Val::Num(*x)),
        Expr::Bool(b) => Ok(Val::Bool(*b)),
        Expr::Str(s) => Ok(Val::Str(s.clone())),
        Expr::Elem(id) => Ok(Val::Elem(*id)),
        Expr::Param(name) => env
            .get(name)
            .cloned()
            .ok_or_else(|| MethodError::UnknownParam { method: String::new(), param: name.clone() }),
        Expr::ListOf(items) => {
            let mut out = Vec::with_capacity(items.len());
            for e in items {
                out.push(eval_expr(ctx, env, e)?);
            }
            Ok(Val::List(out))
        }
        Expr::Call(name, args) => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(eval_expr(ctx, env, a)?);
            }
            eval_call(ctx, name, &vals)
        }
        Expr::Members(e) => {
            let root = elem(eval_expr(ctx, env, e)?, "members")?;
            ctx.graph.require_element(root)?;
            let mut seen = BTreeSet::new();
            let mut stack = vec![root];
            while let Some(n) = stack.pop() {
                for edge in ctx.graph.edges_to(n, EdgeKind::PartOf) {
                    if edge.src != root && seen.insert(edge.src) {
                        stack.push(edge.src);
                    }
                }
            }
            Ok(Val::List(seen.into_iter().map(Val::Elem).collect()))
        }
        Expr::ClosureOf(e, kinds) => {
            let root = elem(eval_expr(ctx, env, e)?, "closure")?;
            let ids = ctx.graph.closure(root, kinds)?;
            Ok(Val::List(ids.into_iter().map(Val::Elem).collect()))
        }
        Expr::AttrOf(owner, attr) => {
            let o = elem(eval_expr(ctx, env, owner)?, "attr")?;
            let a = elem(eval_expr(ctx, env, attr)?, "attr")?;
            let bindings = ctx.graph.attributes_of(o)?;
            Ok(bindings
                .iter()
                .find(|b| b.attribute == a)
                .and_then(|b| b.value)
                .map_or(Val::Unit, Val::Elem))
        }
        Expr::Produce(kind, name_expr) => {
            let name = match eval_expr(ctx, env, name_expr)? {
                Val::Str(s) => s,
                Val::Num(x) => x.to_string(),
                other => {
                    return Err(MethodError::TypeInadmissible(format!(
                        "produce needs a name string, got {other}"
                    )))
                }
            };
            ctx.produced.push(ProducedElement { kind: *kind, name: name.clone(), level: 0 });
            Ok(Val::Str(name))
        }
        Expr::Prim(p, args) => eval_prim(ctx, env, *p, args),
    }
}

fn eval_prim(
    ctx: &mut EvalCtx,
    env: &BTreeMap<String, Val>,
    p: Primitive,
    args: &[Expr],
) -> Result<Val, MethodError> {
    match p {
        Primitive::And => {
            for a in args {
                if !boolean(eval_expr(ctx, env, a)?, "and")? {
                    return Ok(Val::Bool(false));
                }
            }
            Ok(Val::Bool(true))
        }
        Primitive::Or => {
            for a in args {
                if boolean(eval_expr(ctx, env, a)?, "or")? {
                    return Ok(Val::Bool(true));
                }
            }
            Ok(Val::Bool(false))
        }
        Primitive::Not => Ok(Val::Bool(!boolean(eval_expr(ctx, env, &args[0])?, "not")?)),
        Primitive::ForAll => {
            let items = list(eval_expr(ctx, env, &args[0])?, "forall")?;
            for v in items {
                if !boolean(v, "forall item")? {
                    return Ok(Val::Bool(false));
                }
            }
            Ok(Val::Bool(true))
        }
        Primitive::Exists => {
            let items = list(eval_expr(ctx, env, &args[0])?, "exists")?;
            for v in items {
                if boolean(v, "exists item")? {
                    return Ok(Val::Bool(true));
                }
            }
            Ok(Val::Bool(false))
        }
        Primitive::Count => {
            let items = list(eval_expr(ctx, env, &args[0])?, "count")?;
            Ok(Val::Num(items.len() as f64))
        }
        Primitive::Eq => {
            let a = eval_expr(ctx, env, &args[0])?;
            let b = eval_expr(ctx, env, &args[1])?;
            Ok(Val::Bool(a == b))
        }
        Primitive::Neq => {
            let a = eval_expr(ctx, env, &args[0])?;
            let b = eval_expr(ctx, env, &args[1])?;
            Ok(Val::Bool(a != b))
        }
        Primitive::Lt | Primitive::Leq | Primitive::Gt | Primitive::Geq => {
            let a = num(eval_expr(ctx, env, &args[0])?, p.name())?;
            let b = num(eval_expr(ctx, env, &args[1])?, p.name())?;
            Ok(Val::Bool(match p {
                Primitive::Lt => a < b,
                Primitive::Leq => a <= b,
                Primitive::Gt => a > b,
                _ => a >= b,
            }))
        }
        Primitive::If => {
            if boolean(eval_expr(ctx, env, &args[0])?, "if")? {
                eval_expr(ctx, env, &args[1])
            } else {
                eval_expr(ctx, env, &args[2])
            }
        }
        Primitive::While => {
            // body is pure, so a true guard can only flip via budget exhaustion
            loop {
                if !boolean(eval_expr(ctx, env, &args[0])?, "while")? {
                    return Ok(Val::Unit);
                }
                eval_expr(ctx, env, &args[1])?;
            }
        }
        Primitive::For => {
            let n = num(eval_expr(ctx, env, &args[0])?, "for")?;
            if n < 0.0 || n.fract() != 0.0 {
                return Err(MethodError::TypeInadmissible(format!(
                    "for needs a non-negative integer count, got {n}"
                )));
            }
            let mut last = Val::Unit;
            for _ in 0..(n as u64) {
                last = eval_expr(ctx, env, &args[1])?;
            }
            Ok(last)
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div
        | Primitive::Min | Primitive::Max => {
            let a = num(eval_expr(ctx, env, &args[0])?, p.name())?;
            let b = num(eval_expr(ctx, env, &args[1])?, p.name())?;
            Ok(Val::Num(match p {
                Primitive::Add => a + b,
                Primitive::Sub => a - b,
                Primitive::Mul => a * b,
                Primitive::Div => {
                    if b == 0.0 {
                        return Err(MethodError::DivisionByZero);
                    }
                    a / b
                }
                Primitive::Min => a.min(b),
                _ => a.max(b),
            }))
        }
        Primitive::Norm => {
            let items = list(eval_expr(ctx, env, &args[0])?, "norm")?;
            let mut sum = 0.0;
            for v in items {
                let x = num(v, "norm item")?;
                sum += x * x;
            }
            Ok(Val::Num(sum.sqrt()))
        }
        Primitive::Log => {
            let x = num(eval_expr(ctx, env, &args[0])?, "log")?;
            if x <= 0.0 {
                return Err(MethodError::TypeInadmissible(format!(
                    "log needs a positive number, got {x}"
                )));
            }
            Ok(Val::Num(x.ln()))
        }
        Primitive::Slice => {
            let items = list(eval_expr(ctx, env, &args[0])?, "slice")?;
            let a = num(eval_expr(ctx, env, &args[1])?, "slice start")?;
            let b = num(eval_expr(ctx, env, &args[2])?, "slice end")?;
            if a.fract() != 0.0 || b.fract() != 0.0 {
                return Err(MethodError::TypeInadmissible(
                    "slice needs integer bounds".into(),
                ));
            }
            let len = items.len() as i64;
            let lo = (a as i64).clamp(0, len) as usize;
            let hi = (b as i64).clamp(0, len) as usize;
            Ok(Val::List(if lo < hi { items[lo..hi].to_vec() } else { Vec::new() }))
        }
        Primitive::Union => {
            let mut a = list(eval_expr(ctx, env, &args[0])?, "union")?;
            let b = list(eval_expr(ctx, env, &args[1])?, "union")?;
            for v in b {
                if !a.contains(&v) {
                    a.push(v);
                }
            }
            Ok(Val::List(a))
        }
        Primitive::Sort => {
            let items = list(eval_expr(ctx, env, &args[0])?, "sort")?;
            let all_num = items.iter().all(|v| matches!(v, Val::Num(x) if !x.is_nan()));
            let all_str = items.iter().all(|v| matches!(v, Val::Str(_)));
            let all_elem = items.iter().all(|v| matches!(v, Val::Elem(_)));
            let mut items = items;
            if all_num {
                items.sort_by(|a, b| match (a, b) {
                    (Val::Num(x), Val::Num(y)) => x.total_cmp(y),
                    _ => unreachable!(),
                });
            } else if all_str {
                items.sort_by(|a, b| match (a, b) {
                    (Val::Str(x), Val::Str(y)) => x.cmp(y),
                    _ => unreachable!(),
                });
            } else if all_elem {
                items.sort_by(|a, b| match (a, b) {
                    (Val::Elem(x), Val::Elem(y)) => x.cmp(y),
                    _ => unreachable!(),
                });
            } else {
                return Err(MethodError::TypeInadmissible(
                    "sort needs a homogeneous list of numbers, strings, or elements".into(),
                ));
            }
            Ok(Val::List(items))
        }
    }
}

// --- admissibility ------------------------------------------------------------

/// Actions admissible for `e` through its class closure, scored by the
/// consolidation of the strongest granting edge. Normal ranks strongest
/// first, Creative weakest first; ties break by ascending action id.
pub fn admissible_actions(
    graph: &MemoryGraph,
    e: ElementId,
    mode: Mode,
) -> Result<Vec<(ElementId, f64)>, MethodError> {
    graph.require_element(e)?;
    let mut sources = vec![e];
    sources.extend(graph.closure(e, &[EdgeKind::InstanceOf, EdgeKind::IsA])?);
    let mut scores: BTreeMap<ElementId, f64> = BTreeMap::new();
    for src in sources {
        for edge in graph.edges_from(src, EdgeKind::AdmissibleAction) {
            let s = edge.stats.consolidation;
            scores
                .entry(edge.dst)
                .and_modify(|cur| {
                    if s > *cur {
                        *cur = s;
                    }
                })
                .or_insert(s);
        }
    }
    let mut out: Vec<(ElementId, f64)> = scores.into_iter().collect();
    match mode {
        Mode::Normal => out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))),
        Mode::Creative => out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))),
    }
    Ok(out)
}

/// Apply one event to a state through the action's bound method: check
/// admissibility for every participant (unless forced), run the guard,
/// apply the effects, insert produced elements, and touch everything the
/// event referenced.
pub fn apply_action(
    graph: &mut MemoryGraph,
    registry: &MethodRegistry,
    state: &StoryState,
    event: &EventRecord,
    force: bool,
) -> Result<ApplyOutcome, MethodError> {
    let def = registry
        .binding_for(event.action)
        .ok_or(MethodError::NoBinding(event.action))?;
    if !force {
        for &p in event.participants.values() {
            let admissible = admissible_actions(graph, p, Mode::Normal)?
                .iter()
                .any(|&(a, _)| a == event.action);
            if !admissible {
                return Err(MethodError::NotAdmissible { action: event.action, participant: p });
            }
        }
    }
    // guard: bind method params to role fillers by name
    let mut outcome = EvalOutcome { value: Val::Bool(true), produced: Vec::new() };
    if !def.params.is_empty() || def.produces.is_some() || def.body != Expr::Bool(true) {
        let mut args = Vec::with_capacity(def.params.len());
        for spec in &def.params {
            let filler = event.participants.get(&spec.name).copied().ok_or_else(|| {
                MethodError::MissingRoleBinding {
                    method: def.name.clone(),
                    role: spec.name.clone(),
                }
            })?;
            args.push(Val::Elem(filler));
        }
        outcome = eval(graph, registry, &def.name, &args)?;
        if outcome.value == Val::Bool(false) && !force {
            let participant = event.participants.values().next().copied().unwrap_or(event.action);
            return Err(MethodError::NotAdmissible { action: event.action, participant });
        }
    }
    let (next, provenance) = transition(state, event)?;
    let mut produced = Vec::with_capacity(outcome.produced.len());
    for p in &outcome.produced {
        produced.push(graph.add_element(p.kind, Some(&p.name), p.level));
    }
    // strengthen everything the event referenced
    graph.touch(event.action)?;
    for &p in event.participants.values() {
        graph.touch(p)?;
        let mut classes = vec![p];
        classes.extend(graph.closure(p, &[EdgeKind::InstanceOf, EdgeKind::IsA])?);
        let mut granting = Vec::new();
        for c in classes {
            for edge in graph.edges_from(c, EdgeKind::AdmissibleAction) {
                if edge.dst == event.action {
                    granting.push(edge.id);
                }
            }
        }
        for id in granting {
            graph.touch_edge(id)?;
        }
    }
    for eff in &event.effects {
        graph.touch(eff.object)?;
        graph.touch(eff.attribute)?;
        graph.touch(eff.value)?;
    }
    Ok(ApplyOutcome { state: next, provenance, produced })
}

// --- method DSL ---------------------------------------------------------------

/// Parse one `method` line: `method <name>(<param>:<Class|Any>, ...) -> <body>`
/// where the body is an s-expression. Called by the story parser.
pub(crate) fn parse_method_line(
    graph: &mut MemoryGraph,
    registry: &mut MethodRegistry,
    cursor: &mut Cursor,
    line_no: usize,
) -> Result<(), StoryError> {
    let name = cursor.expect_ident("a method name")?;
    cursor.expect(&TokKind::LParen, "`(`")?;
    let mut params = Vec::new();
    if cursor.peek() != Some(&TokKind::RParen) {
        loop {
            let pname = cursor.expect_ident("a parameter name")?;
            cursor.expect(&TokKind::Colon, "`:`")?;
            let cname = cursor.expect_ident("a class name or Any")?;
            let constraint = if cname == "Any" {
                None
            } else {
                let found = graph
                    .elements()
                    .find(|e| e.level >= 1 && e.name.as_deref() == Some(cname.as_str()))
                    .map(|e| e.id);
                Some(found.ok_or(StoryError::UnknownReference { line: line_no, name: cname })?)
            };
            params.push(ParamSpec { name: pname, constraint });
            if cursor.peek() == Some(&TokKind::Comma) {
                cursor.next();
            } else {
                break;
            }
        }
    }
    cursor.expect(&TokKind::RParen, "`)`")?;
    cursor.expect(&TokKind::ThinArrow, "`->`")?;
    let declared: BTreeSet<String> = params.iter().map(|p| p.name.clone()).collect();
    let body = parse_sexpr(graph, &declared, cursor, line_no)?;
    cursor.expect_end()?;
    let produces = find_produced_kind(&body);
    registry
        .define(MethodDef { name, params, body, produces })
        .map_err(|e| StoryError::Syntax { line: line_no, col: 1, msg: e.to_string() })
}

fn find_produced_kind(expr: &Expr) -> Option<ElementKind> {
    match expr {
        Expr::Produce(kind, _) => Some(*kind),
        Expr::Prim(_, args) | Expr::Call(_, args) | Expr::ListOf(args) => {
            args.iter().find_map(find_produced_kind)
        }
        Expr::Members(e) => find_produced_kind(e),
        Expr::ClosureOf(e, _) => find_produced_kind(e),
        Expr::AttrOf(a, b) => find_produced_kind(a).or_else(|| find_produced_kind(b)),
        _ => None,
    }
}

fn edge_kind_from_name(name: &str) -> Option<EdgeKind> {
    Some(match name {
        "is_a" => EdgeKind::IsA,
        "instance_of" => EdgeKind::InstanceOf,
        "part_of" => EdgeKind::PartOf,
        "has" => EdgeKind::Has,
        "value_of" => EdgeKind::ValueOf,
        "admissible_action" => EdgeKind::AdmissibleAction,
        "synonym" => EdgeKind::Synonym,
        "antonym" => EdgeKind::Antonym,
        _ => return None,
    })
}

fn element_kind_from_name(name: &str) -> Option<ElementKind> {
    Some(match name {
        "Object" => ElementKind::Object,
        "Action" => ElementKind::Action,
        "Attribute" => ElementKind::Attribute,
        "Relation" => ElementKind::Relation,
        "Value" => ElementKind::Value,
        "EventClass" => ElementKind::EventClass,
        _ => return None,
    })
}

fn parse_sexpr(
    graph: &MemoryGraph,
    params: &BTreeSet<String>,
    cursor: &mut Cursor,
    line_no: usize,
) -> Result<Expr, StoryError> {
    match cursor.next() {
        Some(Tok { kind: TokKind::Int(n), .. }) => Ok(Expr::Num(*n as f64)),
        Some(Tok { kind: TokKind::Float(x), .. }) => Ok(Expr::Num(*x)),
        Some(Tok { kind: TokKind::Quoted(s), .. }) => Ok(Expr::Str(s.clone())),
        Some(Tok { kind: TokKind::Ident(s), .. }) => match s.as_str() {
            "true" => Ok(Expr::Bool(true)),
            "false" => Ok(Expr::Bool(false)),
            _ if params.contains(s) => Ok(Expr::Param(s.clone())),
            _ => {
                let ids = graph.find_by_name(s);
                ids.first()
                    .map(|&id| Expr::Elem(id))
                    .ok_or(StoryError::UnknownReference { line: line_no, name: s.clone() })
            }
        },
        Some(Tok { kind: TokKind::LParen, .. }) => {
            let head = cursor.expect_ident("an operator")?;
            let expr = match head.as_str() {
                "id" => match cursor.next() {
                    Some(Tok { kind: TokKind::Int(n), .. }) if *n >= 0 => {
                        Expr::Elem(ElementId(*n as u64))
                    }
                    _ => return Err(cursor.err("expected a non-negative element id")),
                },
                "list" => {
                    let mut items = Vec::new();
                    while cursor.peek() != Some(&TokKind::RParen) && !cursor.at_end() {
                        items.push(parse_sexpr(graph, params, cursor, line_no)?);
                    }
                    Expr::ListOf(items)
                }
                "members" => Expr::Members(Box::new(parse_sexpr(graph, params, cursor, line_no)?)),
                "closure" => {
                    let base = parse_sexpr(graph, params, cursor, line_no)?;
                    let mut kinds = Vec::new();
                    while cursor.peek() != Some(&TokKind::RParen) && !cursor.at_end() {
                        let k = cursor.expect_ident("an edge kind")?;
                        kinds.push(edge_kind_from_name(&k).ok_or_else(|| StoryError::Syntax {
                            line: line_no,
                            col: 1,
                            msg: format!("unknown edge kind `{k}`"),
                        })?);
                    }
                    if kinds.is_empty() {
                        return Err(cursor.err("closure needs at least one edge kind"));
                    }
                    Expr::ClosureOf(Box::new(base), kinds)
                }
                "attr" => {
                    let owner = parse_sexpr(graph, params, cursor, line_no)?;
                    let attribute = parse_sexpr(graph, params, cursor, line_no)?;
                    Expr::AttrOf(Box::new(owner), Box::new(attribute))
                }
                "produce" => {
                    let kname = cursor.expect_ident("an element kind")?;
                    let kind = element_kind_from_name(&kname).ok_or_else(|| StoryError::Syntax {
                        line: line_no,
                        col: 1,
                        msg: format!("unknown element kind `{kname}`"),
                    })?;
                    Expr::Produce(kind, Box::new(parse_sexpr(graph, params, cursor, line_no)?))
                }
                other => {
                    let mut args = Vec::new();
                    while cursor.peek() != Some(&TokKind::RParen) && !cursor.at_end() {
                        args.push(parse_sexpr(graph, params, cursor, line_no)?);
                    }
                    if let Some(p) = Primitive::from_name(other) {
                        Expr::Prim(p, args)
                    } else {
                        Expr::Call(other.to_string(), args)
                    }
                }
            };
            cursor.expect(&TokKind::RParen, "`)`")?;
            Ok(expr)
        }
        Some(t) => Err(StoryError::Syntax {
            line: line_no,
            col: t.col,
            msg: format!("expected an expression, found {}", t.kind.describe()),
        }),
        None => Err(cursor.err("expected an expression, found end of line")),
    }
}

/// Render an expression back to s-expression text. Element references
/// serialize as `(id N)`, so the text is exact under stable ids.
pub fn expr_to_sexpr(expr: &Expr) -> String {
    match expr {
        Expr::Num(x) => {
            if x.fract() == 0.0 && x.abs() < 1e15 {
                format!("{}", *x as i64)
            } else {
                format!("{x}")
            }
        }
        Expr::Bool(b) => b.to_string(),
        Expr::Str(s) => format!("\"{s}\""),
        Expr::Elem(id) => format!("(id {id})"),
        Expr::Param(name) => name.clone(),
        Expr::ListOf(items) => sexpr_list("list", items.iter().map(expr_to_sexpr)),
        Expr::Prim(p, args) => sexpr_list(p.name(), args.iter().map(expr_to_sexpr)),
        Expr::Call(name, args) => sexpr_list(name, args.iter().map(expr_to_sexpr)),
        Expr::Members(e) => sexpr_list("members", [expr_to_sexpr(e)].into_iter()),
        Expr::ClosureOf(e, kinds) => {
            let mut parts = vec![expr_to_sexpr(e)];
            parts.extend(kinds.iter().map(|k| {
                match k {
                    EdgeKind::IsA => "is_a",
                    EdgeKind::InstanceOf => "instance_of",
                    EdgeKind::PartOf => "part_of",
                    EdgeKind::Has => "has",
                    EdgeKind::ValueOf => "value_of",
                    EdgeKind::AdmissibleAction => "admissible_action",
                    EdgeKind::Synonym => "synonym",
                    EdgeKind::Antonym => "antonym",
                }
                .to_string()
            }));
            sexpr_list("closure", parts.into_iter())
        }
        Expr::AttrOf(a, b) => sexpr_list("attr", [expr_to_sexpr(a), expr_to_sexpr(b)].into_iter()),
        Expr::Produce(kind, e) => {
            let kname = match kind {
                ElementKind::Object => "Object",
                ElementKind::Action => "Action",
                ElementKind::Attribute => "Attribute",
                ElementKind::Relation => "Relation",
                ElementKind::Value => "Value",
                ElementKind::EventClass => "EventClass",
            };
            format!("(produce {kname} {})", expr_to_sexpr(e))
        }
    }
}

fn sexpr_list(head: &str, parts: impl Iterator<Item = String>) -> String {
    let mut s = format!("({head}");
    for p in parts {
        s.push(' ');
        s.push_str(&p);
    }
    s.push(')');
    s
}

/// Parse a standalone s-expression body (used by snapshot load).
pub fn parse_body(
    graph: &MemoryGraph,
    param_names: &BTreeSet<String>,
    text: &str,
) -> Result<Expr, StoryError> {
    let toks = crate::story::lex_line(1, text)?;
    let mut cursor = Cursor::new(1, &toks, text.chars().count());
    let expr = parse_sexpr(graph, param_names, &mut cursor, 1)?;
    cursor.expect_end()?;
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::story::parse_story;

    fn arith_registry() -> (MemoryGraph, MethodRegistry) {
        let g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        r.define(MethodDef {
            name: "add2".into(),
            params: vec![
                ParamSpec { name: "x".into(), constraint: None },
                ParamSpec { name: "y".into(), constraint: None },
            ],
            body: Expr::Prim(
                Primitive::Add,
                vec![Expr::Param("x".into()), Expr::Param("y".into())],
            ),
            produces: None,
        })
        .unwrap();
        (g, r)
    }

    #[test]
    fn add_method_evaluates() {
        let (g, r) = arith_registry();
        let out = eval(&g, &r, "add2", &[Val::Num(2.0), Val::Num(3.0)]).unwrap();
        assert_eq!(out.value, Val::Num(5.0));
        assert!(out.produced.is_empty());
    }

    #[test]
    fn eval_is_pure() {
        let (g, r) = arith_registry();
        let a = eval(&g, &r, "add2", &[Val::Num(0.1), Val::Num(0.2)]).unwrap();
        let b = eval(&g, &r, "add2", &[Val::Num(0.1), Val::Num(0.2)]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn arity_mismatch_rejected() {
        let (g, r) = arith_registry();
        let err = eval(&g, &r, "add2", &[Val::Num(1.0)]).unwrap_err();
        assert!(matches!(err, MethodError::ArityMismatch { .. }));
    }

    #[test]
    fn division_by_zero_surfaces() {
        let g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        r.define(MethodDef {
            name: "bad".into(),
            params: vec![],
            body: Expr::Prim(Primitive::Div, vec![Expr::Num(1.0), Expr::Num(0.0)]),
            produces: None,
        })
        .unwrap();
        assert_eq!(eval(&g, &r, "bad", &[]).unwrap_err(), MethodError::DivisionByZero);
    }

    #[test]
    fn endless_while_hits_budget() {
        let g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        r.define(MethodDef {
            name: "spin".into(),
            params: vec![],
            body: Expr::Prim(Primitive::While, vec![Expr::Bool(true), Expr::Num(0.0)]),
            produces: None,
        })
        .unwrap();
        let err = eval_with_budget(&g, &r, "spin", &[], 1000).unwrap_err();
        assert_eq!(err, MethodError::NonTermination { budget: 1000 });
    }

    #[test]
    fn class_constraint_checked_through_closure() {
        let mut g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        let ball = g.add_element(ElementKind::Object, Some("ball"), 0);
        let toy = g.add_element(ElementKind::Object, Some("Toy"), 1);
        let rock = g.add_element(ElementKind::Object, Some("rock"), 0);
        g.add_edge(ball, toy, EdgeKind::InstanceOf, 1.0).unwrap();
        r.define(MethodDef {
            name: "is_toy".into(),
            params: vec![ParamSpec { name: "t".into(), constraint: Some(toy) }],
            body: Expr::Bool(true),
            produces: None,
        })
        .unwrap();
        assert!(eval(&g, &r, "is_toy", &[Val::Elem(ball)]).is_ok());
        let err = eval(&g, &r, "is_toy", &[Val::Elem(rock)]).unwrap_err();
        assert!(matches!(err, MethodError::TypeInadmissible(_)));
    }

    #[test]
    fn undeclared_param_rejected_at_define() {
        let mut r = MethodRegistry::new();
        let err = r
            .define(MethodDef {
                name: "ghost".into(),
                params: vec![],
                body: Expr::Param("x".into()),
                produces: None,
            })
            .unwrap_err();
        assert!(matches!(err, MethodError::UnknownParam { .. }));
    }

    #[test]
    fn unguarded_call_cycle_rejected() {
        let mut r = MethodRegistry::new();
        r.define(MethodDef {
            name: "a".into(),
            params: vec![],
            body: Expr::Call("b".into(), vec![]),
            produces: None,
        })
        .unwrap();
        let err = r
            .define(MethodDef {
                name: "b".into(),
                params: vec![],
                body: Expr::Call("a".into(), vec![]),
                produces: None,
            })
            .unwrap_err();
        assert!(matches!(err, MethodError::CyclicCalls(_)));
        // a call under For is guarded by the step budget instead
        let mut r2 = MethodRegistry::new();
        r2.define(MethodDef {
            name: "a".into(),
            params: vec![],
            body: Expr::Prim(Primitive::For, vec![Expr::Num(0.0), Expr::Call("a".into(), vec![])]),
            produces: None,
        })
        .unwrap();
    }

    #[test]
    fn reuse_ratio_counts_nodes() {
        let prim = Expr::Prim(Primitive::Add, vec![Expr::Num(1.0), Expr::Num(2.0)]);
        let lone = MethodDef { name: "p".into(), params: vec![], body: prim.clone(), produces: None };
        assert_eq!(reuse_ratio(&lone), 0.0);
        let delegate = MethodDef {
            name: "d".into(),
            params: vec![],
            body: Expr::Call("p".into(), vec![]),
            produces: None,
        };
        assert_eq!(reuse_ratio(&delegate), 1.0);
        let mixed = MethodDef {
            name: "m".into(),
            params: vec![],
            body: Expr::Prim(
                Primitive::Add,
                vec![
                    Expr::Prim(Primitive::Mul, vec![Expr::Num(2.0), Expr::Num(3.0)]),
                    Expr::Prim(
                        Primitive::Add,
                        vec![Expr::Call("p".into(), vec![]), Expr::Num(1.0)],
                    ),
                ],
            ),
            produces: None,
        };
        // 3 primitives, 1 call
        assert_eq!(reuse_ratio(&mixed), 0.25);
    }

    #[test]
    fn admissible_actions_orderings() {
        let mut g = MemoryGraph::new();
        let ball = g.add_element(ElementKind::Object, Some("ball"), 0);
        let kick = g.add_element(ElementKind::Action, Some("kick"), 1);
        let eat = g.add_element(ElementKind::Action, Some("eat"), 1);
        let e1 = g.add_edge(ball, kick, EdgeKind::AdmissibleAction, 1.0).unwrap();
        let e2 = g.add_edge(ball, eat, EdgeKind::AdmissibleAction, 1.0).unwrap();
        g.set_edge_consolidation(e1, 0.9).unwrap();
        g.set_edge_consolidation(e2, 0.1).unwrap();
        let normal = admissible_actions(&g, ball, Mode::Normal).unwrap();
        let creative = admissible_actions(&g, ball, Mode::Creative).unwrap();
        assert_eq!(normal.iter().map(|x| x.0).collect::<Vec<_>>(), vec![kick, eat]);
        assert_eq!(creative.iter().map(|x| x.0).collect::<Vec<_>>(), vec![eat, kick]);
        let reversed: Vec<ElementId> = normal.iter().rev().map(|x| x.0).collect();
        assert_eq!(creative.iter().map(|x| x.0).collect::<Vec<_>>(), reversed);
    }

    #[test]
    fn admissible_actions_tie_breaks_by_id_in_both_modes() {
        let mut g = MemoryGraph::new();
        let thing = g.add_element(ElementKind::Object, Some("thing"), 0);
        let a1 = g.add_element(ElementKind::Action, Some("a1"), 1);
        let a2 = g.add_element(ElementKind::Action, Some("a2"), 1);
        g.add_edge(thing, a2, EdgeKind::AdmissibleAction, 1.0).unwrap();
        g.add_edge(thing, a1, EdgeKind::AdmissibleAction, 1.0).unwrap();
        for mode in [Mode::Normal, Mode::Creative] {
            let order: Vec<ElementId> =
                admissible_actions(&g, thing, mode).unwrap().iter().map(|x| x.0).collect();
            assert_eq!(order, vec![a1, a2]);
        }
    }

    #[test]
    fn inherited_class_action_reaches_instance() {
        let mut g = MemoryGraph::new();
        let ball = g.add_element(ElementKind::Object, Some("ball"), 0);
        let toy = g.add_element(ElementKind::Object, Some("Toy"), 1);
        let play = g.add_element(ElementKind::Action, Some("play"), 1);
        g.add_edge(ball, toy, EdgeKind::InstanceOf, 1.0).unwrap();
        g.add_edge(toy, play, EdgeKind::AdmissibleAction, 1.0).unwrap();
        let actions = admissible_actions(&g, ball, Mode::Normal).unwrap();
        assert_eq!(actions.len(), 1);
        assert_eq!(actions[0].0, play);
    }

    #[test]
    fn no_actions_yields_empty() {
        let mut g = MemoryGraph::new();
        let lone = g.add_element(ElementKind::Object, Some("lone"), 0);
        assert!(admissible_actions(&g, lone, Mode::Normal).unwrap().is_empty());
    }

    #[test]
    fn apply_action_moves_keys_to_desk() {
        let mut g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        let eps = parse_story(&mut g, &mut r, crate::story::DAVID_STORY).unwrap();
        let ep = &eps[0];
        // walk to the state before event 6, then apply event 6 explicitly
        let mut state = ep.initial.clone();
        for ev in &ep.events[..5] {
            state = transition(&state, ev).unwrap().0;
        }
        let ev6 = &ep.events[5];
        let before_visits = g.element(ev6.action).unwrap().stats.visits;
        let out = apply_action(&mut g, &r, &state, ev6, false).unwrap();
        let keys = g.find_by_name("keys")[0];
        let desk = g.find_by_name("desk")[0];
        let location = g.find_by_name("location")[0];
        assert_eq!(out.state.value(keys, location), Some(desk));
        assert_eq!(out.provenance.len(), 1);
        assert_eq!(out.provenance[0].new, desk);
        // input state untouched, action element strengthened
        assert_ne!(state.value(keys, location), Some(desk));
        assert_eq!(g.element(ev6.action).unwrap().stats.visits, before_visits + 1);
    }

    #[test]
    fn apply_action_rejects_unknown_admissibility() {
        let mut g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        let rock = g.add_element(ElementKind::Object, Some("rock"), 0);
        let sing = g.add_element(ElementKind::Action, Some("sing"), 1);
        r.ensure_default_binding(sing, "sing");
        let event = EventRecord {
            time: 1,
            action: sing,
            verb: "sing".into(),
            participants: [("actor".to_string(), rock)].into_iter().collect(),
            effects: vec![],
        };
        let mut state = StoryState::default();
        state.present.insert(rock);
        let err = apply_action(&mut g, &r, &state, &event, false).unwrap_err();
        assert!(matches!(err, MethodError::NotAdmissible { .. }));
        // forcing bypasses the admissibility gate
        assert!(apply_action(&mut g, &r, &state, &event, true).is_ok());
    }

    #[test]
    fn empty_effects_leave_state_unchanged() {
        let mut g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        let cat = g.add_element(ElementKind::Object, Some("cat"), 0);
        let nap = g.add_element(ElementKind::Action, Some("nap"), 1);
        g.add_edge(cat, nap, EdgeKind::AdmissibleAction, 1.0).unwrap();
        r.ensure_default_binding(nap, "nap");
        let event = EventRecord {
            time: 1,
            action: nap,
            verb: "nap".into(),
            participants: [("actor".to_string(), cat)].into_iter().collect(),
            effects: vec![],
        };
        let mut state = StoryState::default();
        state.present.insert(cat);
        let out = apply_action(&mut g, &r, &state, &event, false).unwrap();
        assert_eq!(out.state.values, state.values);
        assert_eq!(out.state.present, state.present);
        assert!(out.provenance.is_empty());
    }

    #[test]
    fn produced_elements_inserted_at_level_zero() {
        let mut g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        let forge = g.add_element(ElementKind::Action, Some("forge"), 1);
        let smith = g.add_element(ElementKind::Object, Some("smith"), 0);
        g.add_edge(smith, forge, EdgeKind::AdmissibleAction, 1.0).unwrap();
        r.define(MethodDef {
            name: "make_spark".into(),
            params: vec![],
            body: Expr::Produce(ElementKind::Object, Box::new(Expr::Str("spark".into()))),
            produces: Some(ElementKind::Object),
        })
        .unwrap();
        r.bind(&g, forge, "make_spark").unwrap();
        let event = EventRecord {
            time: 1,
            action: forge,
            verb: "forge".into(),
            participants: [("actor".to_string(), smith)].into_iter().collect(),
            effects: vec![],
        };
        let mut state = StoryState::default();
        state.present.insert(smith);
        let out = apply_action(&mut g, &r, &state, &event, false).unwrap();
        assert_eq!(out.produced.len(), 1);
        let spark = g.element(out.produced[0]).unwrap();
        assert_eq!(spark.name.as_deref(), Some("spark"));
        assert_eq!(spark.level, 0);
        assert_eq!(spark.kind, ElementKind::Object);
        // eval alone must NOT have inserted anything extra
        let count_before = g.element_count();
        let _ = eval(&g, &r, "make_spark", &[]).unwrap();
        assert_eq!(g.element_count(), count_before);
    }

    #[test]
    fn members_counts_transitive_containment() {
        let mut g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        let room = g.add_element(ElementKind::Object, Some("room"), 0);
        let david = g.add_element(ElementKind::Object, Some("David"), 0);
        let ball = g.add_element(ElementKind::Object, Some("ball"), 0);
        g.add_edge(david, room, EdgeKind::PartOf, 1.0).unwrap();
        g.add_edge(ball, david, EdgeKind::PartOf, 1.0).unwrap();
        r.define(MethodDef {
            name: "census".into(),
            params: vec![ParamSpec { name: "place".into(), constraint: None }],
            body: Expr::Prim(
                Primitive::Count,
                vec![Expr::Members(Box::new(Expr::Param("place".into())))],
            ),
            produces: None,
        })
        .unwrap();
        let out = eval(&g, &r, "census", &[Val::Elem(room)]).unwrap();
        assert_eq!(out.value, Val::Num(2.0));
    }

    #[test]
    fn method_line_parses_and_runs() {
        let mut g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        let text = "episode m\nobj a : Thing\nmethod double(x:Any) -> (mul x 2)\nmethod quad(x:Any) -> (double (double x))\n";
        parse_story(&mut g, &mut r, text).unwrap();
        let out = eval(&g, &r, "quad", &[Val::Num(3.0)]).unwrap();
        assert_eq!(out.value, Val::Num(12.0));
        assert_eq!(reuse_ratio(r.method("quad").unwrap()), 1.0);
    }

    #[test]
    fn sexpr_round_trip() {
        let mut g = MemoryGraph::new();
        g.add_element(ElementKind::Object, Some("pivot"), 0);
        let declared: BTreeSet<String> = ["x".to_string()].into_iter().collect();
        let src = "(if (lt x 3) (add x 1) (slice (list 1 2 3) 0 2))";
        let e1 = parse_body(&g, &declared, src).unwrap();
        let text = expr_to_sexpr(&e1);
        let e2 = parse_body(&g, &declared, &text).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn group_primitives_behave() {
        let g = MemoryGraph::new();
        let mut r = MethodRegistry::new();
        r.define(MethodDef {
            name: "probe".into(),
            params: vec![],
            body: Expr::Prim(
                Primitive::Union,
                vec![
                    Expr::Prim(
                        Primitive::Sort,
                        vec![Expr::ListOf(vec![Expr::Num(3.0), Expr::Num(1.0), Expr::Num(2.0)])],
                    ),
                    Expr::ListOf(vec![Expr::Num(2.0), Expr::Num(9.0)]),
                ],
            ),
            produces: None,
        })
        .unwrap();
        let out = eval(&g, &r, "probe", &[]).unwrap();
        assert_eq!(
            out.value,
            Val::List(vec![Val::Num(1.0), Val::Num(2.0), Val::Num(3.0), Val::Num(9.0)])
        );
    }
}
