//! Coarse-to-fine planning over finite state spaces: will refinement into
//! goal regions, quotient hierarchies, corridor-restricted search with
//! upward backtracking, and backward design search.
//!
//! Search is uniform-cost at every level with ascending-state tie-breaking,
//! so identical inputs give identical plans and stats. Corridors that fail
//! are widened by one block ring up to three times; after that the solver
//! falls back to a flat ground search, which makes it complete: it returns
//! a plan exactly when one exists.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use thiserror::Error;

/// Alternative abstract paths examined per level before backtracking higher.
pub const MAX_ALTERNATIVES: usize = 8;
/// Corridor widenings attempted before the flat fallback.
pub const MAX_WIDENINGS: u64 = 3;

/// A finite labeled transition system with non-negative costs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundSpace {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
    adj: Vec<Vec<(usize, String, f64)>>,
    /// (width, height) when built as a grid; enables Grid2x2 coarsening.
    grid: Option<(usize, usize)>,
}

impl GroundSpace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Grid of unblocked cells named `x,y` with unit-cost moves E/W/S/N.
    pub fn grid(width: usize, height: usize, blocked: &BTreeSet<(usize, usize)>) -> Self {
        let mut space = GroundSpace { grid: Some((width, height)), ..Default::default() };
        for y in 0..height {
            for x in 0..width {
                if !blocked.contains(&(x, y)) {
                    space.add_state(&format!("{x},{y}"));
                }
            }
        }
        let moves = [("E", 1i64, 0i64), ("W", -1, 0), ("S", 0, 1), ("N", 0, -1)];
        for y in 0..height {
            for x in 0..width {
                let Some(src) = space.state(&format!("{x},{y}")) else { continue };
                for (label, dx, dy) in moves {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    if let Some(dst) = space.state(&format!("{nx},{ny}")) {
                        space.adj[src].push((dst, label.to_string(), 1.0));
                    }
                }
            }
        }
        for row in &mut space.adj {
            row.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        }
        space
    }

    pub fn add_state(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        self.adj.push(Vec::new());
        i
    }

    pub fn add_transition(
        &mut self,
        src: usize,
        dst: usize,
        label: &str,
        cost: f64,
    ) -> Result<(), PlanError> {
        if cost.is_nan() || cost < 0.0 {
            return Err(PlanError::NegativeCost(cost));
        }
        if src >= self.len() || dst >= self.len() {
            return Err(PlanError::UnknownState(format!("state index {}", src.max(dst))));
        }
        self.adj[src].push((dst, label.to_string(), cost));
        self.adj[src].sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn state(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, state: usize) -> &str {
        &self.names[state]
    }

    pub fn transitions_from(&self, state: usize) -> &[(usize, String, f64)] {
        &self.adj[state]
    }

    pub fn grid_size(&self) -> Option<(usize, usize)> {
        self.grid
    }

    fn coords(&self, state: usize) -> Option<(usize, usize)> {
        let (x, y) = self.names[state].split_once(',')?;
        Some((x.parse().ok()?, y.parse().ok()?))
    }
}

/// How each level quotients the one below.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Coarsening {
    /// Halve grid coordinates at each level (grid spaces only).
    Grid2x2,
    /// One explicit partition of the ground states (two levels total).
    Explicit(Vec<Vec<usize>>),
}

/// Unlabeled unit-cost quotient graph at one abstract level.
#[derive(Debug, Clone, Default, PartialEq)]
struct LevelGraph {
    n: usize,
    adj: Vec<Vec<usize>>,
}

/// A ground space plus its quotient levels and the block maps between them.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredSpace {
    pub ground: GroundSpace,
    levels: Vec<LevelGraph>,
    /// maps[i][state at level i] = block at level i+1.
    maps: Vec<Vec<usize>>,
}

impl LayeredSpace {
    pub fn level_count(&self) -> usize {
        self.levels.len() + 1
    }

    /// Number of states at the given level (0 = ground).
    pub fn level_size(&self, level: usize) -> usize {
        if level == 0 {
            self.ground.len()
        } else {
            self.levels[level - 1].n
        }
    }

    /// Image of a ground state at the given level.
    pub fn lift(&self, state: usize, level: usize) -> usize {
        let mut s = state;
        for map in &self.maps[..level] {
            s = map[s];
        }
        s
    }

    fn neighbors(&self, level: usize, block: usize) -> &[usize] {
        &self.levels[level - 1].adj[block]
    }
}

/// Intent: where we are (problem) and where we want to be (goal).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Will {
    pub problem_region: BTreeSet<usize>,
    pub goal_region: BTreeSet<usize>,
    pub stage: WillStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WillStage {
    Unformulated,
    Purposeful,
}

impl Will {
    pub fn purposeful(
        problem_region: impl IntoIterator<Item = usize>,
        goal_region: impl IntoIterator<Item = usize>,
    ) -> Self {
        Will {
            problem_region: problem_region.into_iter().collect(),
            goal_region: goal_region.into_iter().collect(),
            stage: WillStage::Purposeful,
        }
    }
}

/// Search effort counters.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PlanStats {
    /// Node settles per level (index 0 = ground).
    pub expansions: Vec<u64>,
    /// Abandoned abstract alternatives.
    pub backtracks: u64,
    /// Corridor widenings used by the successful attempt.
    pub widenings: u64,
    /// True when the corridor attempts all failed and flat search planned.
    pub flat_fallback: bool,
}

/// A refined plan: the chosen abstract path per level (top first) and the
/// validated ground path.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub abstract_paths: Vec<(usize, Vec<usize>)>,
    pub states: Vec<usize>,
    pub actions: Vec<String>,
    pub cost: f64,
    pub stats: PlanStats,
}

/// One search expansion, for `--trace` output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub level: usize,
    pub state: String,
    pub action: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("ParseError: line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("UnknownState: {0}")]
    UnknownState(String),
    #[error("NegativeCost: {0}")]
    NegativeCost(f64),
    #[error("InvalidPartition: {0}")]
    InvalidPartition(String),
    #[error("InvalidLevels: {0} (need at least 1)")]
    InvalidLevels(usize),
    #[error("NotPurposeful: the will has no problem or goal region")]
    NotPurposeful,
    #[error("NoGoalCandidates: the scorer excludes every state outside the problem region")]
    NoGoalCandidates,
    #[error("NoReachableStart: no scored state reaches the goal region")]
    NoReachableStart,
    #[error("Unsolvable: no ground path reaches the goal region")]
    Unsolvable,
}

// --- space file -------------------------------------------------------------

/// A parsed state-space file: the space plus optional start/goal markers.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceFile {
    pub space: GroundSpace,
    pub start: Option<usize>,
    pub goal: Option<usize>,
}

/// Parse the text space format: `space grid W H` or `space graph`, then
/// `blocked x,y`, `edge a b cost`, `start ...`, `goal ...` lines.
pub fn parse_space(text: &str) -> Result<SpaceFile, PlanError> {
    enum Header {
        Grid(usize, usize),
        Graph,
    }
    let err = |line: usize, msg: String| PlanError::ParseError { line, msg };
    let mut header: Option<Header> = None;
    let mut blocked: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut edges: Vec<(String, String, f64, usize)> = Vec::new();
    let mut start_name: Option<(String, usize)> = None;
    let mut goal_name: Option<(String, usize)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or("");
        let rest: Vec<&str> = parts.collect();
        match head {
            "space" => match rest.as_slice() {
                ["grid", w, h] => {
                    let w = w.parse().map_err(|_| err(line_no, format!("bad width `{w}`")))?;
                    let h = h.parse().map_err(|_| err(line_no, format!("bad height `{h}`")))?;
                    header = Some(Header::Grid(w, h));
                }
                ["graph"] => header = Some(Header::Graph),
                _ => return Err(err(line_no, "expected `space grid W H` or `space graph`".into())),
            },
            "blocked" => {
                let [cell] = rest.as_slice() else {
                    return Err(err(line_no, "expected `blocked x,y`".into()));
                };
                blocked.insert(parse_cell(cell).ok_or_else(|| err(line_no, format!("bad cell `{cell}`")))?);
            }
            "edge" => {
                let [a, b, cost] = rest.as_slice() else {
                    return Err(err(line_no, "expected `edge a b cost`".into()));
                };
                let cost: f64 =
                    cost.parse().map_err(|_| err(line_no, format!("bad cost `{cost}`")))?;
                edges.push((a.to_string(), b.to_string(), cost, line_no));
            }
            "start" => {
                let [name] = rest.as_slice() else {
                    return Err(err(line_no, "expected `start state`".into()));
                };
                start_name = Some((name.to_string(), line_no));
            }
            "goal" => {
                let [name] = rest.as_slice() else {
                    return Err(err(line_no, "expected `goal state`".into()));
                };
                goal_name = Some((name.to_string(), line_no));
            }
            other => return Err(err(line_no, format!("unknown directive `{other}`"))),
        }
    }
    let mut space = match header {
        Some(Header::Grid(w, h)) => GroundSpace::grid(w, h, &blocked),
        Some(Header::Graph) => GroundSpace::new(),
        None => return Err(err(1, "missing `space` header".into())),
    };
    for (a, b, cost, line_no) in edges {
        let src = space.state(&a).map(Ok).unwrap_or_else(|| {
            if space.grid.is_some() {
                Err(err(line_no, format!("unknown state `{a}`")))
            } else {
                Ok(space.add_state(&a))
            }
        })?;
        let dst = space.state(&b).map(Ok).unwrap_or_else(|| {
            if space.grid.is_some() {
                Err(err(line_no, format!("unknown state `{b}`")))
            } else {
                Ok(space.add_state(&b))
            }
        })?;
        if cost.is_nan() || cost < 0.0 {
            return Err(err(line_no, format!("negative cost {cost}")));
        }
        space.adj[src].push((dst, format!("{a}->{b}"), cost));
        space.adj[src].sort_by(|x, y| (x.0, &x.1).cmp(&(y.0, &y.1)));
    }
    let resolve = |space: &GroundSpace, marker: Option<(String, usize)>| match marker {
        None => Ok(None),
        Some((name, line_no)) => space
            .state(&name)
            .map(Some)
            .ok_or_else(|| err(line_no, format!("unknown state `{name}`"))),
    };
    let start = resolve(&space, start_name)?;
    let goal = resolve(&space, goal_name)?;
    Ok(SpaceFile { space, start, goal })
}

fn parse_cell(text: &str) -> Option<(usize, usize)> {
    let (x, y) = text.split_once(',')?;
    Some((x.parse().ok()?, y.parse().ok()?))
}

// --- hierarchy ----------------------------------------------------------------

/// Quotient the ground space into `levels` layers. An abstract transition
/// exists exactly when some concrete transition crosses the two blocks.
pub fn build_hierarchy(
    ground: GroundSpace,
    levels: usize,
    coarsening: Coarsening,
) -> Result<LayeredSpace, PlanError> {
    if levels < 1 {
        return Err(PlanError::InvalidLevels(levels));
    }
    let mut layered = LayeredSpace { ground, levels: Vec::new(), maps: Vec::new() };
    match coarsening {
        Coarsening::Grid2x2 => {
            if layered.ground.grid.is_none() {
                return Err(PlanError::InvalidPartition(
                    "Grid2x2 coarsening needs a grid space".into(),
                ));
            }
            for level in 1..levels {
                // ground cell (x, y) belongs to block (x >> level, y >> level);
                // block ids are assigned in ascending (by, bx) order over
                // occupied blocks
                let mut blocks: BTreeMap<(usize, usize), usize> = BTreeMap::new();
                let mut ground_to_block = vec![0usize; layered.ground.len()];
                let mut ordered: Vec<(usize, usize)> = Vec::new();
                for s in 0..layered.ground.len() {
                    let (x, y) = layered
                        .ground
                        .coords(s)
                        .expect("grid states are named x,y");
                    ordered.push((y >> level, x >> level));
                }
                let mut sorted = ordered.clone();
                sorted.sort_unstable();
                sorted.dedup();
                for (i, &key) in sorted.iter().enumerate() {
                    blocks.insert(key, i);
                }
                for (s, key) in ordered.iter().enumerate() {
                    ground_to_block[s] = blocks[key];
                }
                push_level(&mut layered, level, ground_to_block);
            }
        }
        Coarsening::Explicit(partition) => {
            if levels > 2 {
                return Err(PlanError::InvalidPartition(
                    "explicit coarsening defines exactly one abstract level".into(),
                ));
            }
            if levels == 2 {
                let n = layered.ground.len();
                let mut ground_to_block = vec![usize::MAX; n];
                for (b, members) in partition.iter().enumerate() {
                    for &s in members {
                        if s >= n || ground_to_block[s] != usize::MAX {
                            return Err(PlanError::InvalidPartition(format!(
                                "state {s} is out of range or assigned twice"
                            )));
                        }
                        ground_to_block[s] = b;
                    }
                }
                if ground_to_block.contains(&usize::MAX) {
                    return Err(PlanError::InvalidPartition("states left unassigned".into()));
                }
                push_level(&mut layered, 1, ground_to_block);
            }
        }
    }
    Ok(layered)
}

/// Install the quotient for `level` given the ground-to-block map, deriving
/// the (level-1)→level map and the block adjacency.
fn push_level(layered: &mut LayeredSpace, level: usize, ground_to_block: Vec<usize>) {
    let n_blocks = ground_to_block.iter().copied().max().map_or(0, |m| m + 1);
    // map from the level below: lift any member
    let below = level - 1;
    let n_below = layered.level_size(below);
    let mut map = vec![0usize; n_below];
    for s in 0..layered.ground.len() {
        map[layered.lift(s, below)] = ground_to_block[s];
    }
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_blocks];
    for s in 0..layered.ground.len() {
        for &(dst, _, _) in layered.ground.transitions_from(s) {
            let (a, b) = (ground_to_block[s], ground_to_block[dst]);
            if a != b {
                adj[a].insert(b);
            }
        }
    }
    layered.maps.push(map);
    layered.levels.push(LevelGraph {
        n: n_blocks,
        adj: adj.into_iter().map(|s| s.into_iter().collect()).collect(),
    });
}

// --- will refinement -----------------------------------------------------------

/// Score every state outside the problem region and adopt the argmax set
/// (all ties) as the goal region. `None` scores exclude a state.
pub fn refine_will(
    space: &GroundSpace,
    problem: impl Fn(usize) -> bool,
    scorer: impl Fn(usize) -> Option<f64>,
) -> Result<Will, PlanError> {
    let problem_region: BTreeSet<usize> = (0..space.len()).filter(|&s| problem(s)).collect();
    let mut best: Option<f64> = None;
    let mut goal_region = BTreeSet::new();
    for s in 0..space.len() {
        if problem_region.contains(&s) {
            continue;
        }
        let Some(score) = scorer(s) else { continue };
        match best {
            Some(b) if score < b => {}
            Some(b) if score == b => {
                goal_region.insert(s);
            }
            _ => {
                best = Some(score);
                goal_region = BTreeSet::from([s]);
            }
        }
    }
    if goal_region.is_empty() {
        return Err(PlanError::NoGoalCandidates);
    }
    Ok(Will { problem_region, goal_region, stage: WillStage::Purposeful })
}

// --- search core -----------------------------------------------------------------

/// f64 cost with a total order for heap keys.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cost(f64);

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct SearchCtx<'a> {
    layered: &'a LayeredSpace,
    expansions: Vec<u64>,
    backtracks: u64,
    trace: Option<&'a mut Vec<TraceEntry>>,
}

impl SearchCtx<'_> {
    fn record(&mut self, level: usize, state: usize, action: &str) {
        self.expansions[level] += 1;
        if let Some(trace) = self.trace.as_deref_mut() {
            let name = if level == 0 {
                self.layered.ground.name(state).to_string()
            } else {
                format!("b{state}")
            };
            trace.push(TraceEntry { level, state: name, action: action.to_string() });
        }
    }
}

/// Deterministic uniform-cost search: settles states in (cost, index) order,
/// honors a corridor and excluded nodes/edges, returns the settled path.
#[allow(clippy::too_many_arguments)]
fn dijkstra(
    ctx: &mut SearchCtx,
    level: usize,
    start: usize,
    goals: &BTreeSet<usize>,
    corridor: Option<&BTreeSet<usize>>,
    banned_nodes: &BTreeSet<usize>,
    banned_edges: &BTreeSet<(usize, usize)>,
) -> Option<(f64, Vec<usize>)> {
    let inside =
        |s: usize| corridor.is_none_or(|c| c.contains(&s)) && !banned_nodes.contains(&s);
    if !inside(start) {
        return None;
    }
    let n = ctx.layered.level_size(level);
    let mut dist: Vec<Option<f64>> = vec![None; n];
    let mut parent: Vec<Option<(usize, String)>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(Cost, usize)>> = BinaryHeap::new();
    dist[start] = Some(0.0);
    heap.push(Reverse((Cost(0.0), start)));
    while let Some(Reverse((Cost(d), s))) = heap.pop() {
        if settled[s] || dist[s] != Some(d) {
            continue;
        }
        settled[s] = true;
        debug_assert!(inside(s), "expanded a state outside the corridor");
        let incoming = parent[s].as_ref().map_or("-", |(_, a)| a.as_str()).to_string();
        ctx.record(level, s, &incoming);
        if goals.contains(&s) {
            let mut path = vec![s];
            let mut cur = s;
            while let Some((p, _)) = &parent[cur] {
                path.push(*p);
                cur = *p;
            }
            path.reverse();
            return Some((d, path));
        }
        let next: Vec<(usize, String, f64)> = if level == 0 {
            ctx.layered.ground.transitions_from(s).to_vec()
        } else {
            ctx.layered
                .neighbors(level, s)
                .iter()
                .map(|&b| (b, String::new(), 1.0))
                .collect()
        };
        for (dst, label, cost) in next {
            if settled[dst] || !inside(dst) || banned_edges.contains(&(s, dst)) {
                continue;
            }
            let nd = d + cost;
            let better = match dist[dst] {
                None => true,
                Some(old) => nd < old,
            };
            if better {
                dist[dst] = Some(nd);
                parent[dst] = Some((s, label));
                heap.push(Reverse((Cost(nd), dst)));
            }
        }
    }
    None
}

/// Up to `k` loopless shortest paths, ordered by (cost, state sequence).
#[allow(clippy::too_many_arguments)]
fn k_shortest(
    ctx: &mut SearchCtx,
    level: usize,
    start: usize,
    goals: &BTreeSet<usize>,
    corridor: Option<&BTreeSet<usize>>,
    k: usize,
) -> Vec<(f64, Vec<usize>)> {
    let mut found: Vec<(f64, Vec<usize>)> = Vec::new();
    let Some(first) =
        dijkstra(ctx, level, start, goals, corridor, &BTreeSet::new(), &BTreeSet::new())
    else {
        return found;
    };
    found.push(first);
    let mut candidates: Vec<(f64, Vec<usize>)> = Vec::new();
    while found.len() < k {
        let prev = found.last().expect("nonempty").1.clone();
        for i in 0..prev.len() - 1 {
            let spur = prev[i];
            let root = &prev[..=i];
            let mut banned_edges = BTreeSet::new();
            for (_, p) in found.iter() {
                if p.len() > i + 1 && p[..=i] == *root {
                    banned_edges.insert((p[i], p[i + 1]));
                }
            }
            let banned_nodes: BTreeSet<usize> = root[..i].iter().copied().collect();
            let Some((spur_cost, spur_path)) =
                dijkstra(ctx, level, spur, goals, corridor, &banned_nodes, &banned_edges)
            else {
                continue;
            };
            let root_cost = path_cost(ctx.layered, level, root);
            let mut path = root[..i].to_vec();
            path.extend(spur_path);
            let total = root_cost + spur_cost;
            if found.iter().all(|(_, p)| *p != path)
                && candidates.iter().all(|(_, p)| *p != path)
            {
                candidates.push((total, path));
            }
        }
        if candidates.is_empty() {
            break;
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        found.push(candidates.remove(0));
    }
    found
}

fn path_cost(layered: &LayeredSpace, level: usize, path: &[usize]) -> f64 {
    if level > 0 {
        return (path.len().saturating_sub(1)) as f64;
    }
    let mut total = 0.0;
    for w in path.windows(2) {
        let step = layered
            .ground
            .transitions_from(w[0])
            .iter()
            .filter(|(dst, _, _)| *dst == w[1])
            .map(|(_, _, c)| *c)
            .min_by(|a, b| a.total_cmp(b))
            .unwrap_or(f64::INFINITY);
        total += step;
    }
    total
}

/// Ground path from labeled reconstruction: re-derive the cheapest label for
/// each step (ties broken by label order via sorted adjacency).
fn relabel(ground: &GroundSpace, path: &[usize]) -> (Vec<String>, f64) {
    let mut actions = Vec::with_capacity(path.len().saturating_sub(1));
    let mut cost = 0.0;
    for w in path.windows(2) {
        let best = ground
            .transitions_from(w[0])
            .iter()
            .filter(|(dst, _, _)| *dst == w[1])
            .min_by(|a, b| a.2.total_cmp(&b.2).then_with(|| a.1.cmp(&b.1)))
            .expect("path edges exist in the ground space");
        actions.push(best.1.clone());
        cost += best.2;
    }
    (actions, cost)
}

// --- solving ---------------------------------------------------------------------

/// Plan from the will's problem region into its goal region through the
/// layered hierarchy. See the module docs for the refinement strategy.
pub fn solve(layered: &LayeredSpace, will: &Will) -> Result<Plan, PlanError> {
    solve_inner(layered, will, None)
}

/// As [`solve`], also recording one entry per search expansion.
pub fn solve_traced(
    layered: &LayeredSpace,
    will: &Will,
    trace: &mut Vec<TraceEntry>,
) -> Result<Plan, PlanError> {
    solve_inner(layered, will, Some(trace))
}

fn solve_inner(
    layered: &LayeredSpace,
    will: &Will,
    trace: Option<&mut Vec<TraceEntry>>,
) -> Result<Plan, PlanError> {
    if will.stage != WillStage::Purposeful
        || will.goal_region.is_empty()
        || will.problem_region.is_empty()
    {
        return Err(PlanError::NotPurposeful);
    }
    let start = *will.problem_region.iter().next().expect("nonempty");
    let goals = &will.goal_region;
    let top = layered.level_count() - 1;
    let mut ctx = SearchCtx {
        layered,
        expansions: vec![0; layered.level_count()],
        backtracks: 0,
        trace,
    };
    if goals.contains(&start) {
        return Ok(Plan {
            abstract_paths: Vec::new(),
            states: vec![start],
            actions: Vec::new(),
            cost: 0.0,
            stats: PlanStats {
                expansions: ctx.expansions,
                backtracks: 0,
                widenings: 0,
                flat_fallback: false,
            },
        });
    }
    if top > 0 {
        for widen in 0..=MAX_WIDENINGS {
            let mut chosen: Vec<(usize, Vec<usize>)> = Vec::new();
            if let Some(path) =
                refine(&mut ctx, top, None, start, goals, widen as usize, &mut chosen)
            {
                let (actions, cost) = relabel(&layered.ground, &path);
                return Ok(Plan {
                    abstract_paths: chosen,
                    states: path,
                    actions,
                    cost,
                    stats: PlanStats {
                        expansions: ctx.expansions,
                        backtracks: ctx.backtracks,
                        widenings: widen,
                        flat_fallback: false,
                    },
                });
            }
        }
    }
    // flat fallback keeps the solver complete
    let flat = dijkstra(&mut ctx, 0, start, goals, None, &BTreeSet::new(), &BTreeSet::new());
    match flat {
        Some((cost, path)) => {
            let (actions, cost2) = relabel(&layered.ground, &path);
            debug_assert!((cost - cost2).abs() < 1e-9);
            Ok(Plan {
                abstract_paths: Vec::new(),
                states: path,
                actions,
                cost,
                stats: PlanStats {
                    expansions: ctx.expansions,
                    backtracks: ctx.backtracks,
                    widenings: if top > 0 { MAX_WIDENINGS } else { 0 },
                    flat_fallback: top > 0,
                },
            })
        }
        None => Err(PlanError::Unsolvable),
    }
}

/// Search one level inside its corridor and refine each alternative path
/// downward until the ground level yields a concrete path.
fn refine(
    ctx: &mut SearchCtx,
    level: usize,
    corridor: Option<&BTreeSet<usize>>,
    start: usize,
    goals: &BTreeSet<usize>,
    widen: usize,
    chosen: &mut Vec<(usize, Vec<usize>)>,
) -> Option<Vec<usize>> {
    let start_here = ctx.layered.lift(start, level);
    let goals_here: BTreeSet<usize> =
        goals.iter().map(|&g| ctx.layered.lift(g, level)).collect();
    if level == 0 {
        return dijkstra(ctx, 0, start, goals, corridor, &BTreeSet::new(), &BTreeSet::new())
            .map(|(_, path)| path);
    }
    let paths = k_shortest(ctx, level, start_here, &goals_here, corridor, MAX_ALTERNATIVES);
    for (_, path) in paths {
        // corridor below = preimage of the path blocks, ring-widened
        let mut blocks: BTreeSet<usize> = path.iter().copied().collect();
        for _ in 0..widen {
            let ring: BTreeSet<usize> = blocks
                .iter()
                .flat_map(|&b| ctx.layered.neighbors(level, b).iter().copied())
                .collect();
            blocks.extend(ring);
        }
        let below: BTreeSet<usize> = (0..ctx.layered.level_size(level - 1))
            .filter(|&s| blocks.contains(&ctx.layered.maps[level - 1][s]))
            .collect();
        chosen.push((level, path.clone()));
        if let Some(found) = refine(ctx, level - 1, Some(&below), start, goals, widen, chosen) {
            return Some(found);
        }
        chosen.pop();
        ctx.backtracks += 1;
    }
    None
}

/// Check a plan against the raw space: connected, labels and costs real,
/// ending inside the goal region. Independent of the solver.
pub fn validate_plan(
    ground: &GroundSpace,
    plan: &Plan,
    start: usize,
    goal_region: &BTreeSet<usize>,
) -> Result<(), String> {
    if plan.states.is_empty() {
        return Err("plan has no states".into());
    }
    if plan.states[0] != start {
        return Err(format!("plan starts at {} not {}", plan.states[0], start));
    }
    if plan.actions.len() + 1 != plan.states.len() {
        return Err("action count must be state count minus one".into());
    }
    let mut cost = 0.0;
    for (i, action) in plan.actions.iter().enumerate() {
        let (src, dst) = (plan.states[i], plan.states[i + 1]);
        let Some(step) = ground
            .transitions_from(src)
            .iter()
            .find(|(d, label, _)| *d == dst && label == action)
        else {
            return Err(format!("no transition {src} -[{action}]-> {dst}"));
        };
        cost += step.2;
    }
    if (cost - plan.cost).abs() > 1e-9 {
        return Err(format!("plan cost {} but edges sum to {cost}", plan.cost));
    }
    let last = *plan.states.last().expect("nonempty");
    if !goal_region.contains(&last) {
        return Err(format!("plan ends at {last}, outside the goal region"));
    }
    Ok(())
}

/// Independent reachability oracle: cheapest cost from start to any goal,
/// ignoring the hierarchy entirely.
pub fn flat_best_cost(
    ground: &GroundSpace,
    start: usize,
    goals: &BTreeSet<usize>,
) -> Option<f64> {
    let layered = LayeredSpace {
        ground: ground.clone(),
        levels: Vec::new(),
        maps: Vec::new(),
    };
    let mut ctx = SearchCtx {
        layered: &layered,
        expansions: vec![0],
        backtracks: 0,
        trace: None,
    };
    dijkstra(&mut ctx, 0, start, goals, None, &BTreeSet::new(), &BTreeSet::new())
        .map(|(c, _)| c)
}

// --- designing -------------------------------------------------------------------

/// Backward design: sweep reversed transitions from the goal region, score
/// every state that can reach it (goal states included, at distance zero),
/// pick the argmax (ties to the lowest index), and plan forward from there.
pub fn design(
    layered: &LayeredSpace,
    goal_region: &BTreeSet<usize>,
    scorer: impl Fn(usize) -> Option<f64>,
) -> Result<(usize, Plan), PlanError> {
    if goal_region.is_empty() {
        return Err(PlanError::NotPurposeful);
    }
    let ground = &layered.ground;
    let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); ground.len()];
    for s in 0..ground.len() {
        for &(dst, _, _) in ground.transitions_from(s) {
            reverse[dst].push(s);
        }
    }
    let mut reach: BTreeSet<usize> = goal_region.clone();
    let mut queue: Vec<usize> = goal_region.iter().copied().collect();
    while let Some(s) = queue.pop() {
        for &p in &reverse[s] {
            if reach.insert(p) {
                queue.push(p);
            }
        }
    }
    let mut best: Option<(f64, usize)> = None;
    for &s in &reach {
        let Some(score) = scorer(s) else { continue };
        best = match best {
            None => Some((score, s)),
            Some((b, i)) => {
                if score > b {
                    Some((score, s))
                } else {
                    Some((b, i))
                }
            }
        };
    }
    let Some((_, chosen)) = best else {
        return Err(PlanError::NoReachableStart);
    };
    let will = Will::purposeful([chosen], goal_region.iter().copied());
    let plan = solve(layered, &will)?;
    Ok((chosen, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    const LINE3: &str = include_str!("../../../fixtures/line3.graph");
    const EMPTY8: &str = include_str!("../../../fixtures/empty8x8.grid");
    const WALL8: &str = include_str!("../../../fixtures/wall8x8.grid");

    fn solve_file(text: &str, levels: usize) -> (LayeredSpace, usize, BTreeSet<usize>, Result<Plan, PlanError>) {
        let file = parse_space(text).unwrap();
        let start = file.start.unwrap();
        let goal = BTreeSet::from([file.goal.unwrap()]);
        let coarsening = if file.space.grid_size().is_some() {
            Coarsening::Grid2x2
        } else {
            Coarsening::Explicit(vec![(0..file.space.len()).collect()])
        };
        let layered = build_hierarchy(file.space, levels, coarsening).unwrap();
        let will = Will::purposeful([start], goal.iter().copied());
        let plan = solve(&layered, &will);
        (layered, start, goal, plan)
    }

    #[test]
    fn grid_hierarchy_has_expected_level_sizes() {
        let file = parse_space(EMPTY8).unwrap();
        let layered = build_hierarchy(file.space, 3, Coarsening::Grid2x2).unwrap();
        assert_eq!(layered.level_count(), 3);
        assert_eq!(layered.level_size(0), 64);
        assert_eq!(layered.level_size(1), 16);
        assert_eq!(layered.level_size(2), 4);
    }

    #[test]
    fn empty_grid_plan_hits_manhattan_optimum() {
        let (layered, start, goal, plan) = solve_file(EMPTY8, 3);
        let plan = plan.unwrap();
        assert_eq!(plan.cost, 14.0);
        assert_eq!(plan.actions.len(), 14);
        validate_plan(&layered.ground, &plan, start, &goal).unwrap();
        assert!(!plan.stats.flat_fallback);
        assert_eq!(plan.stats.widenings, 0);
    }

    #[test]
    fn abstract_edges_match_brute_force_quotient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut blocked = BTreeSet::new();
        for y in 0..8usize {
            for x in 0..8usize {
                if (x, y) != (0, 0) && rng.random_range(0..100) < 20 {
                    blocked.insert((x, y));
                }
            }
        }
        let ground = GroundSpace::grid(8, 8, &blocked);
        let layered = build_hierarchy(ground.clone(), 2, Coarsening::Grid2x2).unwrap();
        let map = &layered.maps[0];
        let n_blocks = layered.level_size(1);
        let mut expect: BTreeSet<(usize, usize)> = BTreeSet::new();
        for s in 0..ground.len() {
            for &(dst, _, _) in ground.transitions_from(s) {
                if map[s] != map[dst] {
                    expect.insert((map[s], map[dst]));
                }
            }
        }
        let mut got = BTreeSet::new();
        for b in 0..n_blocks {
            for &n in layered.neighbors(1, b) {
                got.insert((b, n));
            }
        }
        assert_eq!(got, expect);
    }

    #[test]
    fn single_level_hierarchy_is_just_the_ground() {
        let file = parse_space(EMPTY8).unwrap();
        let layered = build_hierarchy(file.space, 1, Coarsening::Grid2x2).unwrap();
        assert_eq!(layered.level_count(), 1);
        let will = Will::purposeful([file.start.unwrap()], [file.goal.unwrap()]);
        let plan = solve(&layered, &will).unwrap();
        assert_eq!(plan.cost, 14.0);
        assert!(plan.abstract_paths.is_empty());
        assert!(!plan.stats.flat_fallback);
    }

    #[test]
    fn wall_gap_plan_passes_the_gap_inside_the_corridor() {
        let (layered, start, goal, plan) = solve_file(WALL8, 3);
        let plan = plan.unwrap();
        validate_plan(&layered.ground, &plan, start, &goal).unwrap();
        let gap = layered.ground.state("4,6").unwrap();
        assert!(plan.states.contains(&gap), "only route crosses the gap");
        // every ground state lies inside the successful corridor at each level
        for &(level, ref blocks) in &plan.abstract_paths {
            let blockset: BTreeSet<usize> = blocks.iter().copied().collect();
            for &s in &plan.states {
                assert!(blockset.contains(&layered.lift(s, level)));
            }
        }
        assert_eq!(plan.stats.widenings, 0);
    }

    #[test]
    fn start_in_goal_region_gives_empty_plan() {
        let file = parse_space(EMPTY8).unwrap();
        let start = file.start.unwrap();
        let layered = build_hierarchy(file.space, 3, Coarsening::Grid2x2).unwrap();
        let will = Will::purposeful([start], [start]);
        let plan = solve(&layered, &will).unwrap();
        assert!(plan.actions.is_empty());
        assert_eq!(plan.states, vec![start]);
        assert_eq!(plan.cost, 0.0);
    }

    #[test]
    fn disconnected_goal_is_unsolvable_matching_oracle() {
        // a full wall with no gap
        let mut blocked = BTreeSet::new();
        for y in 0..8 {
            blocked.insert((4usize, y));
        }
        let ground = GroundSpace::grid(8, 8, &blocked);
        let start = ground.state("0,0").unwrap();
        let goal = ground.state("7,7").unwrap();
        let goals = BTreeSet::from([goal]);
        assert!(flat_best_cost(&ground, start, &goals).is_none());
        let layered = build_hierarchy(ground, 3, Coarsening::Grid2x2).unwrap();
        let will = Will::purposeful([start], goals);
        assert_eq!(solve(&layered, &will).unwrap_err(), PlanError::Unsolvable);
    }

    #[test]
    fn random_grids_agree_with_flat_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut ratios = Vec::new();
        for _ in 0..30 {
            let mut blocked = BTreeSet::new();
            for y in 0..8usize {
                for x in 0..8usize {
                    if (x, y) != (0, 0) && (x, y) != (7, 7) && rng.random_range(0..100) < 20 {
                        blocked.insert((x, y));
                    }
                }
            }
            let ground = GroundSpace::grid(8, 8, &blocked);
            let start = ground.state("0,0").unwrap();
            let goal = ground.state("7,7").unwrap();
            let goals = BTreeSet::from([goal]);
            let oracle = flat_best_cost(&ground, start, &goals);
            let layered = build_hierarchy(ground.clone(), 3, Coarsening::Grid2x2).unwrap();
            let will = Will::purposeful([start], goals.iter().copied());
            match solve(&layered, &will) {
                Ok(plan) => {
                    let best = oracle.expect("solver found a plan, oracle must too");
                    validate_plan(&ground, &plan, start, &goals).unwrap();
                    ratios.push(plan.cost / best.max(1.0));
                }
                Err(PlanError::Unsolvable) => assert!(oracle.is_none()),
                Err(other) => panic!("unexpected error: {other}"),
            }
        }
        let mean: f64 = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(mean <= 1.5, "mean cost ratio {mean} exceeds 1.5");
    }

    #[test]
    fn solve_is_deterministic() {
        let (_, _, _, p1) = solve_file(WALL8, 3);
        let (_, _, _, p2) = solve_file(WALL8, 3);
        assert_eq!(p1.unwrap(), p2.unwrap());
    }

    #[test]
    fn refine_will_selects_argmax_outside_problem() {
        let ground = GroundSpace::grid(8, 8, &BTreeSet::new());
        // problem: the 2x2 corner around (0,0); scorer: Manhattan distance from it
        let coords = |s: usize| {
            let name = ground.name(s).to_string();
            let (x, y) = name.split_once(',').unwrap();
            (x.parse::<i64>().unwrap(), y.parse::<i64>().unwrap())
        };
        let will = refine_will(
            &ground,
            |s| {
                let (x, y) = coords(s);
                x < 2 && y < 2
            },
            |s| {
                let (x, y) = coords(s);
                Some((x + y) as f64)
            },
        )
        .unwrap();
        assert_eq!(will.problem_region.len(), 4);
        let far = ground.state("7,7").unwrap();
        assert_eq!(will.goal_region, BTreeSet::from([far]));
        assert_eq!(will.stage, WillStage::Purposeful);
    }

    #[test]
    fn refine_will_edge_cases() {
        let ground = GroundSpace::grid(2, 2, &BTreeSet::new());
        assert_eq!(
            refine_will(&ground, |_| true, |_| Some(1.0)).unwrap_err(),
            PlanError::NoGoalCandidates
        );
        let will = refine_will(&ground, |s| s == 0, |_| Some(1.0)).unwrap();
        assert_eq!(will.goal_region.len(), 3);
        assert_eq!(
            refine_will(&ground, |s| s == 0, |_| None).unwrap_err(),
            PlanError::NoGoalCandidates
        );
    }

    #[test]
    fn line_graph_design_picks_the_far_start() {
        let file = parse_space(LINE3).unwrap();
        let layered = build_hierarchy(
            file.space,
            2,
            Coarsening::Explicit(vec![vec![0], vec![1], vec![2]]),
        )
        .unwrap();
        let goal = BTreeSet::from([file.goal.unwrap()]);
        let (start, plan) = design(&layered, &goal, |s| Some(-(s as f64))).unwrap();
        assert_eq!(start, file.start.unwrap());
        assert_eq!(plan.states, vec![0, 1, 2]);
        assert_eq!(plan.actions, vec!["s1->s2".to_string(), "s2->s3".to_string()]);
        validate_plan(&layered.ground, &plan, start, &goal).unwrap();
    }

    #[test]
    fn design_scorer_maximal_at_goal_gives_empty_plan() {
        let file = parse_space(LINE3).unwrap();
        let goal_state = file.goal.unwrap();
        // non-grid spaces reject grid coarsening
        assert!(matches!(
            build_hierarchy(file.space.clone(), 2, Coarsening::Grid2x2),
            Err(PlanError::InvalidPartition(_))
        ));
        let layered = build_hierarchy(file.space, 1, Coarsening::Explicit(vec![])).unwrap();
        let goal = BTreeSet::from([goal_state]);
        let (start, plan) = design(&layered, &goal, |s| Some(s as f64)).unwrap();
        assert_eq!(start, goal_state);
        assert!(plan.actions.is_empty());
    }

    #[test]
    fn design_matches_reversed_bfs_argmax_on_grids() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let mut blocked = BTreeSet::new();
            for y in 0..8usize {
                for x in 0..8usize {
                    if (x, y) != (7, 7) && rng.random_range(0..100) < 20 {
                        blocked.insert((x, y));
                    }
                }
            }
            let ground = GroundSpace::grid(8, 8, &blocked);
            let goal = ground.state("7,7").unwrap();
            let goals = BTreeSet::from([goal]);
            // oracle: reversed BFS reachability, then argmax by state index score
            let mut reach = BTreeSet::from([goal]);
            let mut queue = vec![goal];
            while let Some(s) = queue.pop() {
                for p in 0..ground.len() {
                    if ground.transitions_from(p).iter().any(|(d, _, _)| *d == s)
                        && reach.insert(p)
                    {
                        queue.push(p);
                    }
                }
            }
            // score = state index, so the argmax is just the largest reachable index
            let expect = reach.iter().copied().max();
            let layered = build_hierarchy(ground.clone(), 3, Coarsening::Grid2x2).unwrap();
            let (start, plan) = design(&layered, &goals, |s| Some(s as f64)).unwrap();
            assert_eq!(Some(start), expect);
            validate_plan(&ground, &plan, start, &goals).unwrap();
        }
    }

    #[test]
    fn explicit_partition_validation() {
        let ground = GroundSpace::grid(2, 2, &BTreeSet::new());
        let bad = build_hierarchy(
            ground.clone(),
            2,
            Coarsening::Explicit(vec![vec![0, 1], vec![1, 2, 3]]),
        );
        assert!(matches!(bad, Err(PlanError::InvalidPartition(_))));
        let missing = build_hierarchy(ground.clone(), 2, Coarsening::Explicit(vec![vec![0, 1]]));
        assert!(matches!(missing, Err(PlanError::InvalidPartition(_))));
        let ok = build_hierarchy(
            ground,
            2,
            Coarsening::Explicit(vec![vec![0, 1], vec![2, 3]]),
        )
        .unwrap();
        assert_eq!(ok.level_size(1), 2);
    }

    #[test]
    fn trace_records_levels_and_states() {
        let file = parse_space(EMPTY8).unwrap();
        let layered = build_hierarchy(file.space, 3, Coarsening::Grid2x2).unwrap();
        let will = Will::purposeful([file.start.unwrap()], [file.goal.unwrap()]);
        let mut trace = Vec::new();
        let plan = solve_traced(&layered, &will, &mut trace).unwrap();
        assert!(!trace.is_empty());
        assert!(trace.iter().any(|t| t.level == 2));
        assert!(trace.iter().any(|t| t.level == 0));
        let settles: u64 = plan.stats.expansions.iter().sum();
        assert_eq!(trace.len() as u64, settles);
    }

    #[test]
    fn parse_space_rejects_malformed_lines() {
        assert!(matches!(
            parse_space("space grid 8\n"),
            Err(PlanError::ParseError { line: 1, .. })
        ));
        assert!(matches!(
            parse_space("space grid 4 4\nblocked 9\n"),
            Err(PlanError::ParseError { line: 2, .. })
        ));
        assert!(matches!(
            parse_space("space grid 4 4\nstart 9,9\n"),
            Err(PlanError::ParseError { line: 2, .. })
        ));
        assert!(matches!(
            parse_space("edge a b 1\n"),
            Err(PlanError::ParseError { line: 1, .. })
        ));
        assert!(matches!(
            parse_space("space graph\nedge a b -2\n"),
            Err(PlanError::ParseError { line: 2, .. })
        ));
    }
}
