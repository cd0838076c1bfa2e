//! Exact solver for the assignment model.
//!
//! The model separates into connected components of its constraint graph
//! (hard CL, soft CL and soft ML edges over nodes); components are solved
//! independently and in parallel. Each component is solved by best-first
//! branch-and-bound over per-node cluster choices:
//!
//! - nodes are fixed in descending order of regret `s_i * (d_second - d_best)`;
//! - fixing a node adds soft penalties to the candidate costs of its unfixed
//!   neighbors and removes its cluster from the candidates of hard
//!   cannot-link neighbors;
//! - the bound of a partial assignment is the cost fixed so far plus, for
//!   every unfixed node, its cheapest admissible candidate including the
//!   penalties already implied by fixed neighbors. Penalties are
//!   non-negative, so this never exceeds the best completion;
//! - the search plunges depth-first from each popped frontier entry, pushing
//!   the siblings it passes over, so complete assignments are found early.
//!
//! A greedy construction followed by single-node moves provides the first
//! incumbent.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::rc::Rc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AssignmentModel;
use crate::union_find::UnionFind;

const GREEDY_RESTARTS: usize = 20;
const LOCAL_SEARCH_PASSES: usize = 50;
const TIME_CHECK_INTERVAL: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Optimal,
    FeasibleTimeLimit,
    Infeasible,
    /// The time limit expired before any feasible assignment was found.
    TimeLimitNoSolution,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub nodes_explored: u64,
    pub elapsed_s: f64,
    pub components: usize,
    pub timed_out_components: usize,
    pub incumbent_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    /// Cluster per node; empty unless a feasible assignment was found.
    pub assignment: Vec<usize>,
    pub objective: f64,
    pub lower_bound: f64,
    pub status: SolverStatus,
    pub stats: SolverStats,
}

impl SolverResult {
    pub fn has_solution(&self) -> bool {
        matches!(
            self.status,
            SolverStatus::Optimal | SolverStatus::FeasibleTimeLimit
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub time_limit_s: f64,
    /// Relative gap at which a component counts as solved.
    pub gap_tolerance: f64,
    /// Seed for the randomized greedy restarts.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            time_limit_s: 30.0,
            gap_tolerance: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EdgeKind {
    Cl,
    Scl,
    Sml,
}

/// One connected component with local node numbering.
#[derive(Debug, Clone)]
struct SubProblem {
    nodes: Vec<usize>,
    clusters: Vec<Vec<usize>>,
    /// `s_i * d_il` per candidate slot.
    cost: Vec<Vec<f64>>,
    /// `(neighbor, kind, P * w)`; hard edges carry weight 0.
    adj: Vec<Vec<(usize, EdgeKind, f64)>>,
}

impl SubProblem {
    fn len(&self) -> usize {
        self.nodes.len()
    }

    fn slot_of(&self, node: usize, cluster: usize) -> Option<usize> {
        self.clusters[node].iter().position(|&l| l == cluster)
    }

    /// Split a model into components of its edge graph, each listing its
    /// nodes in ascending order.
    fn components(model: &AssignmentModel) -> Vec<SubProblem> {
        let n = model.node_count();
        let mut uf = UnionFind::new(n);
        let edges = model
            .cl_edges
            .iter()
            .map(|&p| (p, EdgeKind::Cl, 0.0))
            .chain(
                model
                    .scl_edges
                    .iter()
                    .map(|&(p, w)| (p, EdgeKind::Scl, model.penalty * w)),
            )
            .chain(
                model
                    .sml_edges
                    .iter()
                    .map(|&(p, w)| (p, EdgeKind::Sml, model.penalty * w)),
            );
        let edges: Vec<_> = edges.collect();
        for &((i, j), _, _) in &edges {
            uf.union(i, j);
        }
        let mut comp_of_root = vec![usize::MAX; n];
        let mut local = vec![0usize; n];
        let mut subs: Vec<SubProblem> = Vec::new();
        for i in 0..n {
            let r = uf.find(i);
            if comp_of_root[r] == usize::MAX {
                comp_of_root[r] = subs.len();
                subs.push(SubProblem {
                    nodes: Vec::new(),
                    clusters: Vec::new(),
                    cost: Vec::new(),
                    adj: Vec::new(),
                });
            }
            let sub = &mut subs[comp_of_root[r]];
            local[i] = sub.nodes.len();
            sub.nodes.push(i);
            sub.clusters.push(model.candidates[i].clone());
            sub.cost.push(
                model.distances[i]
                    .iter()
                    .map(|d| model.node_weight[i] * d)
                    .collect(),
            );
            sub.adj.push(Vec::new());
        }
        for ((i, j), kind, w) in edges {
            let sub = &mut subs[comp_of_root[uf.find(i)]];
            sub.adj[local[i]].push((local[j], kind, w));
            sub.adj[local[j]].push((local[i], kind, w));
        }
        subs
    }

    /// Whole model as a single problem (for the standalone greedy).
    fn whole(model: &AssignmentModel) -> SubProblem {
        let mut subs = Self::components(model);
        if subs.len() == 1 {
            return subs.pop().unwrap();
        }
        let n = model.node_count();
        let mut sub = SubProblem {
            nodes: (0..n).collect(),
            clusters: model.candidates.clone(),
            cost: (0..n)
                .map(|i| {
                    model.distances[i]
                        .iter()
                        .map(|d| model.node_weight[i] * d)
                        .collect()
                })
                .collect(),
            adj: vec![Vec::new(); n],
        };
        for s in subs {
            for (li, adj) in s.adj.into_iter().enumerate() {
                let gi = s.nodes[li];
                sub.adj[gi] = adj
                    .into_iter()
                    .map(|(lj, k, w)| (s.nodes[lj], k, w))
                    .collect();
            }
        }
        sub
    }

    /// Static branching order: descending regret, single-candidate nodes
    /// first, ties to the lower node.
    fn regret_order(&self) -> Vec<usize> {
        let regret: Vec<f64> = self
            .cost
            .iter()
            .map(|c| {
                let (mut a, mut b) = (f64::INFINITY, f64::INFINITY);
                for &v in c {
                    if v < a {
                        b = a;
                        a = v;
                    } else if v < b {
                        b = v;
                    }
                }
                b - a
            })
            .collect();
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&x, &y| regret[y].total_cmp(&regret[x]).then(x.cmp(&y)));
        order
    }
}

/// Partial assignment with propagated neighbor costs.
#[derive(Debug, Clone)]
struct State {
    slot: Vec<Option<usize>>,
    extra: Vec<Vec<f64>>,
    banned: Vec<Vec<bool>>,
    best_open: Vec<f64>,
    fixed_cost: f64,
    open_sum: f64,
    dead: usize,
}

impl State {
    fn new(p: &SubProblem) -> Self {
        let best_open: Vec<f64> = p
            .cost
            .iter()
            .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let dead = best_open.iter().filter(|v| v.is_infinite()).count();
        Self {
            slot: vec![None; p.len()],
            extra: p.cost.iter().map(|c| vec![0.0; c.len()]).collect(),
            banned: p.cost.iter().map(|c| vec![false; c.len()]).collect(),
            open_sum: best_open.iter().filter(|v| v.is_finite()).sum(),
            best_open,
            fixed_cost: 0.0,
            dead,
        }
    }

    fn bound(&self) -> f64 {
        if self.dead > 0 {
            f64::INFINITY
        } else {
            self.fixed_cost + self.open_sum
        }
    }

    fn slot_cost(&self, p: &SubProblem, i: usize, s: usize) -> f64 {
        if self.banned[i][s] {
            f64::INFINITY
        } else {
            p.cost[i][s] + self.extra[i][s]
        }
    }

    fn refresh(&mut self, p: &SubProblem, j: usize) {
        let old = self.best_open[j];
        let new = (0..p.cost[j].len())
            .map(|s| self.slot_cost(p, j, s))
            .fold(f64::INFINITY, f64::min);
        match (old.is_finite(), new.is_finite()) {
            (true, true) => self.open_sum += new - old,
            (true, false) => {
                self.open_sum -= old;
                self.dead += 1;
            }
            (false, true) => {
                self.open_sum += new;
                self.dead -= 1;
            }
            (false, false) => {}
        }
        self.best_open[j] = new;
    }

    fn fix(&mut self, p: &SubProblem, i: usize, s: usize) {
        debug_assert!(self.slot[i].is_none());
        let c = self.slot_cost(p, i, s);
        debug_assert!(c.is_finite());
        self.fixed_cost += c;
        let old = self.best_open[i];
        if old.is_finite() {
            self.open_sum -= old;
        } else {
            self.dead -= 1;
        }
        self.best_open[i] = 0.0;
        self.slot[i] = Some(s);
        let cluster = p.clusters[i][s];
        for &(j, kind, w) in &p.adj[i] {
            if self.slot[j].is_some() {
                continue;
            }
            match kind {
                EdgeKind::Cl => {
                    if let Some(t) = p.slot_of(j, cluster) {
                        self.banned[j][t] = true;
                    }
                }
                EdgeKind::Scl => {
                    if let Some(t) = p.slot_of(j, cluster) {
                        self.extra[j][t] += w;
                    }
                }
                EdgeKind::Sml => {
                    for (t, &l) in p.clusters[j].iter().enumerate() {
                        if l != cluster {
                            self.extra[j][t] += w;
                        }
                    }
                }
            }
            self.refresh(p, j);
        }
        // open_sum drifts with repeated +/-; re-anchor cheaply when all fixed
        if self.slot.iter().all(Option::is_some) {
            self.open_sum = 0.0;
        }
    }

    fn cheapest_slot(&self, p: &SubProblem, i: usize) -> Option<usize> {
        (0..p.cost[i].len())
            .map(|s| (self.slot_cost(p, i, s), s))
            .filter(|(c, _)| c.is_finite())
            .min_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then(p.clusters[i][a.1].cmp(&p.clusters[i][b.1]))
            })
            .map(|(_, s)| s)
    }
}

/// Objective of a complete slot assignment of a subproblem.
fn evaluate(p: &SubProblem, slots: &[usize]) -> Option<f64> {
    let mut total = 0.0;
    for i in 0..p.len() {
        total += p.cost[i][slots[i]];
        let li = p.clusters[i][slots[i]];
        for &(j, kind, w) in &p.adj[i] {
            if j < i {
                continue;
            }
            let same = li == p.clusters[j][slots[j]];
            match kind {
                EdgeKind::Cl if same => return None,
                EdgeKind::Scl if same => total += w,
                EdgeKind::Sml if !same => total += w,
                _ => {}
            }
        }
    }
    Some(total)
}

fn greedy_once(p: &SubProblem, order: &[usize]) -> Option<Vec<usize>> {
    let mut st = State::new(p);
    for &i in order {
        let s = st.cheapest_slot(p, i)?;
        st.fix(p, i, s);
    }
    Some(st.slot.into_iter().map(Option::unwrap).collect())
}

fn greedy(p: &SubProblem, seed: u64) -> Option<Vec<usize>> {
    let mut order = p.regret_order();
    if let Some(sol) = greedy_once(p, &order) {
        return Some(sol);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..GREEDY_RESTARTS {
        order.shuffle(&mut rng);
        if let Some(sol) = greedy_once(p, &order) {
            return Some(sol);
        }
    }
    None
}

/// Repeated best single-node moves until no move improves.
fn local_search(p: &SubProblem, slots: &mut [usize]) {
    for _ in 0..LOCAL_SEARCH_PASSES {
        let mut improved = false;
        for i in 0..p.len() {
            let current = slots[i];
            let mut best = (f64::INFINITY, current);
            for s in 0..p.cost[i].len() {
                let l = p.clusters[i][s];
                let mut c = p.cost[i][s];
                for &(j, kind, w) in &p.adj[i] {
                    let same = l == p.clusters[j][slots[j]];
                    match kind {
                        EdgeKind::Cl if same => c = f64::INFINITY,
                        EdgeKind::Scl if same => c += w,
                        EdgeKind::Sml if !same => c += w,
                        _ => {}
                    }
                }
                if s == current {
                    // compare against the current slot's exact cost
                    if c <= best.0 {
                        best = (c, s);
                    }
                } else if c < best.0 {
                    best = (c, s);
                }
            }
            let current_cost = {
                let l = p.clusters[i][current];
                let mut c = p.cost[i][current];
                for &(j, kind, w) in &p.adj[i] {
                    let same = l == p.clusters[j][slots[j]];
                    match kind {
                        EdgeKind::Scl if same => c += w,
                        EdgeKind::Sml if !same => c += w,
                        _ => {}
                    }
                }
                c
            };
            if best.1 != current && best.0 < current_cost - 1e-12 * current_cost.abs().max(1.0) {
                slots[i] = best.1;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
}

struct PathNode {
    parent: Option<Rc<PathNode>>,
    slot: usize,
}

struct Frontier {
    bound: f64,
    seq: u64,
    depth: usize,
    path: Option<Rc<PathNode>>,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Frontier {}
impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Frontier {
    // reversed: BinaryHeap pops the smallest bound, then the oldest entry
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone)]
struct SubResult {
    slots: Option<Vec<usize>>,
    lower_bound: f64,
    status: SolverStatus,
    nodes: u64,
    incumbent_trace: Vec<f64>,
}

fn within_gap(bound: f64, incumbent: f64, gap: f64) -> bool {
    bound >= incumbent - gap * incumbent.abs()
}

fn branch_and_bound(p: &SubProblem, deadline: Instant, gap: f64, seed: u64) -> SubResult {
    let n = p.len();
    if n == 1 && p.adj[0].is_empty() {
        let st = State::new(p);
        return match st.cheapest_slot(p, 0) {
            Some(s) => SubResult {
                lower_bound: p.cost[0][s],
                slots: Some(vec![s]),
                status: SolverStatus::Optimal,
                nodes: 1,
                incumbent_trace: vec![p.cost[0][s]],
            },
            None => SubResult {
                slots: None,
                lower_bound: f64::INFINITY,
                status: SolverStatus::Infeasible,
                nodes: 1,
                incumbent_trace: vec![],
            },
        };
    }

    let mut incumbent: Option<Vec<usize>> = None;
    let mut best = f64::INFINITY;
    let mut trace = Vec::new();
    if let Some(mut g) = greedy(p, seed) {
        local_search(p, &mut g);
        best = evaluate(p, &g).expect("greedy keeps hard constraints");
        trace.push(best);
        incumbent = Some(g);
    }

    let order = p.regret_order();
    let root = State::new(p);
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Frontier {
        bound: root.bound(),
        seq,
        depth: 0,
        path: None,
    });
    let mut nodes = 0u64;
    let mut timed_out = false;

    'outer: while let Some(entry) = heap.pop() {
        if entry.bound.is_infinite() || within_gap(entry.bound, best, gap) {
            // every remaining entry is at least as bad
            heap.clear();
            break;
        }
        // rebuild the partial assignment
        let mut slots_rev = Vec::with_capacity(entry.depth);
        let mut cur = entry.path.clone();
        while let Some(node) = cur {
            slots_rev.push(node.slot);
            cur = node.parent.clone();
        }
        let mut st = root.clone();
        for (depth, &s) in slots_rev.iter().rev().enumerate() {
            st.fix(p, order[depth], s);
        }
        let mut depth = entry.depth;
        let mut path = entry.path;

        loop {
            nodes += 1;
            if nodes % TIME_CHECK_INTERVAL == 0 && Instant::now() >= deadline {
                timed_out = true;
                heap.push(Frontier {
                    bound: st.bound(),
                    seq,
                    depth,
                    path,
                });
                break 'outer;
            }
            let bound = st.bound();
            if bound.is_infinite() || within_gap(bound, best, gap) {
                break;
            }
            if depth == n {
                let slots: Vec<usize> = st.slot.iter().map(|s| s.unwrap()).collect();
                let value = evaluate(p, &slots).expect("search keeps hard constraints");
                if value < best {
                    best = value;
                    trace.push(value);
                    incumbent = Some(slots);
                }
                break;
            }
            let i = order[depth];
            let rest = bound - st.best_open[i];
            let mut children: Vec<(f64, usize)> = (0..p.cost[i].len())
                .map(|s| (st.slot_cost(p, i, s), s))
                .filter(|(c, _)| c.is_finite())
                .map(|(c, s)| (rest + c, s))
                .collect();
            children.sort_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then(p.clusters[i][a.1].cmp(&p.clusters[i][b.1]))
            });
            let Some(&(_, first)) = children.first() else {
                break;
            };
            for &(child_bound, s) in &children[1..] {
                if !within_gap(child_bound, best, gap) {
                    seq += 1;
                    heap.push(Frontier {
                        bound: child_bound,
                        seq,
                        depth: depth + 1,
                        path: Some(Rc::new(PathNode {
                            parent: path.clone(),
                            slot: s,
                        })),
                    });
                }
            }
            st.fix(p, i, first);
            path = Some(Rc::new(PathNode {
                parent: path,
                slot: first,
            }));
            depth += 1;
        }
    }

    let frontier_bound = heap.peek().map_or(f64::INFINITY, |e| e.bound);
    let lower_bound = frontier_bound.min(best);
    let status = match (&incumbent, timed_out) {
        (Some(_), false) => SolverStatus::Optimal,
        (Some(_), true) => SolverStatus::FeasibleTimeLimit,
        (None, false) => SolverStatus::Infeasible,
        (None, true) => SolverStatus::TimeLimitNoSolution,
    };
    SubResult {
        slots: incumbent,
        lower_bound,
        status,
        nodes,
        incumbent_trace: trace,
    }
}

/// Greedy construction over the whole model. Returns `Infeasible` when every
/// restart blocks on a node with no admissible cluster.
pub fn greedy_incumbent(model: &AssignmentModel, seed: u64) -> SolverResult {
    let start = Instant::now();
    let p = SubProblem::whole(model);
    let stats = |nodes| SolverStats {
        nodes_explored: nodes,
        elapsed_s: start.elapsed().as_secs_f64(),
        components: 1,
        timed_out_components: 0,
        incumbent_updates: 0,
    };
    match greedy(&p, seed) {
        Some(slots) => {
            let assignment: Vec<usize> = slots
                .iter()
                .enumerate()
                .map(|(i, &s)| p.clusters[i][s])
                .collect();
            let objective = model
                .objective(&assignment)
                .expect("greedy keeps hard constraints");
            SolverResult {
                assignment,
                objective,
                lower_bound: f64::NEG_INFINITY,
                status: SolverStatus::FeasibleTimeLimit,
                stats: stats(p.len() as u64),
            }
        }
        None => SolverResult {
            assignment: Vec::new(),
            objective: f64::INFINITY,
            lower_bound: f64::INFINITY,
            status: SolverStatus::Infeasible,
            stats: stats(0),
        },
    }
}

/// Solve the model with the built-in branch-and-bound.
pub fn solve(model: &AssignmentModel, options: &SolverOptions) -> SolverResult {
    solve_traced(model, options).0
}

fn solve_traced(model: &AssignmentModel, options: &SolverOptions) -> (SolverResult, Vec<Vec<f64>>) {
    let start = Instant::now();
    let deadline = start + Duration::from_secs_f64(options.time_limit_s.max(0.0));
    let subs = SubProblem::components(model);
    let gap = options.gap_tolerance;
    let results: Vec<SubResult> = subs
        .par_iter()
        .enumerate()
        .map(|(c, p)| branch_and_bound(p, deadline, gap, options.seed.wrapping_add(c as u64)))
        .collect();

    let mut stats = SolverStats {
        components: subs.len(),
        ..SolverStats::default()
    };
    let mut status = SolverStatus::Optimal;
    let mut assignment = vec![usize::MAX; model.node_count()];
    let mut lower_bound = model.constant_term();
    let mut traces = Vec::with_capacity(results.len());
    for (p, r) in subs.iter().zip(results) {
        stats.nodes_explored += r.nodes;
        stats.incumbent_updates += r.incumbent_trace.len() as u64;
        lower_bound += r.lower_bound;
        status = match (status, r.status) {
            (SolverStatus::Infeasible, _) | (_, SolverStatus::Infeasible) => {
                SolverStatus::Infeasible
            }
            (SolverStatus::TimeLimitNoSolution, _) | (_, SolverStatus::TimeLimitNoSolution) => {
                SolverStatus::TimeLimitNoSolution
            }
            (SolverStatus::FeasibleTimeLimit, _) | (_, SolverStatus::FeasibleTimeLimit) => {
                SolverStatus::FeasibleTimeLimit
            }
            _ => SolverStatus::Optimal,
        };
        if r.status == SolverStatus::FeasibleTimeLimit
            || r.status == SolverStatus::TimeLimitNoSolution
        {
            stats.timed_out_components += 1;
        }
        if let Some(slots) = r.slots {
            for (li, s) in slots.into_iter().enumerate() {
                assignment[p.nodes[li]] = p.clusters[li][s];
            }
        }
        traces.push(r.incumbent_trace);
    }
    stats.elapsed_s = start.elapsed().as_secs_f64();
    let result = match status {
        SolverStatus::Optimal | SolverStatus::FeasibleTimeLimit => {
            let objective = model
                .objective(&assignment)
                .expect("solver keeps hard constraints");
            SolverResult {
                assignment,
                objective,
                lower_bound: lower_bound.min(objective),
                status,
                stats,
            }
        }
        _ => SolverResult {
            assignment: Vec::new(),
            objective: f64::INFINITY,
            lower_bound: if status == SolverStatus::Infeasible {
                f64::INFINITY
            } else {
                lower_bound
            },
            status,
            stats,
        },
    };
    (result, traces)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("solver backend {0:?} is unavailable")]
    BackendUnavailable(String),
    #[error("solver backend returned an infeasible assignment: {0}")]
    BackendReturnedInfeasibleAssignment(String),
    #[error("solver backend failed: {0}")]
    Failed(String),
}

/// Variable values and status reported by an external solver.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendSolution {
    pub values: Vec<(String, f64)>,
    pub status: SolverStatus,
}

/// An external MILP solver that consumes the LP text export.
pub trait AssignmentBackend: Send + Sync {
    fn available(&self) -> bool {
        true
    }

    fn solve_lp(&self, lp: &str, options: &SolverOptions) -> Result<BackendSolution, BackendError>;
}

/// Routes assignment solves to the built-in solver or an attached backend.
#[derive(Default)]
pub struct Solver {
    backend: Option<(String, Box<dyn AssignmentBackend>)>,
}

impl std::fmt::Debug for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Solver")
            .field("backend", &self.backend_name())
            .finish()
    }
}

pub const BUILTIN_BACKEND: &str = "builtin";

impl Solver {
    pub fn builtin() -> Self {
        Self::default()
    }

    pub fn backend_name(&self) -> &str {
        self.backend
            .as_ref()
            .map_or(BUILTIN_BACKEND, |b| b.0.as_str())
    }

    /// Route subsequent solves to `backend`. The name `builtin` restores the
    /// built-in solver and ignores the adapter.
    pub fn attach_backend(
        &mut self,
        name: &str,
        backend: Box<dyn AssignmentBackend>,
    ) -> Result<(), BackendError> {
        if name == BUILTIN_BACKEND {
            self.backend = None;
            return Ok(());
        }
        if !backend.available() {
            return Err(BackendError::BackendUnavailable(name.into()));
        }
        self.backend = Some((name.into(), backend));
        Ok(())
    }

    pub fn solve(
        &self,
        model: &AssignmentModel,
        options: &SolverOptions,
    ) -> Result<SolverResult, BackendError> {
        let Some((_, backend)) = &self.backend else {
            return Ok(solve(model, options));
        };
        let start = Instant::now();
        let out = backend.solve_lp(&model.to_lp(), options)?;
        let stats = SolverStats {
            elapsed_s: start.elapsed().as_secs_f64(),
            components: 1,
            ..SolverStats::default()
        };
        if matches!(
            out.status,
            SolverStatus::Infeasible | SolverStatus::TimeLimitNoSolution
        ) {
            return Ok(SolverResult {
                assignment: Vec::new(),
                objective: f64::INFINITY,
                lower_bound: f64::INFINITY,
                status: out.status,
                stats,
            });
        }
        let assignment = model
            .assignment_from_values(out.values.iter().map(|(n, v)| (n.as_str(), *v)))
            .map_err(BackendError::BackendReturnedInfeasibleAssignment)?;
        let objective = model.objective(&assignment).ok_or_else(|| {
            BackendError::BackendReturnedInfeasibleAssignment(
                "assignment violates a hard constraint or candidate set".into(),
            )
        })?;
        Ok(SolverResult {
            assignment,
            objective,
            lower_bound: if out.status == SolverStatus::Optimal {
                objective
            } else {
                f64::NEG_INFINITY
            },
            status: out.status,
            stats,
        })
    }
}

/// Backend that runs an external command. `{lp}` and `{sol}` in the
/// arguments are replaced by the model file and the solution file paths.
/// The solution file is read as whitespace-separated `name value` lines;
/// lines that do not parse are ignored. A file containing the word
/// `infeasible` reports infeasibility.
#[derive(Debug, Clone)]
pub struct CommandBackend {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandBackend {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    /// Split a command line on whitespace.
    pub fn parse(command: &str) -> Option<Self> {
        let mut parts = command.split_whitespace().map(String::from);
        let program = parts.next()?;
        Some(Self::new(program, parts.collect()))
    }
}

fn on_path(program: &str) -> bool {
    let p = std::path::Path::new(program);
    if p.components().count() > 1 {
        return p.is_file();
    }
    std::env::var_os("PATH")
        .is_some_and(|paths| std::env::split_paths(&paths).any(|dir| dir.join(program).is_file()))
}

impl AssignmentBackend for CommandBackend {
    fn available(&self) -> bool {
        on_path(&self.program)
    }

    fn solve_lp(
        &self,
        lp: &str,
        _options: &SolverOptions,
    ) -> Result<BackendSolution, BackendError> {
        let dir = std::env::temp_dir().join(format!(
            "pccc-backend-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::create_dir_all(&dir).map_err(|e| BackendError::Failed(e.to_string()))?;
        let lp_path = dir.join("model.lp");
        let sol_path = dir.join("model.sol");
        std::fs::write(&lp_path, lp).map_err(|e| BackendError::Failed(e.to_string()))?;
        let _ = std::fs::remove_file(&sol_path);
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                a.replace("{lp}", &lp_path.display().to_string())
                    .replace("{sol}", &sol_path.display().to_string())
            })
            .collect();
        let status = std::process::Command::new(&self.program)
            .args(&args)
            .stdout(std::process::Stdio::null())
            .status()
            .map_err(|_| BackendError::BackendUnavailable(self.program.clone()))?;
        if !status.success() {
            return Err(BackendError::Failed(format!(
                "{} exited with {status}",
                self.program
            )));
        }
        let text =
            std::fs::read_to_string(&sol_path).map_err(|e| BackendError::Failed(e.to_string()))?;
        if text.to_ascii_lowercase().contains("infeasible") {
            return Ok(BackendSolution {
                values: Vec::new(),
                status: SolverStatus::Infeasible,
            });
        }
        let values = text
            .lines()
            .filter_map(|line| {
                let mut it = line.split_whitespace();
                let name = it.next()?;
                let value = it.next()?.parse::<f64>().ok()?;
                Some((name.to_string(), value))
            })
            .collect();
        Ok(BackendSolution {
            values,
            status: SolverStatus::Optimal,
        })
    }
}
