//! The outer clustering loop.
//!
//! Each repetition starts from its own seed and runs:
//!
//! 1. initialization of `k` centers on contracted nodes;
//! 2. a descent that alternates exact assignment and centroid updates until
//!    the objective stops decreasing, repairing empty clusters on the way;
//! 3. cluster repositioning: the lowest-ranked center jumps onto the
//!    highest-ranked one and the descent restarts, up to a budget;
//! 4. in the reduced model, dynamic enlargement of the candidate sets of
//!    critical nodes, followed by another descent, until enlargement no
//!    longer improves the best solution.
//!
//! The best labeling over all repetitions is mapped back to the original
//! objects.

use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::assign_solver::{BackendError, Solver, SolverOptions, SolverStatus};
use crate::geometry::{squared_distance, weighted_centroid, CenterSet};
use crate::instance_io::{ConstraintSet, Dataset, InitMethod, InstanceError, QSetting, RunConfig};
use crate::metrics::{count_violations, inertia};
use crate::model::{
    assemble_model, build_candidate_sets_per_node, build_model, minimum_feasible_q, ModelError,
};
use crate::preprocess::{preprocess, ContractedGraph, HardConflictError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] InstanceError),
    #[error(transparent)]
    HardConflict(#[from] HardConflictError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("the assignment model has no feasible solution (iteration {iteration})")]
    InfeasibleModel { iteration: usize },
    #[error("time limit reached before a feasible solution was found")]
    TimeLimitNoSolution,
}

impl EngineError {
    /// Short status string used in reports.
    pub fn status(&self) -> &'static str {
        match self {
            Self::Config(_) => "invalid_input",
            Self::HardConflict(_) => "hard_conflict",
            Self::Model(_) => "model_error",
            Self::Backend(_) => "backend_error",
            Self::InfeasibleModel { .. } => "infeasible",
            Self::TimeLimitNoSolution => "time_limit_no_solution",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub size: usize,
    pub inertia: f64,
    pub scl_penalty: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepetitionStats {
    pub repetition: usize,
    pub seed: u64,
    pub iterations: usize,
    pub descents: usize,
    pub repositions: usize,
    pub enlargements: usize,
    pub added_candidates: usize,
    pub solver_calls: usize,
    pub solver_nodes: u64,
    pub solver_time_limit_hits: usize,
    pub empty_cluster_repairs: usize,
    pub timed_out: bool,
    /// Best objective at the end of the repetition, on contracted nodes.
    pub best_value: f64,
    pub elapsed_s: f64,
    #[serde(skip)]
    pub descent_traces: Vec<DescentTrace>,
}

/// Assignment-model objectives of one descent, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DescentTrace {
    pub objectives: Vec<f64>,
    /// Whether an empty cluster was repaired during the descent.
    pub repaired: bool,
    /// Whether every assignment solve was proven optimal.
    pub exact: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub nodes: usize,
    pub q_effective: Option<usize>,
    pub best_repetition: usize,
    pub repetitions: Vec<RepetitionStats>,
    pub warnings: Vec<String>,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// Cluster of every original object, in `0..k`.
    pub labels: Vec<usize>,
    /// `inertia + penalty_total`.
    pub objective: f64,
    pub inertia: f64,
    pub penalty_total: f64,
    /// Penalty factor `P` in effect for the returned labeling.
    pub penalty: f64,
    pub centers: CenterSet,
    pub clusters: Vec<ClusterStats>,
    pub stats: RunStats,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub solution: Solution,
    pub graph: ContractedGraph,
    /// Constraints after hardness overrides, as used by the run.
    pub constraints: ConstraintSet,
}

/// `k` initial centers chosen among the node features.
pub fn initialize_centers(
    graph: &ContractedGraph,
    k: usize,
    method: InitMethod,
    rng: &mut ChaCha8Rng,
) -> Result<CenterSet, ModelError> {
    let n = graph.node_count();
    if n < k || k == 0 {
        return Err(ModelError::TooFewNodes { nodes: n, k });
    }
    let chosen: Vec<usize> = match method {
        InitMethod::Random => sample(rng, n, k).into_vec(),
        InitMethod::KMeansPlusPlus => {
            let mut chosen = vec![rng.gen_range(0..n)];
            let mut dist: Vec<f64> = (0..n)
                .map(|i| squared_distance(graph.features(i), graph.features(chosen[0])))
                .collect();
            while chosen.len() < k {
                let total: f64 = dist.iter().sum();
                let next = if total > 0.0 {
                    let mut target = rng.gen::<f64>() * total;
                    let mut pick = n - 1;
                    for (i, &d) in dist.iter().enumerate() {
                        if d > 0.0 && target < d {
                            pick = i;
                            break;
                        }
                        target -= d;
                    }
                    while dist[pick] == 0.0 {
                        pick -= 1;
                    }
                    pick
                } else {
                    // all remaining nodes coincide with a chosen center
                    let rest: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                    *rest.choose(rng).expect("n >= k")
                };
                chosen.push(next);
                let c = graph.features(next);
                for (i, d) in dist.iter_mut().enumerate() {
                    *d = d.min(squared_distance(graph.features(i), c));
                }
            }
            chosen
        }
    };
    let coords: Vec<f64> = chosen
        .iter()
        .flat_map(|&i| graph.features(i).to_vec())
        .collect();
    Ok(CenterSet::new(graph.d, coords)?)
}

/// Cluster order by SCL-violation penalty, then inertia, both descending;
/// ties to the lower cluster index.
pub fn rank_clusters(scl_penalty: &[f64], inertia: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scl_penalty.len()).collect();
    order.sort_by(|&a, &b| {
        scl_penalty[b]
            .total_cmp(&scl_penalty[a])
            .then(inertia[b].total_cmp(&inertia[a]))
            .then(a.cmp(&b))
    });
    order
}

/// Per-cluster `(scl penalty, inertia)` of a node labeling.
pub fn cluster_scores(
    graph: &ContractedGraph,
    labels: &[usize],
    centers: &CenterSet,
    penalty: f64,
) -> (Vec<f64>, Vec<f64>) {
    let k = centers.k();
    let mut scl = vec![0.0; k];
    let mut inert = vec![0.0; k];
    for (i, &l) in labels.iter().enumerate() {
        inert[l] +=
            graph.node_weight[i] as f64 * squared_distance(graph.features(i), centers.center(l));
    }
    for &((i, j), w) in &graph.scl_edges {
        if labels[i] == labels[j] {
            scl[labels[i]] += penalty * w;
        }
    }
    (scl, inert)
}

/// Fill empty clusters. Each empty cluster takes a random node of the
/// top-ranked cluster, its center moving onto that node. A donor left empty
/// is repaired in the next pass; after `k` passes any remaining empty
/// cluster takes the node farthest from its center among clusters with at
/// least two nodes. Returns the number of moved nodes.
pub fn repair_empty_clusters(
    graph: &ContractedGraph,
    labels: &mut [usize],
    centers: &mut CenterSet,
    penalty: f64,
    rng: &mut ChaCha8Rng,
) -> usize {
    let k = centers.k();
    let mut moves = 0;
    for _ in 0..k {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let empty: Vec<usize> = (0..k).filter(|&l| sizes[l] == 0).collect();
        if empty.is_empty() {
            return moves;
        }
        for l in empty {
            let (scl, inert) = cluster_scores(graph, labels, centers, penalty);
            let top = rank_clusters(&scl, &inert)[0];
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == top).collect();
            let Some(&donor) = members.choose(rng) else {
                continue;
            };
            labels[donor] = l;
            centers.set_center(l, graph.features(donor));
            moves += 1;
        }
    }
    loop {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let Some(l) = (0..k).find(|&l| sizes[l] == 0) else {
            return moves;
        };
        let far = (0..labels.len())
            .filter(|&i| sizes[labels[i]] >= 2)
            .map(|i| {
                (
                    squared_distance(graph.features(i), centers.center(labels[i])),
                    i,
                )
            })
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        let Some((_, node)) = far else { return moves };
        labels[node] = l;
        centers.set_center(l, graph.features(node));
        moves += 1;
    }
}

/// Node-weighted centroids of a labeling; clusters without nodes keep their
/// current center.
pub fn update_centers(graph: &ContractedGraph, labels: &[usize], centers: &CenterSet) -> CenterSet {
    let k = centers.k();
    let mut groups: Vec<(Vec<&[f64]>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); k];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].0.push(graph.features(i));
        groups[l].1.push(graph.node_weight[i] as f64);
    }
    let mut out = centers.clone();
    for (l, (pts, ws)) in groups.iter().enumerate() {
        if let Ok(c) = weighted_centroid(pts, ws) {
            out.set_center(l, &c);
        }
    }
    out
}

/// Move the lowest-ranked center onto the highest-ranked one. Returns the
/// `(moved, target)` clusters, or `None` when `k = 1`.
pub fn reposition_cluster(
    graph: &ContractedGraph,
    labels: &[usize],
    centers: &mut CenterSet,
    penalty: f64,
) -> Option<(usize, usize)> {
    let (scl, inert) = cluster_scores(graph, labels, centers, penalty);
    let order = rank_clusters(&scl, &inert);
    let (high, low) = (order[0], *order.last().unwrap());
    if high == low {
        return None;
    }
    let target = centers.center(high).to_vec();
    centers.set_center(low, &target);
    Some((low, high))
}

/// Critical nodes for enlargement: nodes with violated SCL penalty, largest
/// first (ties to the lower node), then random SCL neighbors of the nodes
/// chosen so far, then random other nodes, up to `gamma` nodes.
pub fn select_critical_nodes(
    graph: &ContractedGraph,
    labels: &[usize],
    gamma: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = graph.node_count();
    let gamma = gamma.min(n);
    let mut node_penalty = vec![0.0; n];
    let mut neighbors = vec![Vec::new(); n];
    for &((i, j), w) in &graph.scl_edges {
        neighbors[i].push(j);
        neighbors[j].push(i);
        if labels[i] == labels[j] {
            node_penalty[i] += w;
            node_penalty[j] += w;
        }
    }
    let mut violating: Vec<usize> = (0..n).filter(|&i| node_penalty[i] > 0.0).collect();
    violating.sort_by(|&a, &b| node_penalty[b].total_cmp(&node_penalty[a]).then(a.cmp(&b)));
    violating.truncate(gamma);
    let mut chosen = vec![false; n];
    violating.iter().for_each(|&i| chosen[i] = true);
    let mut out = violating;
    if out.len() < gamma {
        let mut linked: Vec<usize> = out
            .iter()
            .flat_map(|&i| neighbors[i].iter().copied())
            .filter(|&j| !chosen[j])
            .collect();
        linked.sort_unstable();
        linked.dedup();
        linked.shuffle(rng);
        for j in linked.into_iter().take(gamma - out.len()) {
            chosen[j] = true;
            out.push(j);
        }
    }
    if out.len() < gamma {
        let mut rest: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
        rest.shuffle(rng);
        out.extend(rest.into_iter().take(gamma - out.len()));
    }
    out
}

/// Grant `delta` more candidate clusters to each critical node, capped at
/// `k`. Returns the number of added admissible pairs.
pub fn enlarge_search_space(qs: &mut [usize], critical: &[usize], delta: usize, k: usize) -> usize {
    let mut added = 0;
    for &i in critical {
        let new = (qs[i] + delta).min(k);
        added += new - qs[i];
        qs[i] = new;
    }
    added
}

/// Distance term and violated soft weight of a node labeling. The weight
/// includes soft constraints inside nodes that are violated regardless of
/// the labeling.
fn objective_parts(graph: &ContractedGraph, labels: &[usize], centers: &CenterSet) -> (f64, f64) {
    let dist: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            graph.node_weight[i] as f64 * squared_distance(graph.features(i), centers.center(l))
        })
        .sum();
    let scl: f64 = graph
        .scl_edges
        .iter()
        .filter(|((i, j), _)| labels[*i] == labels[*j])
        .map(|e| e.1)
        .sum();
    let sml: f64 = graph
        .sml_edges
        .iter()
        .filter(|((i, j), _)| labels[*i] != labels[*j])
        .map(|e| e.1)
        .sum();
    (
        dist,
        scl + sml + graph.self_loop_scl_weight + graph.cancelled_weight / 2.0,
    )
}

fn improves(new: f64, old: f64) -> bool {
    new < old - 1e-10 * old.abs().max(1e-300)
}

#[derive(Debug, Clone)]
struct Iterate {
    labels: Vec<usize>,
    dist: f64,
    weight: f64,
    penalty: f64,
}

impl Iterate {
    fn value(&self, penalty: f64) -> f64 {
        self.dist + penalty * self.weight
    }
}

enum DescentEnd {
    Converged,
    TimedOut,
}

struct Repetition<'a> {
    graph: &'a ContractedGraph,
    config: &'a RunConfig,
    solver: &'a Solver,
    deadline: Instant,
    rng: ChaCha8Rng,
    centers: CenterSet,
    labels: Vec<usize>,
    qs: Option<Vec<usize>>,
    best: Option<Iterate>,
    last_penalty: f64,
    stats: RepetitionStats,
}

impl<'a> Repetition<'a> {
    fn solve_assignment(&mut self) -> Result<Option<(Vec<usize>, f64, f64, bool)>, EngineError> {
        let model = match &self.qs {
            None => build_model(
                self.graph,
                &self.centers,
                QSetting::Full,
                self.config.penalty,
            )?,
            Some(qs) => {
                let sets = build_candidate_sets_per_node(self.graph, &self.centers, qs);
                assemble_model(self.graph, &self.centers, sets, self.config.penalty, false)?
            }
        };
        let remaining = self
            .deadline
            .saturating_duration_since(Instant::now())
            .as_secs_f64();
        let options = SolverOptions {
            time_limit_s: self.config.solver_time_limit_s.min(remaining),
            gap_tolerance: 0.0,
            seed: self.stats.seed.wrapping_add(self.stats.iterations as u64),
        };
        let result = self.solver.solve(&model, &options)?;
        self.stats.solver_calls += 1;
        self.stats.solver_nodes += result.stats.nodes_explored;
        let exact = result.status == SolverStatus::Optimal;
        match result.status {
            SolverStatus::Optimal => {}
            SolverStatus::FeasibleTimeLimit => self.stats.solver_time_limit_hits += 1,
            SolverStatus::Infeasible => {
                return Err(EngineError::InfeasibleModel {
                    iteration: self.stats.iterations,
                })
            }
            SolverStatus::TimeLimitNoSolution => {
                self.stats.solver_time_limit_hits += 1;
                return Ok(None);
            }
        }
        Ok(Some((
            result.assignment,
            model.penalty,
            result.objective,
            exact,
        )))
    }

    fn descend(&mut self) -> Result<DescentEnd, EngineError> {
        self.stats.descents += 1;
        let mut trace = DescentTrace {
            exact: true,
            ..DescentTrace::default()
        };
        let mut current: Option<(f64, f64)> = None;
        let mut end = DescentEnd::Converged;
        for _ in 0..self.config.max_iterations {
            if Instant::now() >= self.deadline {
                end = DescentEnd::TimedOut;
                break;
            }
            let Some((mut labels, p, model_value, exact)) = self.solve_assignment()? else {
                end = DescentEnd::TimedOut;
                break;
            };
            self.stats.iterations += 1;
            self.last_penalty = p;
            trace.objectives.push(model_value);
            trace.exact &= exact;
            let repairs =
                repair_empty_clusters(self.graph, &mut labels, &mut self.centers, p, &mut self.rng);
            self.stats.empty_cluster_repairs += repairs;
            trace.repaired |= repairs > 0;
            let (dist, weight) = objective_parts(self.graph, &labels, &self.centers);
            let value = dist + p * weight;
            if let Some((cd, cw)) = current {
                if !improves(value, cd + p * cw) {
                    break;
                }
            }
            current = Some((dist, weight));
            self.centers = update_centers(self.graph, &labels, &self.centers);
            let (bd, bw) = objective_parts(self.graph, &labels, &self.centers);
            let better = self
                .best
                .as_ref()
                .is_none_or(|b| improves(bd + p * bw, b.value(p)));
            if better {
                self.best = Some(Iterate {
                    labels: labels.clone(),
                    dist: bd,
                    weight: bw,
                    penalty: p,
                });
            }
            self.labels = labels;
        }
        debug!(
            descent = self.stats.descents,
            steps = trace.objectives.len(),
            "descent finished"
        );
        self.stats.descent_traces.push(trace);
        Ok(end)
    }

    fn best_value(&self) -> f64 {
        self.best
            .as_ref()
            .map_or(f64::INFINITY, |b| b.value(self.last_penalty))
    }

    fn run(mut self) -> Result<(Iterate, RepetitionStats), EngineError> {
        let start = Instant::now();
        let k = self.config.k;
        let mut timed_out = matches!(self.descend()?, DescentEnd::TimedOut);

        let limit = self.config.effective_reposition_limit();
        while !timed_out && self.stats.repositions < limit && !self.labels.is_empty() {
            if reposition_cluster(
                self.graph,
                &self.labels,
                &mut self.centers,
                self.last_penalty,
            )
            .is_none()
            {
                break;
            }
            self.stats.repositions += 1;
            timed_out = matches!(self.descend()?, DescentEnd::TimedOut);
        }

        let gamma = self.config.gamma.min(self.graph.node_count());
        while !timed_out
            && gamma > 0
            && self.config.delta > 0
            && self.qs.as_ref().is_some_and(|qs| qs.iter().any(|&q| q < k))
        {
            let Some(best) = self.best.clone() else { break };
            let critical = select_critical_nodes(self.graph, &best.labels, gamma, &mut self.rng);
            let qs = self.qs.as_mut().unwrap();
            let added = enlarge_search_space(qs, &critical, self.config.delta, k);
            if added == 0 {
                break;
            }
            self.stats.enlargements += 1;
            self.stats.added_candidates += added;
            let before = self.best_value();
            self.centers = update_centers(self.graph, &best.labels, &self.centers);
            self.labels = best.labels;
            timed_out = matches!(self.descend()?, DescentEnd::TimedOut);
            if !improves(self.best_value(), before) {
                break;
            }
        }

        self.stats.timed_out = timed_out;
        self.stats.best_value = self.best_value();
        self.stats.elapsed_s = start.elapsed().as_secs_f64();
        match self.best {
            Some(best) => Ok((best, self.stats)),
            None => Err(EngineError::TimeLimitNoSolution),
        }
    }
}

/// Run with the built-in assignment solver.
pub fn run(
    dataset: &Dataset,
    constraints: &ConstraintSet,
    config: &RunConfig,
) -> Result<RunOutcome, EngineError> {
    run_with_solver(dataset, constraints, config, &Solver::builtin())
}

pub fn run_with_solver(
    dataset: &Dataset,
    constraints: &ConstraintSet,
    config: &RunConfig,
    solver: &Solver,
) -> Result<RunOutcome, EngineError> {
    let start = Instant::now();
    config.validate()?;
    if let Some(max) = constraints.max_index() {
        if max >= dataset.n() {
            return Err(InstanceError::InvalidConfig(format!(
                "constraint index {max} out of range for {} objects",
                dataset.n()
            ))
            .into());
        }
    }
    let constraints = constraints.with_modes(config.ml_mode, config.cl_mode);
    let graph = preprocess(dataset, &constraints)?;
    let k = config.k;
    if graph.node_count() < k {
        return Err(ModelError::TooFewNodes {
            nodes: graph.node_count(),
            k,
        }
        .into());
    }

    let mut warnings = Vec::new();
    let q_effective = match config.q {
        QSetting::Full => None,
        QSetting::Nearest(q) => {
            let required = if graph.cl_edges.is_empty() {
                1
            } else {
                minimum_feasible_q(&graph, k)
            };
            if q < required {
                let msg = format!("q = {q} raised to {required}, the smallest value that keeps the reduced model feasible");
                warn!("{msg}");
                warnings.push(msg);
            }
            Some(q.max(required).min(k))
        }
    };

    let deadline = start + Duration::from_secs_f64(config.time_limit_s);
    let results: Vec<Result<(Iterate, RepetitionStats), EngineError>> = (0..config.repetitions)
        .into_par_iter()
        .map(|r| {
            let seed = config.seed.wrapping_add(r as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let centers = initialize_centers(&graph, k, config.init, &mut rng)?;
            Repetition {
                graph: &graph,
                config,
                solver,
                deadline,
                rng,
                centers,
                labels: Vec::new(),
                qs: q_effective.map(|q| vec![q; graph.node_count()]),
                best: None,
                last_penalty: 1.0,
                stats: RepetitionStats {
                    repetition: r,
                    seed,
                    ..RepetitionStats::default()
                },
            }
            .run()
        })
        .collect();

    let mut best: Option<(Solution, usize)> = None;
    let mut all_stats = Vec::new();
    let mut first_error = None;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok((iterate, stats)) => {
                let sol = finish(dataset, &graph, &constraints, &iterate, k);
                all_stats.push(stats);
                if best
                    .as_ref()
                    .is_none_or(|(b, _)| sol.objective < b.objective)
                {
                    best = Some((sol, r));
                }
            }
            Err(e) => {
                warn!(repetition = r, error = %e, "repetition failed");
                first_error.get_or_insert(e);
            }
        }
    }
    let Some((mut solution, best_repetition)) = best else {
        return Err(first_error.unwrap_or(EngineError::TimeLimitNoSolution));
    };
    solution.stats = RunStats {
        nodes: graph.node_count(),
        q_effective,
        best_repetition,
        repetitions: all_stats,
        warnings,
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome {
        solution,
        graph,
        constraints,
    })
}

/// Map node labels to objects and evaluate them on the original data.
fn finish(
    dataset: &Dataset,
    graph: &ContractedGraph,
    constraints: &ConstraintSet,
    best: &Iterate,
    k: usize,
) -> Solution {
    let labels: Vec<usize> = graph
        .mapping
        .iter()
        .map(|&node| best.labels[node])
        .collect();
    let inertia_total = inertia(dataset, &labels);
    let (_, penalty_total) = count_violations(&labels, constraints, best.penalty);

    let d = dataset.d();
    let mut clusters = vec![ClusterStats::default(); k];
    let mut sums = vec![0.0; k * d];
    for (x, &l) in dataset.rows().zip(&labels) {
        clusters[l].size += 1;
        sums[l * d..(l + 1) * d]
            .iter_mut()
            .zip(x)
            .for_each(|(s, v)| *s += v);
    }
    for (l, c) in clusters.iter().enumerate() {
        if c.size > 0 {
            sums[l * d..(l + 1) * d]
                .iter_mut()
                .for_each(|v| *v /= c.size as f64);
        }
    }
    for (x, &l) in dataset.rows().zip(&labels) {
        clusters[l].inertia += squared_distance(x, &sums[l * d..(l + 1) * d]);
    }
    for &((i, j), w) in &constraints.scl {
        if labels[i] == labels[j] {
            clusters[labels[i]].scl_penalty += best.penalty * w;
        }
    }
    Solution {
        objective: inertia_total + penalty_total,
        inertia: inertia_total,
        penalty_total,
        penalty: best.penalty,
        centers: CenterSet::new(d, sums).expect("finite centroids"),
        clusters,
        labels,
        stats: RunStats::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance_io::{ConstraintKind, ConstraintSetBuilder, PenaltyMode};

    fn graph(rows: &[Vec<f64>]) -> ContractedGraph {
        ContractedGraph::identity(&Dataset::from_rows(rows, None).unwrap())
    }

    #[test]
    fn rank_example() {
        assert_eq!(
            rank_clusters(&[6.0, 0.0, 0.0], &[0.5, 1.141, 0.3]),
            vec![0, 1, 2]
        );
        assert_eq!(
            rank_clusters(&[0.0, 0.0, 0.0], &[1.0, 3.0, 2.0]),
            vec![1, 2, 0]
        );
        assert_eq!(
            rank_clusters(&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0]),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn k_equal_nodes_uses_every_node() {
        let g = graph(&[vec![0.0], vec![5.0], vec![9.0]]);
        for method in [InitMethod::Random, InitMethod::KMeansPlusPlus] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let c = initialize_centers(&g, 3, method, &mut rng).unwrap();
            let mut coords = c.coords().to_vec();
            coords.sort_by(f64::total_cmp);
            assert_eq!(coords, vec![0.0, 5.0, 9.0]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            initialize_centers(&g, 4, InitMethod::Random, &mut rng),
            Err(ModelError::TooFewNodes { nodes: 3, k: 4 })
        ));
    }

    #[test]
    fn kmeanspp_splits_far_groups() {
        let mut rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.01, 0.0]).collect();
        rows.extend((0..10).map(|i| vec![1000.0 + i as f64 * 0.01, 0.0]));
        let g = graph(&rows);
        let mut split = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = initialize_centers(&g, 2, InitMethod::KMeansPlusPlus, &mut rng).unwrap();
            if (c.center(0)[0] < 500.0) != (c.center(1)[0] < 500.0) {
                split += 1;
            }
        }
        assert!(split >= 99, "{split}");
    }

    #[test]
    fn empty_cluster_repair() {
        let g = graph(&[vec![0.0], vec![1.0], vec![2.0]]);
        let mut centers = CenterSet::from_rows(&[vec![1.0], vec![50.0]]).unwrap();
        let mut labels = vec![0, 0, 0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let moved = repair_empty_clusters(&g, &mut labels, &mut centers, 1.0, &mut rng);
        assert_eq!(moved, 1);
        let donor = labels.iter().position(|&l| l == 1).unwrap();
        assert_eq!(centers.center(1), g.features(donor));

        // no empty cluster: unchanged
        let before = labels.clone();
        assert_eq!(
            repair_empty_clusters(&g, &mut labels, &mut centers, 1.0, &mut rng),
            0
        );
        assert_eq!(labels, before);
    }

    #[test]
    fn cascading_repair_terminates() {
        // two nodes, k = 2, both in cluster 1 of size... cluster 0 empty and
        // donor cluster 1 holds a single node after the first move would empty it
        let g = graph(&[vec![0.0], vec![4.0]]);
        let mut centers = CenterSet::from_rows(&[vec![9.0], vec![2.0]]).unwrap();
        let mut labels = vec![1, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        repair_empty_clusters(&g, &mut labels, &mut centers, 1.0, &mut rng);
        let mut sorted = labels.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1]);
    }

    #[test]
    fn reposition_moves_lowest_onto_highest() {
        // cluster 0: SCL-violating pair; clusters 1 and 2 clean with
        // inertias 2 and 0.5
        let mut g = graph(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![12.0, 0.0],
            vec![20.0, 0.0],
            vec![21.0, 0.0],
        ]);
        g.scl_edges = vec![((0, 1), 1.0)];
        let labels = vec![0, 0, 1, 1, 2, 2];
        let mut centers = update_centers(
            &g,
            &labels,
            &CenterSet::from_rows(&vec![vec![0.0, 0.0]; 3]).unwrap(),
        );
        let moved = reposition_cluster(&g, &labels, &mut centers, 6.0);
        assert_eq!(moved, Some((2, 0)));
        assert_eq!(centers.center(2), centers.center(0));

        let one = graph(&[vec![0.0]]);
        let mut c = CenterSet::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(reposition_cluster(&one, &[0], &mut c, 1.0), None);
    }

    #[test]
    fn enlargement_counts() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let mut g = graph(&rows);
        g.scl_edges = vec![((0, 1), 0.5), ((2, 3), 0.9), ((3, 40), 0.2)];
        let labels: Vec<usize> = (0..100).map(|i| if i < 4 { 0 } else { 1 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let critical = select_critical_nodes(&g, &labels, 50, &mut rng);
        assert_eq!(critical.len(), 50);
        assert_eq!(&critical[..4], &[2, 3, 0, 1]);
        assert_eq!(critical[4], 40);
        let mut sorted = critical.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 50);

        let mut qs = vec![2; 100];
        assert_eq!(enlarge_search_space(&mut qs, &critical, 3, 20), 150);
        assert_eq!(enlarge_search_space(&mut qs, &critical, 30, 20), 50 * 15);
        assert!(select_critical_nodes(&g, &labels, 0, &mut rng).is_empty());
    }

    fn blobs(seed: u64, per: usize, centers: &[(f64, f64)], spread: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (c, &(x, y)) in centers.iter().enumerate() {
            for _ in 0..per {
                rows.push(vec![
                    x + rng.gen_range(-spread..spread),
                    y + rng.gen_range(-spread..spread),
                ]);
                truth.push(c as i64);
            }
        }
        Dataset::from_rows(&rows, Some(truth)).unwrap()
    }

    #[test]
    fn single_cluster_is_total_sum_of_squares() {
        let ds = blobs(0, 10, &[(0.0, 0.0), (5.0, 5.0)], 1.0);
        let out = run(&ds, &ConstraintSet::default(), &RunConfig::with_k(1)).unwrap();
        assert!(out.solution.labels.iter().all(|&l| l == 0));
        let mean: Vec<f64> = (0..2)
            .map(|c| ds.rows().map(|r| r[c]).sum::<f64>() / 20.0)
            .collect();
        let tss: f64 = ds.rows().map(|r| squared_distance(r, &mean)).sum();
        assert!((out.solution.inertia - tss).abs() < 1e-9 * tss);
    }

    #[test]
    fn deterministic_and_consistent() {
        let ds = blobs(4, 15, &[(0.0, 0.0), (6.0, 0.0), (0.0, 6.0)], 1.5);
        let mut b = ConstraintSetBuilder::new();
        b.add(0, 20, ConstraintKind::CannotLink, 1.0);
        b.add(1, 2, ConstraintKind::MustLink, 1.0);
        b.add(3, 33, ConstraintKind::SoftCannotLink, 0.7);
        b.add(16, 40, ConstraintKind::SoftMustLink, 0.4);
        let cs = b.build();
        let config = RunConfig {
            k: 3,
            q: QSetting::Nearest(2),
            seed: 9,
            repetitions: 2,
            ..RunConfig::default()
        };
        let a = run(&ds, &cs, &config).unwrap().solution;
        let b2 = run(&ds, &cs, &config).unwrap().solution;
        assert_eq!(a.labels, b2.labels);
        assert_eq!(a.objective, b2.objective);
        assert_ne!(a.labels[0], a.labels[20]);
        assert_eq!(a.labels[1], a.labels[2]);
        let recomputed = inertia(&ds, &a.labels) + count_violations(&a.labels, &cs, a.penalty).1;
        assert!((a.objective - recomputed).abs() <= 1e-9 * recomputed);
    }

    #[test]
    fn full_model_descent_is_monotone() {
        let ds = blobs(
            8,
            12,
            &[(0.0, 0.0), (3.0, 0.0), (0.0, 3.0), (3.0, 3.0)],
            1.6,
        );
        let mut b = ConstraintSetBuilder::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..15 {
            let (i, j) = (rng.gen_range(0..48), rng.gen_range(0..48));
            if i != j {
                b.add(
                    i,
                    j,
                    ConstraintKind::SoftCannotLink,
                    rng.gen_range(0.1..1.0),
                );
            }
        }
        let config = RunConfig {
            k: 4,
            penalty: PenaltyMode::Fixed(2.0),
            seed: 5,
            ..RunConfig::default()
        };
        let out = run(&ds, &b.build(), &config).unwrap();
        let stats = &out.solution.stats.repetitions[0];
        assert!(stats.repositions > 0);
        for trace in stats
            .descent_traces
            .iter()
            .filter(|t| t.exact && !t.repaired)
        {
            for w in trace.objectives.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{trace:?}");
            }
        }
    }

    #[test]
    fn hard_conflict_is_reported() {
        let ds = blobs(0, 3, &[(0.0, 0.0)], 1.0);
        let mut b = ConstraintSetBuilder::new();
        b.add(0, 1, ConstraintKind::MustLink, 1.0);
        b.add(1, 0, ConstraintKind::CannotLink, 1.0);
        let err = run(&ds, &b.build(), &RunConfig::with_k(2)).unwrap_err();
        assert!(matches!(
            err,
            EngineError::HardConflict(HardConflictError { i: 0, j: 1 })
        ));
    }

    #[test]
    fn q_below_bound_is_raised() {
        let ds = blobs(1, 5, &[(0.0, 0.0), (4.0, 0.0), (8.0, 0.0)], 0.5);
        let mut b = ConstraintSetBuilder::new();
        b.add(0, 1, ConstraintKind::CannotLink, 1.0);
        b.add(0, 2, ConstraintKind::CannotLink, 1.0);
        b.add(1, 2, ConstraintKind::CannotLink, 1.0);
        let config = RunConfig {
            k: 3,
            q: QSetting::Nearest(1),
            ..RunConfig::default()
        };
        let out = run(&ds, &b.build(), &config).unwrap();
        assert_eq!(out.solution.stats.q_effective, Some(3));
        assert_eq!(out.solution.stats.warnings.len(), 1);
        let l = &out.solution.labels;
        assert!(l[0] != l[1] && l[1] != l[2] && l[0] != l[2]);
    }
}
