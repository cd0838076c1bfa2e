//! The assignment problem of one iteration.
//!
//! Every node `i` gets a candidate set `L_i` of clusters it may join: all
//! `k` clusters in the full model, or its `q` nearest centers in the reduced
//! model. Clusters that are no node's candidate are appended to the set of
//! the node closest to them. Cannot-link edges whose endpoints share no
//! candidate are implicitly satisfied and dropped; soft must-link edges whose
//! endpoints share no candidate are necessarily violated and become a
//! constant term.
//!
//! The objective is
//!
//! ```text
//! sum_i s_i d(i, l_i) + P * (sum of violated SCL weights + sum of violated SML weights)
//! ```
//!
//! subject to every node taking exactly one candidate and no hard
//! cannot-link pair sharing a cluster.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{squared_distance, CenterSet, GeometryError, NearestCenters};
use crate::instance_io::{Pair, PenaltyMode, QSetting};
use crate::preprocess::{max_cl_degree, ContractedGraph};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(
        "q = {q} is below the feasibility bound {required} implied by the hard cannot-link graph"
    )]
    QTooSmall { q: usize, required: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("fewer nodes ({nodes}) than clusters ({k})")]
    TooFewNodes { nodes: usize, k: usize },
}

/// Candidate clusters per node, each list in preference order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSets {
    pub sets: Vec<Vec<usize>>,
    /// `(node, cluster)` entries appended by coverage repair.
    pub augmented: Vec<(usize, usize)>,
}

impl CandidateSets {
    pub fn total(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}

/// `min(1 + max CL degree, k)`: the smallest `q` for which the reduced model
/// is guaranteed to contain a feasible assignment when one exists.
pub fn minimum_feasible_q(graph: &ContractedGraph, k: usize) -> usize {
    (1 + max_cl_degree(graph)).min(k)
}

/// The `q` nearest clusters of every node, plus coverage repair.
pub fn build_candidate_sets(
    graph: &ContractedGraph,
    centers: &CenterSet,
    q: usize,
) -> CandidateSets {
    build_candidate_sets_per_node(graph, centers, &vec![q; graph.node_count()])
}

/// Like [`build_candidate_sets`] with a per-node `q`.
pub fn build_candidate_sets_per_node(
    graph: &ContractedGraph,
    centers: &CenterSet,
    qs: &[usize],
) -> CandidateSets {
    let k = centers.k();
    let index = NearestCenters::new(centers);
    let mut sets: Vec<Vec<usize>> = (0..graph.node_count())
        .map(|i| index.query(graph.features(i), qs[i].clamp(1, k)))
        .collect();

    let mut covered = vec![false; k];
    for set in &sets {
        for &l in set {
            covered[l] = true;
        }
    }
    let mut augmented = Vec::new();
    for l in (0..k).filter(|&l| !covered[l]) {
        let c = centers.center(l);
        let closest = (0..graph.node_count())
            .map(|i| (squared_distance(graph.features(i), c), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, i)| i)
            .expect("at least one node");
        sets[closest].push(l);
        augmented.push((closest, l));
    }
    CandidateSets { sets, augmented }
}

fn full_candidate_sets(nodes: usize, k: usize) -> CandidateSets {
    CandidateSets {
        sets: vec![(0..k).collect(); nodes],
        augmented: Vec::new(),
    }
}

/// Edges kept in the model after candidate-set reduction.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FilteredEdges {
    pub cl: Vec<Pair>,
    pub scl: Vec<(Pair, f64)>,
    pub sml: Vec<(Pair, f64)>,
    /// Soft must-link edges whose endpoints share no candidate.
    pub auto_violated_sml: Vec<(Pair, f64)>,
}

fn intersects(a: &[usize], b: &[usize]) -> bool {
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

pub fn filter_edges(graph: &ContractedGraph, candidates: &CandidateSets) -> FilteredEdges {
    let sorted: Vec<Vec<usize>> = candidates
        .sets
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.sort_unstable();
            s
        })
        .collect();
    let shares = |&(i, j): &Pair| intersects(&sorted[i], &sorted[j]);
    let (sml, auto_violated_sml) = graph.sml_edges.iter().partition(|(p, _)| shares(p));
    FilteredEdges {
        cl: graph.cl_edges.iter().copied().filter(shares).collect(),
        scl: graph
            .scl_edges
            .iter()
            .copied()
            .filter(|(p, _)| shares(p))
            .collect(),
        sml,
        auto_violated_sml,
    }
}

/// Mean of `d_il` over all admissible node/cluster pairs.
pub fn default_penalty(costs: &[Vec<f64>]) -> f64 {
    let (sum, count) = costs
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), &d| (s + d, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Maximum of `d_il` over all admissible node/cluster pairs.
pub fn max_distance_penalty(costs: &[Vec<f64>]) -> f64 {
    costs.iter().flatten().copied().fold(0.0, f64::max)
}

fn resolve_penalty(mode: PenaltyMode, costs: &[Vec<f64>]) -> f64 {
    let p = match mode {
        PenaltyMode::Fixed(p) => return p,
        PenaltyMode::Auto => default_penalty(costs),
        PenaltyMode::MaxDist => max_distance_penalty(costs),
    };
    // every node sits on a center: any positive value ranks the same
    if p > 0.0 {
        p
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssignmentModel {
    pub k: usize,
    pub is_full: bool,
    pub node_weight: Vec<f64>,
    /// Candidate clusters `L_i` per node.
    pub candidates: Vec<Vec<usize>>,
    /// Squared distance `d_il` aligned with `candidates`.
    pub distances: Vec<Vec<f64>>,
    pub penalty: f64,
    pub cl_edges: Vec<Pair>,
    pub scl_edges: Vec<(Pair, f64)>,
    pub sml_edges: Vec<(Pair, f64)>,
    pub auto_violated_sml: Vec<(Pair, f64)>,
    pub augmented: Vec<(usize, usize)>,
}

impl AssignmentModel {
    pub fn node_count(&self) -> usize {
        self.candidates.len()
    }

    /// Number of binary assignment variables.
    pub fn variable_count(&self) -> usize {
        self.candidates.iter().map(Vec::len).sum()
    }

    /// Penalty of soft must-link edges that no assignment can satisfy.
    pub fn constant_term(&self) -> f64 {
        self.penalty * self.auto_violated_sml.iter().fold(0.0, |acc, e| acc + e.1)
    }

    /// Nodes that may join each cluster.
    pub fn cluster_nodes(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, set) in self.candidates.iter().enumerate() {
            for &l in set {
                out[l].push(i);
            }
        }
        out
    }

    pub fn slot_of(&self, node: usize, cluster: usize) -> Option<usize> {
        self.candidates[node].iter().position(|&l| l == cluster)
    }

    /// Whether every node takes one of its candidates and no hard
    /// cannot-link pair shares a cluster.
    pub fn is_feasible(&self, assignment: &[usize]) -> bool {
        assignment.len() == self.node_count()
            && assignment
                .iter()
                .enumerate()
                .all(|(i, &l)| self.candidates[i].contains(&l))
            && self
                .cl_edges
                .iter()
                .all(|&(i, j)| assignment[i] != assignment[j])
    }

    /// Objective of a complete assignment, including the constant term, or
    /// `None` if the assignment is infeasible.
    pub fn objective(&self, assignment: &[usize]) -> Option<f64> {
        if !self.is_feasible(assignment) {
            return None;
        }
        let distance: f64 = assignment
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let slot = self.slot_of(i, l).unwrap();
                self.node_weight[i] * self.distances[i][slot]
            })
            .sum();
        let scl: f64 = self
            .scl_edges
            .iter()
            .filter(|((i, j), _)| assignment[*i] == assignment[*j])
            .map(|e| e.1)
            .sum();
        let sml: f64 = self
            .sml_edges
            .iter()
            .filter(|((i, j), _)| assignment[*i] != assignment[*j])
            .map(|e| e.1)
            .sum();
        Some(distance + self.penalty * (scl + sml) + self.constant_term())
    }

    /// Model text in CPLEX LP format. The constant term is recorded in a
    /// comment since not every reader accepts objective constants.
    pub fn to_lp(&self) -> String {
        let mut out = String::new();
        let x = |i: usize, l: usize| format!("x_{i}_{l}");
        let _ = writeln!(out, "\\ constrained clustering assignment model");
        let _ = writeln!(
            out,
            "\\ nodes: {} clusters: {} full: {}",
            self.node_count(),
            self.k,
            self.is_full
        );
        let _ = writeln!(out, "\\ constant: {}", self.constant_term());
        let _ = writeln!(out, "Minimize");
        let mut terms = Vec::new();
        for (i, set) in self.candidates.iter().enumerate() {
            for (slot, &l) in set.iter().enumerate() {
                terms.push(format!(
                    "{} {}",
                    self.node_weight[i] * self.distances[i][slot],
                    x(i, l)
                ));
            }
        }
        for &((i, j), w) in &self.scl_edges {
            terms.push(format!("{} y_{i}_{j}", self.penalty * w));
        }
        for &((i, j), w) in &self.sml_edges {
            terms.push(format!("{} z_{i}_{j}", self.penalty * w));
        }
        let _ = writeln!(out, " obj: {}", terms.join(" + "));
        let _ = writeln!(out, "Subject To");
        for (i, set) in self.candidates.iter().enumerate() {
            let lhs: Vec<String> = set.iter().map(|&l| x(i, l)).collect();
            let _ = writeln!(out, " assign_{i}: {} = 1", lhs.join(" + "));
        }
        let common = |i: usize, j: usize| -> Vec<usize> {
            self.candidates[i]
                .iter()
                .copied()
                .filter(|l| self.candidates[j].contains(l))
                .collect()
        };
        for &(i, j) in &self.cl_edges {
            for l in common(i, j) {
                let _ = writeln!(out, " cl_{i}_{j}_{l}: {} + {} <= 1", x(i, l), x(j, l));
            }
        }
        for &((i, j), _) in &self.scl_edges {
            for l in common(i, j) {
                let _ = writeln!(
                    out,
                    " scl_{i}_{j}_{l}: {} + {} - y_{i}_{j} <= 1",
                    x(i, l),
                    x(j, l)
                );
            }
        }
        for &((i, j), _) in &self.sml_edges {
            for &l in &self.candidates[i] {
                if self.candidates[j].contains(&l) {
                    let _ = writeln!(
                        out,
                        " sml_{i}_{j}_{l}: {} - {} - z_{i}_{j} <= 0",
                        x(i, l),
                        x(j, l)
                    );
                } else {
                    let _ = writeln!(out, " smli_{i}_{j}_{l}: {} - z_{i}_{j} <= 0", x(i, l));
                }
            }
            for &l in &self.candidates[j] {
                if !self.candidates[i].contains(&l) {
                    let _ = writeln!(out, " smlj_{i}_{j}_{l}: {} - z_{i}_{j} <= 0", x(j, l));
                }
            }
        }
        let _ = writeln!(out, "Bounds");
        for &((i, j), _) in &self.scl_edges {
            let _ = writeln!(out, " y_{i}_{j} >= 0");
        }
        for &((i, j), _) in &self.sml_edges {
            let _ = writeln!(out, " z_{i}_{j} >= 0");
        }
        let _ = writeln!(out, "Binary");
        for (i, set) in self.candidates.iter().enumerate() {
            for &l in set {
                let _ = writeln!(out, " {}", x(i, l));
            }
        }
        let _ = writeln!(out, "End");
        out
    }

    pub fn export_model(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_lp())
    }

    /// Read an assignment back from solver variable values (`x_i_l` names).
    pub fn assignment_from_values<'a>(
        &self,
        values: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Result<Vec<usize>, String> {
        let mut assignment = vec![usize::MAX; self.node_count()];
        for (name, value) in values {
            if value < 0.5 {
                continue;
            }
            let mut parts = name.split('_');
            if parts.next() != Some("x") {
                continue;
            }
            let (Some(i), Some(l)) = (
                parts.next().and_then(|s| s.parse::<usize>().ok()),
                parts.next().and_then(|s| s.parse::<usize>().ok()),
            ) else {
                return Err(format!("malformed variable name {name:?}"));
            };
            if i >= assignment.len() {
                return Err(format!("variable {name:?} names an unknown node"));
            }
            if assignment[i] != usize::MAX {
                return Err(format!("node {i} assigned twice"));
            }
            assignment[i] = l;
        }
        if let Some(i) = assignment.iter().position(|&l| l == usize::MAX) {
            return Err(format!("node {i} has no assignment"));
        }
        Ok(assignment)
    }
}

/// Assemble a model from explicit candidate sets.
pub fn assemble_model(
    graph: &ContractedGraph,
    centers: &CenterSet,
    candidates: CandidateSets,
    penalty: PenaltyMode,
    is_full: bool,
) -> Result<AssignmentModel, ModelError> {
    if graph.d != centers.d() {
        return Err(GeometryError::DimensionMismatch {
            expected: graph.d,
            found: centers.d(),
        }
        .into());
    }
    let distances: Vec<Vec<f64>> = candidates
        .sets
        .iter()
        .enumerate()
        .map(|(i, set)| {
            let x = graph.features(i);
            set.iter()
                .map(|&l| squared_distance(x, centers.center(l)))
                .collect()
        })
        .collect();
    let penalty = resolve_penalty(penalty, &distances);
    let edges = if is_full {
        FilteredEdges {
            cl: graph.cl_edges.clone(),
            scl: graph.scl_edges.clone(),
            sml: graph.sml_edges.clone(),
            auto_violated_sml: Vec::new(),
        }
    } else {
        filter_edges(graph, &candidates)
    };
    Ok(AssignmentModel {
        k: centers.k(),
        is_full,
        node_weight: graph.node_weight.iter().map(|&s| s as f64).collect(),
        candidates: candidates.sets,
        distances,
        penalty,
        cl_edges: edges.cl,
        scl_edges: edges.scl,
        sml_edges: edges.sml,
        auto_violated_sml: edges.auto_violated_sml,
        augmented: candidates.augmented,
    })
}

/// Build the full or reduced model for the current centers.
pub fn build_model(
    graph: &ContractedGraph,
    centers: &CenterSet,
    q: QSetting,
    penalty: PenaltyMode,
) -> Result<AssignmentModel, ModelError> {
    let k = centers.k();
    if graph.d != centers.d() {
        return Err(GeometryError::DimensionMismatch {
            expected: graph.d,
            found: centers.d(),
        }
        .into());
    }
    match q {
        QSetting::Full => assemble_model(
            graph,
            centers,
            full_candidate_sets(graph.node_count(), k),
            penalty,
            true,
        ),
        QSetting::Nearest(q) => {
            let q = q.min(k);
            if !graph.cl_edges.is_empty() {
                let required = minimum_feasible_q(graph, k);
                if q < required {
                    return Err(ModelError::QTooSmall { q, required });
                }
            }
            let sets = build_candidate_sets(graph, centers, q);
            assemble_model(graph, centers, sets, penalty, false)
        }
    }
}
