//! Contraction of hard must-link components.
//!
//! Objects joined directly or transitively by hard must-link edges become a
//! single node whose weight is the component size and whose features are
//! the component mean. Remaining edges are remapped onto the contracted
//! nodes; parallel soft edges have their weights summed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance_io::{canonical_pair, ConstraintSet, Dataset, Pair};
use crate::union_find::UnionFind;

/// A hard cannot-link edge inside a must-link component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("objects {i} and {j} are must-linked (directly or transitively) but also cannot-linked")]
pub struct HardConflictError {
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractedGraph {
    pub d: usize,
    /// Number of original objects merged into each node.
    pub node_weight: Vec<usize>,
    /// Row-major mean features per node.
    pub node_features: Vec<f64>,
    /// Node index of each original object.
    pub mapping: Vec<usize>,
    pub cl_edges: Vec<Pair>,
    pub sml_edges: Vec<(Pair, f64)>,
    pub scl_edges: Vec<(Pair, f64)>,
    /// Soft must-link weight on pairs inside one node (always satisfied).
    pub self_loop_sml_weight: f64,
    /// Soft cannot-link weight on pairs inside one node (always violated).
    pub self_loop_scl_weight: f64,
    /// Weight removed from both edges of SML/SCL pairs on the same node pair.
    pub cancelled_weight: f64,
}

impl ContractedGraph {
    pub fn node_count(&self) -> usize {
        self.node_weight.len()
    }

    pub fn features(&self, node: usize) -> &[f64] {
        &self.node_features[node * self.d..(node + 1) * self.d]
    }

    /// Original objects grouped by node, each group in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.node_count()];
        for (obj, &node) in self.mapping.iter().enumerate() {
            out[node].push(obj);
        }
        out
    }

    pub fn total_soft_weight(&self) -> f64 {
        self.sml_edges
            .iter()
            .chain(&self.scl_edges)
            .map(|e| e.1)
            .sum()
    }

    /// Graph with one node per object and no contraction; useful when no
    /// must-link constraints are present.
    pub fn identity(dataset: &Dataset) -> Self {
        contract(dataset, &ConstraintSet::default()).expect("no hard constraints, no conflict")
    }
}

/// Contract hard must-link components and remap all other edges.
pub fn contract(
    dataset: &Dataset,
    constraints: &ConstraintSet,
) -> Result<ContractedGraph, HardConflictError> {
    let n = dataset.n();
    let d = dataset.d();
    let mut uf = UnionFind::new(n);
    for &(i, j) in &constraints.ml {
        uf.union(i, j);
    }

    // Number nodes by their smallest member.
    let mut root_to_node = vec![usize::MAX; n];
    let mut mapping = vec![0; n];
    let mut node_weight = Vec::new();
    for obj in 0..n {
        let root = uf.find(obj);
        if root_to_node[root] == usize::MAX {
            root_to_node[root] = node_weight.len();
            node_weight.push(0);
        }
        let node = root_to_node[root];
        mapping[obj] = node;
        node_weight[node] += 1;
    }

    let mut node_features = vec![0.0; node_weight.len() * d];
    for (obj, row) in dataset.rows().enumerate() {
        let base = mapping[obj] * d;
        for (acc, v) in node_features[base..base + d].iter_mut().zip(row) {
            *acc += v;
        }
    }
    for (node, &s) in node_weight.iter().enumerate() {
        for v in &mut node_features[node * d..(node + 1) * d] {
            *v /= s as f64;
        }
    }

    let mut cl_edges = Vec::with_capacity(constraints.cl.len());
    for &(i, j) in &constraints.cl {
        let (a, b) = (mapping[i], mapping[j]);
        if a == b {
            return Err(HardConflictError { i, j });
        }
        cl_edges.push(canonical_pair(a, b));
    }
    cl_edges.sort_unstable();
    cl_edges.dedup();

    let remap = |edges: &[(Pair, f64)]| {
        let mut agg: BTreeMap<Pair, f64> = BTreeMap::new();
        let mut self_loops = 0.0;
        for &((i, j), w) in edges {
            let (a, b) = (mapping[i], mapping[j]);
            if a == b {
                self_loops += w;
            } else {
                *agg.entry(canonical_pair(a, b)).or_insert(0.0) += w;
            }
        }
        (agg.into_iter().collect::<Vec<_>>(), self_loops)
    };
    let (sml_edges, self_loop_sml_weight) = remap(&constraints.sml);
    let (scl_edges, self_loop_scl_weight) = remap(&constraints.scl);

    Ok(ContractedGraph {
        d,
        node_weight,
        node_features,
        mapping,
        cl_edges,
        sml_edges,
        scl_edges,
        self_loop_sml_weight,
        self_loop_scl_weight,
        cancelled_weight: 0.0,
    })
}

/// For node pairs carrying both a soft must-link and a soft cannot-link
/// edge, drop the lighter edge and subtract its weight from the heavier.
/// Equal weights cancel completely.
pub fn resolve_sml_scl_overlap(mut graph: ContractedGraph) -> ContractedGraph {
    let scl: BTreeMap<Pair, f64> = graph.scl_edges.iter().copied().collect();
    let sml: BTreeMap<Pair, f64> = graph.sml_edges.iter().copied().collect();
    if !sml.keys().any(|p| scl.contains_key(p)) {
        return graph;
    }
    let mut cancelled = 0.0;
    let mut new_sml = Vec::with_capacity(sml.len());
    for (&pair, &w) in &sml {
        match scl.get(&pair) {
            Some(&ws) => {
                cancelled += 2.0 * w.min(ws);
                if w > ws {
                    new_sml.push((pair, w - ws));
                }
            }
            None => new_sml.push((pair, w)),
        }
    }
    let new_scl = scl
        .iter()
        .filter_map(|(&pair, &ws)| match sml.get(&pair) {
            Some(&w) if ws > w => Some((pair, ws - w)),
            Some(_) => None,
            None => Some((pair, ws)),
        })
        .collect();
    graph.sml_edges = new_sml;
    graph.scl_edges = new_scl;
    graph.cancelled_weight += cancelled;
    graph
}

/// Contraction followed by overlap resolution.
pub fn preprocess(
    dataset: &Dataset,
    constraints: &ConstraintSet,
) -> Result<ContractedGraph, HardConflictError> {
    contract(dataset, constraints).map(resolve_sml_scl_overlap)
}

/// Maximum degree of the hard cannot-link graph on the contracted nodes.
pub fn max_cl_degree(graph: &ContractedGraph) -> usize {
    let mut degree = vec![0usize; graph.node_count()];
    for &(a, b) in &graph.cl_edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    degree.into_iter().max().unwrap_or(0)
}
