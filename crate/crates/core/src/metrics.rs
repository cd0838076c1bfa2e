//! Clustering quality metrics: Adjusted Rand Index, Silhouette coefficient,
//! Inertia and constraint violations.

use std::collections::HashMap;
use std::hash::Hash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::squared_distance;
use crate::instance_io::{ConstraintSet, Dataset};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCounts {
    pub ml: usize,
    pub cl: usize,
    pub sml: usize,
    pub scl: usize,
}

impl ViolationCounts {
    pub fn hard(&self) -> usize {
        self.ml + self.cl
    }

    pub fn total(&self) -> usize {
        self.ml + self.cl + self.sml + self.scl
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub ari: Option<f64>,
    pub silhouette: Option<f64>,
    pub inertia: f64,
    pub violations: ViolationCounts,
    pub penalty_total: f64,
}

fn encode<T: Hash + Eq>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let codes = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect();
    (codes, ids.len())
}

fn pairs(m: u64) -> i128 {
    let m = m as i128;
    m * (m - 1) / 2
}

/// Adjusted Rand Index of two labelings. The pair counts are combined in
/// exact integer arithmetic; only the final ratio is rounded. When both
/// labelings are trivial (the index is undefined) the result is 1.
pub fn ari<A: Hash + Eq, B: Hash + Eq>(labels: &[A], truth: &[B]) -> Result<f64, MetricsError> {
    if labels.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(labels.len(), truth.len()));
    }
    let (a, ka) = encode(labels);
    let (b, kb) = encode(truth);
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows = vec![0u64; ka];
    let mut cols = vec![0u64; kb];
    for (&x, &y) in a.iter().zip(&b) {
        *table.entry((x, y)).or_insert(0) += 1;
        rows[x] += 1;
        cols[y] += 1;
    }
    let index: i128 = table.values().map(|&c| pairs(c)).sum();
    let sa: i128 = rows.iter().map(|&c| pairs(c)).sum();
    let sb: i128 = cols.iter().map(|&c| pairs(c)).sum();
    let total = pairs(labels.len() as u64);
    // (index - sa*sb/total) / ((sa+sb)/2 - sa*sb/total), scaled by 2*total
    let num = 2 * (total * index - sa * sb);
    let den = total * (sa + sb) - 2 * sa * sb;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Mean silhouette coefficient with Euclidean distances. Objects in
/// singleton clusters contribute 0.
pub fn silhouette(dataset: &Dataset, labels: &[usize]) -> Result<f64, MetricsError> {
    let n = dataset.n();
    if labels.len() != n {
        return Err(MetricsError::LengthMismatch(labels.len(), n));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(MetricsError::SingleCluster);
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; k],
            |sums, i| {
                let own = labels[i];
                if sizes[own] == 1 {
                    return 0.0;
                }
                sums.iter_mut().for_each(|s| *s = 0.0);
                let x = dataset.row(i);
                for j in 0..n {
                    if j != i {
                        sums[labels[j]] += squared_distance(x, dataset.row(j)).sqrt();
                    }
                }
                let a = sums[own] / (sizes[own] - 1) as f64;
                let b = (0..k)
                    .filter(|&l| l != own && sizes[l] > 0)
                    .map(|l| sums[l] / sizes[l] as f64)
                    .fold(f64::INFINITY, f64::min);
                let m = a.max(b);
                if m > 0.0 {
                    (b - a) / m
                } else {
                    0.0
                }
            },
        )
        .sum();
    Ok(total / n as f64)
}

/// Within-cluster sum of squared distances to the cluster means, over the
/// original objects.
pub fn inertia(dataset: &Dataset, labels: &[usize]) -> f64 {
    let d = dataset.d();
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0; k * d];
    let mut sizes = vec![0usize; k];
    for (x, &l) in dataset.rows().zip(labels) {
        sizes[l] += 1;
        for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (l, &s) in sizes.iter().enumerate() {
        if s > 0 {
            sums[l * d..(l + 1) * d]
                .iter_mut()
                .for_each(|v| *v /= s as f64);
        }
    }
    dataset
        .rows()
        .zip(labels)
        .map(|(x, &l)| squared_distance(x, &sums[l * d..(l + 1) * d]))
        .sum()
}

/// Violated constraints per class, and `P` times the summed weight of
/// violated soft constraints.
pub fn count_violations(
    labels: &[usize],
    constraints: &ConstraintSet,
    penalty: f64,
) -> (ViolationCounts, f64) {
    let same = |(i, j): (usize, usize)| labels[i] == labels[j];
    let mut counts = ViolationCounts {
        ml: constraints.ml.iter().filter(|&&p| !same(p)).count(),
        cl: constraints.cl.iter().filter(|&&p| same(p)).count(),
        ..ViolationCounts::default()
    };
    let mut weight = 0.0;
    for &(p, w) in &constraints.sml {
        if !same(p) {
            counts.sml += 1;
            weight += w;
        }
    }
    for &(p, w) in &constraints.scl {
        if same(p) {
            counts.scl += 1;
            weight += w;
        }
    }
    (counts, penalty * weight)
}

/// All metrics for one labeling. ARI is computed when the dataset carries
/// ground truth; Silhouette is absent when fewer than two clusters are used.
pub fn evaluate(
    dataset: &Dataset,
    labels: &[usize],
    constraints: &ConstraintSet,
    penalty: f64,
) -> MetricsBundle {
    let (violations, penalty_total) = count_violations(labels, constraints, penalty);
    MetricsBundle {
        ari: dataset.ground_truth().and_then(|t| ari(labels, t).ok()),
        silhouette: silhouette(dataset, labels).ok(),
        inertia: inertia(dataset, labels),
        violations,
        penalty_total,
    }
}
