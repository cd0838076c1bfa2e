//! Squared Euclidean distances, q-nearest-center queries and weighted
//! centroids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kdtree::KdTree;
use crate::preprocess::ContractedGraph;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot take the centroid of an empty cluster")]
    EmptyCluster,
    #[error("center coordinates must be finite")]
    NonFinite,
}

/// Largest dimension for which the kd-tree path is used.
pub const KD_TREE_MAX_DIM: usize = 16;
/// Smallest number of centers for which the kd-tree path is used.
pub const KD_TREE_MIN_CENTERS: usize = 32;

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `k` cluster centers of dimension `d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterSet {
    d: usize,
    coords: Vec<f64>,
}

impl CenterSet {
    pub fn new(d: usize, coords: Vec<f64>) -> Result<Self, GeometryError> {
        if d == 0 || coords.is_empty() || coords.len() % d != 0 {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                found: coords.len(),
            });
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { d, coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GeometryError> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                found: r.len(),
            });
        }
        Self::new(d, rows.concat())
    }

    pub fn k(&self) -> usize {
        self.coords.len() / self.d
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn center(&self, l: usize) -> &[f64] {
        &self.coords[l * self.d..(l + 1) * self.d]
    }

    pub fn set_center(&mut self, l: usize, position: &[f64]) {
        assert_eq!(position.len(), self.d);
        self.coords[l * self.d..(l + 1) * self.d].copy_from_slice(position);
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Dense `rows x cols` matrix of squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.data[i * self.cols + l]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// `(i, l) -> ||x_i - o_l||^2` for every node and center.
pub fn squared_distance_matrix(
    graph: &ContractedGraph,
    centers: &CenterSet,
) -> Result<DistanceMatrix, GeometryError> {
    if graph.d != centers.d() {
        return Err(GeometryError::DimensionMismatch {
            expected: graph.d,
            found: centers.d(),
        });
    }
    let k = centers.k();
    let mut data = vec![0.0; graph.node_count() * k];
    data.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        let x = graph.features(i);
        for (l, slot) in row.iter_mut().enumerate() {
            *slot = squared_distance(x, centers.center(l));
        }
    });
    Ok(DistanceMatrix {
        rows: graph.node_count(),
        cols: k,
        data,
    })
}

/// Indices of the `q` centers nearest to `point`, nearest first, ties to the
/// lower index. Linear scan.
pub fn q_nearest_centers(centers: &CenterSet, point: &[f64], q: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = (0..centers.k())
        .map(|l| (squared_distance(point, centers.center(l)), l))
        .collect();
    let q = q.min(all.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if q < all.len() {
        all.select_nth_unstable_by(q, cmp);
        all.truncate(q);
    }
    all.sort_unstable_by(cmp);
    all.into_iter().map(|(_, l)| l).collect()
}

/// Nearest-center queries against a fixed center set, using a kd-tree when
/// the dimension is small and the number of centers is large.
pub struct NearestCenters<'a> {
    centers: &'a CenterSet,
    tree: Option<KdTree<'a>>,
}

impl<'a> NearestCenters<'a> {
    pub fn new(centers: &'a CenterSet) -> Self {
        let use_tree = centers.d() <= KD_TREE_MAX_DIM && centers.k() >= KD_TREE_MIN_CENTERS;
        Self::with_tree(centers, use_tree)
    }

    pub fn with_tree(centers: &'a CenterSet, use_tree: bool) -> Self {
        let tree = use_tree.then(|| KdTree::new(centers.coords(), centers.d()));
        Self { centers, tree }
    }

    pub fn uses_tree(&self) -> bool {
        self.tree.is_some()
    }

    pub fn query(&self, point: &[f64], q: usize) -> Vec<usize> {
        match &self.tree {
            Some(tree) => tree.nearest(point, q),
            None => q_nearest_centers(self.centers, point, q),
        }
    }
}

/// `sum_i w_i p_i / sum_i w_i`.
pub fn weighted_centroid(points: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>, GeometryError> {
    let Some(first) = points.first() else {
        return Err(GeometryError::EmptyCluster);
    };
    if points.len() != weights.len() {
        return Err(GeometryError::DimensionMismatch {
            expected: points.len(),
            found: weights.len(),
        });
    }
    let d = first.len();
    let mut acc = vec![0.0; d];
    let mut total = 0.0;
    for (p, &w) in points.iter().zip(weights) {
        if p.len() != d {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                found: p.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(p.iter()) {
            *a += w * v;
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(GeometryError::EmptyCluster);
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(acc)
}
