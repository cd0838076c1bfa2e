//! Static kd-tree for exact k-nearest-neighbor queries over a small point
//! set (the cluster centers).
//!
//! Results are ordered by `(squared distance, point index)`, so equidistant
//! points come back lowest index first, matching a sorted linear scan.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::squared_distance;

#[derive(Debug, Clone)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [f64],
    d: usize,
    nodes: Vec<Node>,
    root: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> KdTree<'a> {
    /// Build over row-major `points` of dimension `d`.
    pub fn new(points: &'a [f64], d: usize) -> Self {
        assert!(d > 0 && points.len() % d == 0);
        let n = points.len() / d;
        let mut tree = Self {
            points,
            d,
            nodes: Vec::with_capacity(n),
            root: None,
        };
        let mut idx: Vec<usize> = (0..n).collect();
        tree.root = tree.build(&mut idx, 0);
        tree
    }

    fn coord(&self, point: usize, axis: usize) -> f64 {
        self.points[point * self.d + axis]
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % self.d;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            self.coord(a, axis)
                .total_cmp(&self.coord(b, axis))
                .then(a.cmp(&b))
        });
        let point = idx[mid];
        let slot = self.nodes.len();
        self.nodes.push(Node {
            point,
            axis,
            left: None,
            right: None,
        });
        let (lo, hi) = idx.split_at_mut(mid);
        let left = self.build(lo, depth + 1);
        let right = self.build(&mut hi[1..], depth + 1);
        self.nodes[slot].left = left;
        self.nodes[slot].right = right;
        Some(slot)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The `q` nearest points to `query`, nearest first.
    pub fn nearest(&self, query: &[f64], q: usize) -> Vec<usize> {
        debug_assert_eq!(query.len(), self.d);
        let q = q.min(self.len());
        if q == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(q + 1);
        self.search(self.root, query, q, &mut heap);
        let mut out = heap.into_sorted_vec();
        out.truncate(q);
        out.into_iter().map(|c| c.index).collect()
    }

    fn search(
        &self,
        node: Option<usize>,
        query: &[f64],
        q: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        let Some(slot) = node else { return };
        let node = &self.nodes[slot];
        let p = &self.points[node.point * self.d..(node.point + 1) * self.d];
        let cand = Candidate {
            dist: squared_distance(query, p),
            index: node.point,
        };
        if heap.len() < q {
            heap.push(cand);
        } else if cand < *heap.peek().unwrap() {
            heap.pop();
            heap.push(cand);
        }
        let diff = query[node.axis] - p[node.axis];
        let (near, far) = if diff <= 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, query, q, heap);
        // Prune only on strict excess so equidistant lower indices are found.
        if heap.len() < q || diff * diff <= heap.peek().unwrap().dist {
            self.search(far, query, q, heap);
        }
    }
}
