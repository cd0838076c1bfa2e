#![allow(dead_code)]

use pccc::instance_io::{ConstraintKind, ConstraintSet, ConstraintSetBuilder, Dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gaussian-ish blobs (sum of uniforms) around the given centers, `per`
/// objects each, labeled by blob.
pub fn blobs(seed: u64, per: usize, centers: &[Vec<f64>], spread: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(per * centers.len());
    let mut truth = Vec::with_capacity(per * centers.len());
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            let row = center
                .iter()
                .map(|&x| x + spread * ((0..3).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>()))
                .collect();
            rows.push(row);
            truth.push(c as i64);
        }
    }
    Dataset::from_rows(&rows, Some(truth)).unwrap()
}

/// Centers on a `cols`-wide grid with the given spacing.
pub fn grid(count: usize, cols: usize, spacing: f64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| vec![(i % cols) as f64 * spacing, (i / cols) as f64 * spacing])
        .collect()
}

/// `count` random soft cannot-links between objects with different labels.
pub fn random_scl(dataset: &Dataset, count: usize, seed: u64) -> ConstraintSet {
    let truth = dataset.ground_truth().unwrap();
    let n = dataset.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ConstraintSetBuilder::new();
    let mut added = 0;
    while added < count {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if i != j && truth[i] != truth[j] {
            b.add(i, j, ConstraintKind::SoftCannotLink, 1.0);
            added += 1;
        }
    }
    b.build()
}

pub fn truth_labels(dataset: &Dataset) -> Vec<usize> {
    dataset
        .ground_truth()
        .unwrap()
        .iter()
        .map(|&t| t as usize)
        .collect()
}
