//! Constraint sets derived from ground-truth labels, for benchmarking.
//!
//! Both generators draw `ceil(f * n)` objects without replacement and emit
//! one constraint for every pair in the sample. The noise-free generator
//! emits hard ML/CL constraints that agree with the labels. The noisy
//! generator draws a confidence `w ~ U(l, 1)` per pair, keeps the correct
//! type with probability `w` and flips it otherwise, and emits soft SML/SCL
//! constraints with weight `w`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance_io::{ConstraintKind, ConstraintSet, ConstraintSetBuilder, Dataset};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("dataset has no ground-truth labels")]
    NoGroundTruth,
    #[error("noise lower bound {0} must lie in (0, 1]")]
    BadLowerBound(f64),
    #[error("fraction {0} must lie in (0, 1]")]
    BadFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenMode {
    NoiseFree,
    Noisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub fraction: f64,
    /// Lower bound of the confidence distribution (noisy mode only).
    pub lower: f64,
    pub seed: u64,
    pub mode: GenMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenManifest {
    pub fraction: f64,
    pub lower: Option<f64>,
    pub seed: u64,
    pub mode: GenMode,
    pub sample_size: usize,
    pub ml: usize,
    pub cl: usize,
    pub sml: usize,
    pub scl: usize,
    pub flipped: usize,
}

/// `ceil(f * n)`, guarding against `f * n` landing a hair above an integer.
pub fn sample_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

fn sampled<'a>(
    dataset: &'a Dataset,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, &'a [i64]), GenError> {
    let truth = dataset.ground_truth().ok_or(GenError::NoGroundTruth)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(GenError::BadFraction(fraction));
    }
    let m = sample_size(dataset.n(), fraction);
    let mut objs = sample(rng, dataset.n(), m).into_vec();
    objs.sort_unstable();
    Ok((objs, truth))
}

pub fn generate_noise_free(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(ConstraintSet, GenManifest), GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (objs, truth) = sampled(dataset, fraction, &mut rng)?;
    let mut b = ConstraintSetBuilder::new();
    for (x, &i) in objs.iter().enumerate() {
        for &j in &objs[x + 1..] {
            let kind = if truth[i] == truth[j] {
                ConstraintKind::MustLink
            } else {
                ConstraintKind::CannotLink
            };
            b.add(i, j, kind, 1.0);
        }
    }
    let cs = b.build();
    let manifest = GenManifest {
        fraction,
        lower: None,
        seed,
        mode: GenMode::NoiseFree,
        sample_size: objs.len(),
        ml: cs.ml.len(),
        cl: cs.cl.len(),
        sml: 0,
        scl: 0,
        flipped: 0,
    };
    Ok((cs, manifest))
}

pub fn generate_noisy(
    dataset: &Dataset,
    fraction: f64,
    lower: f64,
    seed: u64,
) -> Result<(ConstraintSet, GenManifest), GenError> {
    if !(lower > 0.0 && lower <= 1.0) {
        return Err(GenError::BadLowerBound(lower));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (objs, truth) = sampled(dataset, fraction, &mut rng)?;
    let mut b = ConstraintSetBuilder::new();
    let mut flipped = 0;
    for (x, &i) in objs.iter().enumerate() {
        for &j in &objs[x + 1..] {
            let w: f64 = rng.gen_range(lower..=1.0);
            let agree = rng.gen::<f64>() < w;
            let same = (truth[i] == truth[j]) == agree;
            if !agree {
                flipped += 1;
            }
            let kind = if same {
                ConstraintKind::SoftMustLink
            } else {
                ConstraintKind::SoftCannotLink
            };
            b.add(i, j, kind, w);
        }
    }
    let cs = b.build();
    let manifest = GenManifest {
        fraction,
        lower: Some(lower),
        seed,
        mode: GenMode::Noisy,
        sample_size: objs.len(),
        ml: 0,
        cl: 0,
        sml: cs.sml.len(),
        scl: cs.scl.len(),
        flipped,
    };
    Ok((cs, manifest))
}

pub fn generate(
    dataset: &Dataset,
    spec: &GenSpec,
) -> Result<(ConstraintSet, GenManifest), GenError> {
    match spec.mode {
        GenMode::NoiseFree => generate_noise_free(dataset, spec.fraction, spec.seed),
        GenMode::Noisy => generate_noisy(dataset, spec.fraction, spec.lower, spec.seed),
    }
}
