//! Finite-difference gradient suites for the three trainable modules, run at
//! reduced widths so every coordinate (or a large sample) can be probed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::allocator::{Allocator, OperatorCatalog, PlanMode};
use crate::difficulty::{DifficultyEstimate, DifficultyEstimator};
use crate::embedding::{EmbeddingVector, HashingEmbedder};
use crate::error::Result;
use crate::numerics::{finite_difference_check, finite_difference_check_sampled, Matrix, Trainable};
use crate::router::{ModelPool, Router};

pub const FD_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const ROUTER_SAMPLED_COORDINATES: usize = 1500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    pub seeds: usize,
    pub max_relative_error: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= GRADCHECK_TOLERANCE
    }
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> EmbeddingVector {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    EmbeddingVector::normalized(v).expect("finite")
}

fn randomize<R: Rng + ?Sized>(m: &mut Matrix, scale: f64, rng: &mut R) {
    for v in m.as_mut_slice() {
        *v = scale * rng.sample::<f64, _>(StandardNormal);
    }
}

/// Difficulty loss (calibration + KL) through the reparameterized sample.
pub fn difficulty_suite(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, k, m) = (12, 4, 6);
    let mut est = DifficultyEstimator::new(h, k, m, &mut rng);
    for p in est.parameters_mut() {
        randomize(p, 0.5, &mut rng);
    }
    let xs: Vec<EmbeddingVector> = (0..3).map(|_| random_unit(h, &mut rng)).collect();
    let eps: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..k).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let ys = [0u8, 1, 1];
    finite_difference_check(
        &est,
        |e: &DifficultyEstimator| {
            let batch: Vec<(&EmbeddingVector, u8, &[f64])> = xs
                .iter()
                .zip(ys)
                .zip(&eps)
                .map(|((x, y), e)| (x, y, e.as_slice()))
                .collect();
            let (loss, g) = e.loss_and_gradient(&batch, 0.05)?;
            Ok((loss.loss, g))
        },
        FD_STEP,
    )
}

fn small_world(seed: u64, h: usize) -> Result<(OperatorCatalog, ModelPool)> {
    let embedder = HashingEmbedder::new(h, seed);
    Ok((OperatorCatalog::builtin(&embedder)?, ModelPool::builtin(&embedder)?))
}

fn random_estimate<R: Rng + ?Sized>(k: usize, d: f64, rng: &mut R) -> DifficultyEstimate {
    DifficultyEstimate {
        z: (0..k).map(|_| rng.sample(StandardNormal)).collect(),
        d,
    }
}

/// Log-probability of a sampled multi-layer plan under the operator scorer,
/// plus a random linear probe on the raw scores. The log-probability alone
/// is invariant to shifting every score, which leaves coordinates whose
/// exact derivative is zero and whose finite difference is pure rounding;
/// the probe removes that symmetry.
pub fn allocator_suite(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, k) = (10, 4);
    let (catalog, _) = small_world(seed, h)?;
    let mut alloc = Allocator::new(k, h, 0.3, 3, 8, &mut rng)?;
    for p in alloc.parameters_mut() {
        randomize(p, 0.5, &mut rng);
    }
    let query = random_unit(h, &mut rng);
    let estimate = random_estimate(k, 0.9, &mut rng);
    let plan = alloc.build_plan(&query, &estimate, &catalog, PlanMode::Sampled, &mut rng)?;
    let probe: Vec<Vec<f64>> = (0..plan.depth)
        .map(|_| (0..catalog.len()).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    finite_difference_check(
        &alloc,
        |a: &Allocator| {
            let mut value = a.layers_log_prob(&plan, &query, &estimate, &catalog)?;
            let mut acc = a.gradient(&catalog);
            a.accumulate_log_prob_gradient(&plan, &query, &estimate.z, &catalog, 1.0, &mut acc)?;
            let scorer = a.scorer();
            let projections = scorer.project_operators(&catalog);
            for (l, c) in probe.iter().enumerate() {
                let ctx = scorer.build_context(&estimate.z, &query, &plan.layers[..l], &catalog)?;
                let pass = scorer.score(&ctx, &projections);
                value += pass.raw.iter().zip(c).map(|(r, c)| r * c).sum::<f64>();
                scorer.accumulate(&pass, c, &mut acc);
            }
            Ok((value, a.finish_gradient(acc, &catalog)))
        },
        FD_STEP,
    )
}

/// Log-probability of sampled model assignments under the router.
pub fn router_suite(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, k) = (10, 4);
    let (catalog, pool) = small_world(seed, h)?;
    let alloc = Allocator::new(k, h, 0.3, 3, 8, &mut rng)?;
    let router = Router::new(h, k, 0.7, &mut rng)?;
    let query = random_unit(h, &mut rng);
    let estimate = random_estimate(k, 0.9, &mut rng);
    let mut plan = alloc.build_plan(&query, &estimate, &catalog, PlanMode::Sampled, &mut rng)?;
    router.assign_models(&mut plan, &query, &estimate, &catalog, &pool, PlanMode::Sampled, &mut rng)?;
    finite_difference_check_sampled(
        &router,
        |r: &Router| {
            let lp = r.assignments_log_prob(&plan, &query, &estimate, &catalog, &pool)?;
            let g = r.log_prob_gradient(&plan, &query, &estimate.z, &catalog, &pool, 1.0)?;
            Ok((lp, g))
        },
        FD_STEP,
        ROUTER_SAMPLED_COORDINATES,
        &mut rng,
    )
}

/// Run every suite over `seeds` seeds starting at `first_seed`.
pub fn run_gradient_suites(first_seed: u64, seeds: usize) -> Result<Vec<SuiteResult>> {
    let suites: [(&str, fn(u64) -> Result<f64>); 3] = [
        ("difficulty", difficulty_suite),
        ("allocator", allocator_suite),
        ("router", router_suite),
    ];
    suites
        .iter()
        .map(|(name, f)| {
            let mut worst: f64 = 0.0;
            for s in 0..seeds as u64 {
                worst = worst.max(f(first_seed + s)?);
            }
            Ok(SuiteResult {
                suite: name.to_string(),
                seeds,
                max_relative_error: worst,
            })
        })
        .collect()
}
