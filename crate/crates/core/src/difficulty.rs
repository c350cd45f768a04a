//! Query difficulty estimator: a diagonal-Gaussian posterior over a latent
//! difficulty vector `z`, a reparameterized sample, and a one-hidden-layer
//! head decoding a scalar `d ∈ (0, 1)` where larger means harder.
//!
//! Training minimizes `cal(d, y) + λ_kl · KL(q(z|x) ‖ N(0, I))` where
//! `cal` is binary cross-entropy of the success probability `1 − d` against
//! the observed outcome `y` (1 = solved).

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Dense, GradientBundle, Matrix, Mlp, MlpSpec, Sgd, Trainable};

pub const DEFAULT_LATENT_DIM: usize = 16;
pub const DEFAULT_HEAD_HIDDEN: usize = 32;
pub const DEFAULT_LAMBDA_KL: f64 = 1e-2;
pub const DEFAULT_REPLAY_CAPACITY: usize = 4096;
pub const D_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyEstimate {
    pub z: Vec<f64>,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeRecord {
    pub query_embedding: EmbeddingVector,
    /// 1 = solved.
    pub y: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub loss: f64,
    pub cal: f64,
    pub kl: f64,
}

/// `−y·ln(1−d) − (1−y)·ln d`.
pub fn calibration_loss(d: f64, y: u8) -> f64 {
    if y == 1 {
        -(1.0 - d).ln()
    } else {
        -d.ln()
    }
}

/// Closed-form `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn gaussian_kl(p: &PosteriorParams) -> f64 {
    0.5 * p
        .mu
        .iter()
        .zip(&p.log_var)
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

pub fn difficulty_loss(d: f64, y: u8, p: &PosteriorParams, lambda_kl: f64) -> LossBreakdown {
    let cal = calibration_loss(d, y);
    let kl = gaussian_kl(p);
    LossBreakdown {
        loss: cal + lambda_kl * kl,
        cal,
        kl,
    }
}

/// `z = μ + exp(½ log σ²) ⊙ ε`.
pub fn sample_latent(p: &PosteriorParams, epsilon: &[f64]) -> Result<Vec<f64>> {
    if epsilon.len() != p.mu.len() {
        return Err(Error::contract(format!(
            "noise has {} entries, latent has {}",
            epsilon.len(),
            p.mu.len()
        )));
    }
    Ok(p.mu
        .iter()
        .zip(&p.log_var)
        .zip(epsilon)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

fn clamp_d(raw: f64) -> (f64, bool) {
    let d = raw.clamp(D_EPSILON, 1.0 - D_EPSILON);
    (d, d != raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyEstimator {
    mu: Dense,
    log_var: Dense,
    head: Mlp,
}

impl DifficultyEstimator {
    /// Random encoder and hidden layer; zero output layer, so every query
    /// starts at `d = 0.5`.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, latent_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mu = Dense {
            weight: Matrix::xavier(latent_dim, input_dim, rng),
            bias: Matrix::zeros(latent_dim, 1),
        };
        let log_var = Dense {
            weight: Matrix::xavier(latent_dim, input_dim, rng),
            bias: Matrix::zeros(latent_dim, 1),
        };
        let mut head = Mlp::init(MlpSpec::one_hidden(latent_dim, hidden, 1), rng);
        head.zero_output_layer();
        Self { mu, log_var, head }
    }

    pub fn from_parts(mu: Dense, log_var: Dense, head: Mlp) -> Result<Self> {
        let (k, h) = mu.weight.shape();
        if log_var.weight.shape() != (k, h)
            || mu.bias.shape() != (k, 1)
            || log_var.bias.shape() != (k, 1)
            || head.spec().input_size() != k
            || head.spec().output_size() != 1
        {
            return Err(Error::contract("inconsistent estimator shapes"));
        }
        Ok(Self { mu, log_var, head })
    }

    pub fn input_dim(&self) -> usize {
        self.mu.weight.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.weight.rows()
    }

    pub fn head_mut(&mut self) -> &mut Mlp {
        &mut self.head
    }

    pub fn encoder_mut(&mut self) -> (&mut Dense, &mut Dense) {
        (&mut self.mu, &mut self.log_var)
    }

    pub fn encode(&self, x: &EmbeddingVector) -> Result<PosteriorParams> {
        if x.dim() != self.input_dim() {
            return Err(Error::contract(format!(
                "estimator expects dim {}, got {}",
                self.input_dim(),
                x.dim()
            )));
        }
        let affine = |layer: &Dense| -> Result<Vec<f64>> {
            let mut out = layer.weight.matvec(x.as_slice())?;
            out.iter_mut()
                .zip(layer.bias.as_slice())
                .for_each(|(o, b)| *o += b);
            Ok(out)
        };
        Ok(PosteriorParams {
            mu: affine(&self.mu)?,
            log_var: affine(&self.log_var)?,
        })
    }

    fn head_logit(&self, z: &[f64]) -> Result<(f64, crate::numerics::Tape)> {
        let (out, tape) = self.head.forward(z)?;
        Ok((out[0], tape))
    }

    /// `sigmoid(head(z))` clamped to `[1e-12, 1 − 1e-12]`.
    pub fn decode_difficulty(&self, z: &[f64]) -> Result<f64> {
        Ok(clamp_d(sigmoid(self.head_logit(z)?.0)).0)
    }

    /// Inference path: posterior mean, no noise.
    pub fn estimate(&self, x: &EmbeddingVector) -> Result<DifficultyEstimate> {
        let p = self.encode(x)?;
        let d = self.decode_difficulty(&p.mu)?;
        Ok(DifficultyEstimate { z: p.mu, d })
    }

    /// Mean loss over `(x, y, ε)` triples and its exact gradient with the
    /// noise held fixed.
    pub fn loss_and_gradient(
        &self,
        batch: &[(&EmbeddingVector, u8, &[f64])],
        lambda_kl: f64,
    ) -> Result<(LossBreakdown, GradientBundle)> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grads = GradientBundle::zeros_like(self);
        let mut total = LossBreakdown {
            loss: 0.0,
            cal: 0.0,
            kl: 0.0,
        };
        for &(x, y, eps) in batch {
            if y > 1 {
                return Err(Error::contract(format!("outcome label must be 0 or 1, got {y}")));
            }
            let post = self.encode(x)?;
            let z = sample_latent(&post, eps)?;
            let (logit, tape) = self.head_logit(&z)?;
            let (d, clamped) = clamp_d(sigmoid(logit));
            let parts = difficulty_loss(d, y, &post, lambda_kl);
            total.loss += scale * parts.loss;
            total.cal += scale * parts.cal;
            total.kl += scale * parts.kl;

            // dcal/dlogit = d − (1 − y) away from the clamp, zero on it.
            let dlogit = if clamped { 0.0 } else { d - (1.0 - f64::from(y)) };
            let (encoder_grads, head_grads) = grads.0.split_at_mut(4);
            let gz = self.head.backward_into(&tape, &[dlogit], head_grads, scale)?;

            let k = self.latent_dim();
            let mut dmu = vec![0.0; k];
            let mut dlv = vec![0.0; k];
            for i in 0..k {
                let sigma = (0.5 * post.log_var[i]).exp();
                dmu[i] = gz[i] + lambda_kl * post.mu[i];
                dlv[i] = gz[i] * 0.5 * sigma * eps[i]
                    + lambda_kl * 0.5 * (post.log_var[i].exp() - 1.0);
            }
            let [w_mu, b_mu, w_lv, b_lv] = encoder_grads else {
                unreachable!()
            };
            w_mu.add_outer(&dmu, x.as_slice(), scale);
            w_lv.add_outer(&dlv, x.as_slice(), scale);
            for i in 0..k {
                b_mu.as_mut_slice()[i] += scale * dmu[i];
                b_lv.as_mut_slice()[i] += scale * dlv[i];
            }
        }
        Ok((total, grads))
    }
}

impl Trainable for DifficultyEstimator {
    fn parameters(&self) -> Vec<&Matrix> {
        let mut p = vec![
            &self.mu.weight,
            &self.mu.bias,
            &self.log_var.weight,
            &self.log_var.bias,
        ];
        p.extend(self.head.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = vec![
            &mut self.mu.weight,
            &mut self.mu.bias,
            &mut self.log_var.weight,
            &mut self.log_var.bias,
        ];
        p.extend(self.head.parameters_mut());
        p
    }
}

/// Bounded FIFO of observed outcomes.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: VecDeque<OutcomeRecord>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            records: VecDeque::new(),
        }
    }

    pub fn push(&mut self, record: OutcomeRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<OutcomeRecord> {
        if self.records.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| self.records[rng.random_range(0..self.records.len())].clone())
            .collect()
    }
}

/// Gradient steps on the estimator. Owns the optimizer state and the seeded
/// training-noise stream.
#[derive(Debug, Clone)]
pub struct DifficultyFitter {
    optimizer: Sgd,
    noise: ChaCha8Rng,
    pub lambda_kl: f64,
}

impl DifficultyFitter {
    pub fn new(learning_rate: f64, momentum: f64, lambda_kl: f64, noise_seed: u64) -> Result<Self> {
        if !(lambda_kl > 0.0) {
            return Err(Error::contract("lambda_kl must be positive"));
        }
        Ok(Self {
            optimizer: Sgd::new(learning_rate, momentum)?,
            noise: ChaCha8Rng::seed_from_u64(noise_seed),
            lambda_kl,
        })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.optimizer.set_learning_rate(lr);
    }

    /// One step on the mean loss; returns the pre-step mean loss.
    pub fn fit_step(&mut self, estimator: &mut DifficultyEstimator, batch: &[OutcomeRecord]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::contract("fit_step needs a non-empty batch"));
        }
        let k = estimator.latent_dim();
        let noise: Vec<Vec<f64>> = batch
            .iter()
            .map(|_| (0..k).map(|_| self.noise.sample(StandardNormal)).collect())
            .collect();
        let triples: Vec<(&EmbeddingVector, u8, &[f64])> = batch
            .iter()
            .zip(&noise)
            .map(|(r, e)| (&r.query_embedding, r.y, e.as_slice()))
            .collect();
        let (loss, grads) = estimator.loss_and_gradient(&triples, self.lambda_kl)?;
        if !loss.loss.is_finite() {
            return Err(Error::NonFinite(format!("difficulty loss {}", loss.loss)));
        }
        self.optimizer.step(estimator.parameters_mut(), &grads)?;
        Ok(loss.loss)
    }
}
