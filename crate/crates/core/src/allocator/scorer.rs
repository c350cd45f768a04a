use rand::Rng;

use super::{LayerSelection, OperatorCatalog};
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::numerics::{softmax, GradientBundle, Matrix, Mlp, MlpSpec, Trainable};

pub const DEFAULT_SCORER_HIDDEN: usize = 64;

/// Scores every catalog operator against the planning context
/// `z ‖ v(Q) ‖ Σv(layer 1) ‖ … ‖ Σv(layer L_max−1)` (unused history slots are
/// zero). The operator's own embedding is appended to the context so the
/// network is shared across operators and carries no positional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorScorer {
    net: Mlp,
    latent_dim: usize,
    embed_dim: usize,
    history_slots: usize,
}

/// First-layer pre-activations contributed by each operator embedding.
#[derive(Debug, Clone)]
pub struct OperatorProjections(Vec<Vec<f64>>);

/// Hidden activations of one scoring pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ScoringPass {
    pub context: Vec<f64>,
    pub raw: Vec<f64>,
    hidden: Vec<Vec<f64>>,
}

/// Gradient accumulator. Operator-embedding contributions to the first
/// layer are summed per operator and folded in once at [`Self::finish`].
#[derive(Debug, Clone)]
pub struct ScorerGradient {
    bundle: GradientBundle,
    operator_delta: Vec<Vec<f64>>,
}

impl OperatorScorer {
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        embed_dim: usize,
        l_max: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let history_slots = l_max.max(1) - 1;
        let input = latent_dim + embed_dim * (1 + history_slots) + embed_dim;
        let mut net = Mlp::init(MlpSpec::one_hidden(input, hidden, 1), rng);
        net.zero_output_layer();
        Self {
            net,
            latent_dim,
            embed_dim,
            history_slots,
        }
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn history_slots(&self) -> usize {
        self.history_slots
    }

    pub fn context_len(&self) -> usize {
        self.latent_dim + self.embed_dim * (1 + self.history_slots)
    }

    pub fn build_context(
        &self,
        z: &[f64],
        query: &EmbeddingVector,
        history: &[LayerSelection],
        catalog: &OperatorCatalog,
    ) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim {
            return Err(Error::contract(format!(
                "scorer expects latent dim {}, got {}",
                self.latent_dim,
                z.len()
            )));
        }
        if query.dim() != self.embed_dim || catalog.dim() != self.embed_dim {
            return Err(Error::contract("embedding dim does not match the scorer"));
        }
        if history.len() > self.history_slots {
            return Err(Error::contract(format!(
                "history of {} layers exceeds {} slots",
                history.len(),
                self.history_slots
            )));
        }
        let mut ctx = Vec::with_capacity(self.context_len());
        ctx.extend_from_slice(z);
        ctx.extend_from_slice(query.as_slice());
        for slot in 0..self.history_slots {
            let mut sum = vec![0.0; self.embed_dim];
            if let Some(layer) = history.get(slot) {
                for &i in &layer.chosen {
                    if i >= catalog.len() {
                        return Err(Error::contract(format!("operator index {i} out of range")));
                    }
                    for (s, v) in sum.iter_mut().zip(catalog.get(i).embedding.as_slice()) {
                        *s += v;
                    }
                }
            }
            ctx.extend(sum);
        }
        Ok(ctx)
    }

    pub fn project_operators(&self, catalog: &OperatorCatalog) -> OperatorProjections {
        let w1 = &self.net.layers()[0].weight;
        let offset = self.context_len();
        OperatorProjections(
            catalog
                .iter()
                .map(|o| w1.matvec_window(o.embedding.as_slice(), offset))
                .collect(),
        )
    }

    pub fn score(&self, context: &[f64], projections: &OperatorProjections) -> ScoringPass {
        let layers = self.net.layers();
        let (w1, b1) = (&layers[0].weight, &layers[0].bias);
        let (w2, b2) = (&layers[1].weight, &layers[1].bias);
        let shared = w1.matvec_window(context, 0);
        let mut raw = Vec::with_capacity(projections.0.len());
        let mut hidden = Vec::with_capacity(projections.0.len());
        for proj in &projections.0 {
            let h: Vec<f64> = shared
                .iter()
                .zip(proj)
                .zip(b1.as_slice())
                .map(|((s, p), b)| (s + p + b).max(0.0))
                .collect();
            raw.push(h.iter().zip(w2.row(0)).map(|(a, w)| a * w).sum::<f64>() + b2.get(0, 0));
            hidden.push(h);
        }
        ScoringPass {
            context: context.to_vec(),
            raw,
            hidden,
        }
    }

    /// Softmax-normalized compatibility of every operator for the next layer.
    pub fn score_operators(
        &self,
        z: &[f64],
        query: &EmbeddingVector,
        history: &[LayerSelection],
        catalog: &OperatorCatalog,
    ) -> Result<Vec<f64>> {
        let ctx = self.build_context(z, query, history, catalog)?;
        Ok(softmax(&self.score(&ctx, &self.project_operators(catalog)).raw))
    }

    pub fn gradient(&self, catalog: &OperatorCatalog) -> ScorerGradient {
        ScorerGradient {
            bundle: GradientBundle::zeros_like(&self.net),
            operator_delta: vec![vec![0.0; self.net.spec().layer_sizes[1]]; catalog.len()],
        }
    }

    /// Add `Σᵢ raw_grad[i] · ∂raw_i/∂θ` for one scoring pass.
    pub fn accumulate(&self, pass: &ScoringPass, raw_grad: &[f64], acc: &mut ScorerGradient) {
        let w2 = &self.net.layers()[1].weight;
        let hidden_size = w2.cols();
        let mut shared_delta = vec![0.0; hidden_size];
        for (i, (&g, h)) in raw_grad.iter().zip(&pass.hidden).enumerate() {
            if g == 0.0 {
                continue;
            }
            acc.bundle.0[2].add_outer(&[g], h, 1.0);
            acc.bundle.0[3].as_mut_slice()[0] += g;
            for j in 0..hidden_size {
                if h[j] > 0.0 {
                    let delta = g * w2.get(0, j);
                    shared_delta[j] += delta;
                    acc.operator_delta[i][j] += delta;
                }
            }
        }
        acc.bundle.0[0].add_outer_window(&shared_delta, &pass.context, 0, 1.0);
        for (b, d) in acc.bundle.0[1].as_mut_slice().iter_mut().zip(&shared_delta) {
            *b += d;
        }
    }

    pub fn finish(&self, mut acc: ScorerGradient, catalog: &OperatorCatalog) -> GradientBundle {
        let offset = self.context_len();
        for (delta, op) in acc.operator_delta.iter().zip(catalog.iter()) {
            acc.bundle.0[0].add_outer_window(delta, op.embedding.as_slice(), offset, 1.0);
        }
        acc.bundle
    }
}

impl Trainable for OperatorScorer {
    fn parameters(&self) -> Vec<&Matrix> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.net.parameters_mut()
    }
}
