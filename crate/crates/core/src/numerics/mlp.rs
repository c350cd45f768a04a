use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GradientBundle, Matrix, Trainable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's own output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Layer sizes `[in, h1, ..., out]` and one activation per affine layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::contract("an MLP needs at least one layer"));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::contract(format!(
                "{} layers need {} activations, got {}",
                layer_sizes.len() - 1,
                layer_sizes.len() - 1,
                activations.len()
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::contract("layer sizes must be positive"));
        }
        Ok(Self {
            layer_sizes,
            activations,
        })
    }

    /// One ReLU hidden layer followed by a linear output.
    pub fn one_hidden(input: usize, hidden: usize, output: usize) -> Self {
        Self::new(
            vec![input, hidden, output],
            vec![Activation::Relu, Activation::Identity],
        )
        .expect("valid one-hidden-layer spec")
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn depth(&self) -> usize {
        self.activations.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

/// A dense feed-forward network: spec plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Dense>,
}

/// Per-layer activations recorded by [`Mlp::forward`]. `values[0]` is the
/// input, `values[i + 1]` the post-activation output of layer `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub fn input(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn output(&self) -> &[f64] {
        self.values.last().unwrap()
    }

    pub fn layer_output(&self, layer: usize) -> &[f64] {
        &self.values[layer + 1]
    }
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| Dense {
                weight: Matrix::xavier(w[1], w[0], rng),
                bias: Matrix::zeros(w[1], 1),
            })
            .collect();
        Self { spec, layers }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| Dense {
                weight: Matrix::zeros(w[1], w[0]),
                bias: Matrix::zeros(w[1], 1),
            })
            .collect();
        Self { spec, layers }
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Dense>) -> Result<Self> {
        if layers.len() != spec.depth() {
            return Err(Error::contract("layer count does not match spec"));
        }
        for (i, (layer, w)) in layers.iter().zip(spec.layer_sizes.windows(2)).enumerate() {
            if layer.weight.shape() != (w[1], w[0]) || layer.bias.shape() != (w[1], 1) {
                return Err(Error::contract(format!("layer {i} has the wrong shape")));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if input.len() != self.spec.input_size() {
            return Err(Error::contract(format!(
                "network expects {} inputs, got {}",
                self.spec.input_size(),
                input.len()
            )));
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.weight.matvec(values.last().unwrap())?;
            let act = self.spec.activations[i];
            let out = pre
                .iter()
                .zip(layer.bias.as_slice())
                .map(|(p, b)| act.apply(p + b))
                .collect();
            values.push(out);
        }
        let output = values.last().unwrap().clone();
        Ok((output, Tape { values }))
    }

    pub fn output(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input).map(|(o, _)| o)
    }

    /// Backpropagate `output_gradient` (dLoss/dOutput) through the tape.
    pub fn backward(&self, tape: &Tape, output_gradient: &[f64]) -> Result<(GradientBundle, Vec<f64>)> {
        let mut grads = GradientBundle::zeros_like(self);
        let input_grad = self.backward_into(tape, output_gradient, &mut grads.0, 1.0)?;
        Ok((grads, input_grad))
    }

    /// Accumulating variant: adds `scale * dLoss/dParam` into `grads`, which
    /// must be laid out like [`Trainable::parameters`].
    pub fn backward_into(
        &self,
        tape: &Tape,
        output_gradient: &[f64],
        grads: &mut [Matrix],
        scale: f64,
    ) -> Result<Vec<f64>> {
        if tape.values.len() != self.layers.len() + 1
            || tape.input().len() != self.spec.input_size()
        {
            return Err(Error::contract("tape was not produced by this network"));
        }
        if output_gradient.len() != self.spec.output_size() {
            return Err(Error::contract(format!(
                "output gradient has {} entries, network has {} outputs",
                output_gradient.len(),
                self.spec.output_size()
            )));
        }
        if grads.len() != 2 * self.layers.len() {
            return Err(Error::contract("gradient buffer does not mirror parameters"));
        }
        let mut upstream = output_gradient.to_vec();
        for i in (0..self.layers.len()).rev() {
            let act = self.spec.activations[i];
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&tape.values[i + 1])
                .map(|(g, y)| g * act.derivative_from_output(*y))
                .collect();
            grads[2 * i].add_outer(&delta, &tape.values[i], scale);
            for (b, d) in grads[2 * i + 1].as_mut_slice().iter_mut().zip(&delta) {
                *b += scale * d;
            }
            upstream = self.layers[i].weight.matvec_transposed(&delta)?;
        }
        Ok(upstream)
    }
}

impl Trainable for Mlp {
    fn parameters(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Temperature softmax with max subtraction.
pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Vec<f64> {
    assert!(temperature > 0.0, "temperature must be positive");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|l| ((l - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    softmax_with_temperature(logits, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = MlpSpec::new(vec![2, 2], vec![Activation::Identity]).unwrap();
        let net = Mlp::from_layers(
            spec,
            vec![Dense {
                weight: Matrix::identity(2),
                bias: Matrix::zeros(2, 1),
            }],
        )
        .unwrap();
        assert_eq!(net.output(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_sigmoid_layer_outputs_half() {
        let spec = MlpSpec::new(vec![3, 2], vec![Activation::Sigmoid]).unwrap();
        let net = Mlp::zeros(spec);
        assert_eq!(net.output(&[5.0, -3.0, 0.1]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn identity_layer_backward_is_linear_calculus() {
        let spec = MlpSpec::new(vec![2, 2], vec![Activation::Identity]).unwrap();
        let w = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let net = Mlp::from_layers(
            spec,
            vec![Dense {
                weight: w,
                bias: Matrix::zeros(2, 1),
            }],
        )
        .unwrap();
        let x = [0.5, -1.0];
        let (_, tape) = net.forward(&x).unwrap();
        let g = [1.0, 2.0];
        let (bundle, gin) = net.backward(&tape, &g).unwrap();
        // Wᵀg
        assert_eq!(gin, vec![7.0, 10.0]);
        // g xᵀ
        assert_eq!(bundle.0[0].as_slice(), &[0.5, -1.0, 1.0, -2.0]);
        assert_eq!(bundle.0[1].as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_bundle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::init(MlpSpec::one_hidden(4, 5, 3), &mut rng);
        let (_, tape) = net.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let (bundle, gin) = net.backward(&tape, &[0.0; 3]).unwrap();
        assert!(bundle.is_zero());
        assert!(gin.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_a_contract_error() {
        let net = Mlp::zeros(MlpSpec::one_hidden(3, 2, 1));
        assert!(matches!(net.forward(&[1.0]), Err(Error::Contract(_))));
        let (_, tape) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(net.backward(&tape, &[1.0, 1.0]).is_err());
        let other = Mlp::zeros(MlpSpec::one_hidden(2, 2, 1));
        assert!(other.backward(&tape, &[1.0]).is_err());
    }

    #[test]
    fn softmax_sums_to_one_at_low_temperature() {
        let p = softmax_with_temperature(&[1000.0, 999.0, -5.0], 1e-3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > 0.999_999);
    }
}
