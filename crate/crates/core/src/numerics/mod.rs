//! Dense-network substrate: matrices, feed-forward layers with analytic
//! gradients, SGD with momentum, a central finite-difference oracle and the
//! JSON parameter checkpoint.

mod checkpoint;
mod gradcheck;
mod matrix;
mod mlp;
mod optim;

pub use checkpoint::{Checkpoint, ModuleParams, CHECKPOINT_VERSION};
pub use gradcheck::{finite_difference_check, finite_difference_check_sampled, relative_error};
pub use matrix::{dot, l2_norm, Matrix};
pub use mlp::{sigmoid, softmax, softmax_with_temperature, Activation, Dense, Mlp, MlpSpec, Tape};
pub use optim::Sgd;

use crate::error::{Error, Result};

/// Anything that owns an ordered list of trainable tensors.
pub trait Trainable {
    fn parameters(&self) -> Vec<&Matrix>;
    fn parameters_mut(&mut self) -> Vec<&mut Matrix>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|m| m.as_slice().len()).sum()
    }

    fn module_params(&self) -> ModuleParams {
        ModuleParams::from_matrices(self.parameters())
    }

    fn load_module_params(&mut self, params: &ModuleParams) -> Result<()> {
        let matrices = params.to_matrices()?;
        let mut mine = self.parameters_mut();
        if matrices.len() != mine.len() {
            return Err(Error::contract(format!(
                "checkpoint has {} tensors, module has {}",
                matrices.len(),
                mine.len()
            )));
        }
        for (dst, src) in mine.iter_mut().zip(matrices) {
            if dst.shape() != src.shape() {
                return Err(Error::contract(format!(
                    "checkpoint tensor shape {:?} does not match {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            **dst = src;
        }
        Ok(())
    }
}

/// Gradients laid out exactly like a module's [`Trainable::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle(pub Vec<Matrix>);

impl GradientBundle {
    pub fn zeros_like<T: Trainable + ?Sized>(module: &T) -> Self {
        Self(
            module
                .parameters()
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        )
    }

    pub fn matches<T: Trainable + ?Sized>(&self, module: &T) -> bool {
        let params = module.parameters();
        params.len() == self.0.len()
            && params.iter().zip(&self.0).all(|(p, g)| p.shape() == g.shape())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Matrix::is_finite)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(Matrix::is_zero)
    }

    pub fn add_scaled(&mut self, other: &GradientBundle, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_scaled(b, scale);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|m| m.scale(s));
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
    }

    /// Concatenate bundles of several modules into one.
    pub fn concat(parts: Vec<GradientBundle>) -> Self {
        Self(parts.into_iter().flat_map(|b| b.0).collect())
    }
}
