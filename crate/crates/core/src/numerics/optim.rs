use super::{GradientBundle, Matrix};
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum: `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    learning_rate: f64,
    momentum: f64,
    velocity: Option<Vec<Matrix>>,
}

impl Sgd {
    pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
    pub const DEFAULT_MOMENTUM: f64 = 0.9;

    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::contract(format!(
                "learning rate must be non-negative, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::contract(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: None,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    pub fn velocity(&self) -> Option<&[Matrix]> {
        self.velocity.as_deref()
    }

    /// Apply one step. Non-finite gradients are rejected before anything is
    /// touched, so params and velocity stay as they were.
    pub fn step(&mut self, mut params: Vec<&mut Matrix>, grads: &GradientBundle) -> Result<()> {
        if params.len() != grads.0.len()
            || params.iter().zip(&grads.0).any(|(p, g)| p.shape() != g.shape())
        {
            return Err(Error::contract("gradient bundle does not mirror parameters"));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient bundle; step skipped".into()));
        }
        let velocity = self.velocity.get_or_insert_with(|| {
            grads
                .0
                .iter()
                .map(|g| Matrix::zeros(g.rows(), g.cols()))
                .collect()
        });
        if velocity.len() != grads.0.len() {
            return Err(Error::contract("optimizer state belongs to another module"));
        }
        for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grads.0) {
            let (ps, vs, gs) = (p.as_mut_slice(), v.as_mut_slice(), g.as_slice());
            for i in 0..ps.len() {
                vs[i] = self.momentum * vs[i] + gs[i];
                ps[i] -= self.learning_rate * vs[i];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_vec(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn plain_step() {
        let mut p = scalar(1.0);
        let mut opt = Sgd::new(0.1, 0.0).unwrap();
        opt.step(vec![&mut p], &GradientBundle(vec![scalar(2.0)])).unwrap();
        assert!((p.get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(0.3);
        let mut opt = Sgd::new(0.1, 0.9).unwrap();
        opt.step(vec![&mut p], &GradientBundle(vec![scalar(0.0)])).unwrap();
        assert_eq!(p.get(0, 0), 0.3);
    }

    #[test]
    fn two_momentum_steps_unroll_by_hand() {
        let mut p = scalar(0.0);
        let mut opt = Sgd::new(0.1, 0.9).unwrap();
        let g = GradientBundle(vec![scalar(1.0)]);
        opt.step(vec![&mut p], &g).unwrap();
        assert!((p.get(0, 0) + 0.1).abs() < 1e-15);
        opt.step(vec![&mut p], &g).unwrap();
        assert!((p.get(0, 0) + 0.29).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_side_effects() {
        let mut p = scalar(1.0);
        let mut opt = Sgd::new(0.1, 0.9).unwrap();
        let err = opt
            .step(vec![&mut p], &GradientBundle(vec![scalar(1.0)]))
            .and_then(|_| {
                let mut bad = scalar(0.0);
                bad.as_mut_slice()[0] = f64::INFINITY;
                opt.step(vec![&mut p], &GradientBundle(vec![bad]))
            });
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert!((p.get(0, 0) - 0.9).abs() < 1e-15);
        assert_eq!(opt.velocity().unwrap()[0].get(0, 0), 1.0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Sgd::new(0.1, 1.0).is_err());
        assert!(Sgd::new(-0.1, 0.0).is_err());
    }
}
