use rand::seq::index::sample;
use rand::Rng;

use super::{GradientBundle, Trainable};
use crate::error::{Error, Result};

/// `|analytic − numeric| / max(1e-12, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-12)
}

/// Compare the analytic gradient returned by `loss` against central
/// differences over every parameter coordinate. Returns the max relative
/// error.
pub fn finite_difference_check<M, F>(model: &M, loss: F, step: f64) -> Result<f64>
where
    M: Trainable + Clone,
    F: Fn(&M) -> Result<(f64, GradientBundle)>,
{
    let total = model.parameter_count();
    check_coordinates(model, &loss, step, &mut (0..total))
}

/// Same as [`finite_difference_check`] over `samples` coordinates drawn
/// uniformly without replacement. Used for networks too wide to sweep.
pub fn finite_difference_check_sampled<M, F, R>(
    model: &M,
    loss: F,
    step: f64,
    samples: usize,
    rng: &mut R,
) -> Result<f64>
where
    M: Trainable + Clone,
    F: Fn(&M) -> Result<(f64, GradientBundle)>,
    R: Rng + ?Sized,
{
    let total = model.parameter_count();
    let mut picked = sample(rng, total, samples.min(total)).into_vec();
    picked.sort_unstable();
    check_coordinates(model, &loss, step, &mut picked.into_iter())
}

fn check_coordinates<M, F>(
    model: &M,
    loss: &F,
    step: f64,
    coords: &mut dyn Iterator<Item = usize>,
) -> Result<f64>
where
    M: Trainable + Clone,
    F: Fn(&M) -> Result<(f64, GradientBundle)>,
{
    if !(step > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let (base, analytic) = loss(model)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss {base}")));
    }
    if !analytic.matches(model) {
        return Err(Error::contract("analytic gradient does not mirror parameters"));
    }
    let analytic = analytic.flatten();
    let offsets: Vec<(usize, usize)> = {
        let mut acc = 0;
        model
            .parameters()
            .iter()
            .map(|m| {
                let start = acc;
                acc += m.as_slice().len();
                (start, acc)
            })
            .collect()
    };

    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for flat in coords {
        let tensor = offsets
            .iter()
            .position(|&(s, e)| flat >= s && flat < e)
            .ok_or_else(|| Error::contract("coordinate out of range"))?;
        let local = flat - offsets[tensor].0;
        let original = probe.parameters()[tensor].as_slice()[local];

        probe.parameters_mut()[tensor].as_mut_slice()[local] = original + step;
        let plus = loss(&probe)?.0;
        probe.parameters_mut()[tensor].as_mut_slice()[local] = original - step;
        let minus = loss(&probe)?.0;
        probe.parameters_mut()[tensor].as_mut_slice()[local] = original;

        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {flat}")));
        }
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic[flat], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[derive(Clone)]
    struct Params(Matrix);

    impl Trainable for Params {
        fn parameters(&self) -> Vec<&Matrix> {
            vec![&self.0]
        }
        fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn quadratic_loss_is_exact() {
        let p = Params(Matrix::from_vec(1, 3, vec![0.7, -1.3, 2.0]).unwrap());
        let err = finite_difference_check(
            &p,
            |m| {
                let v = m.0.as_slice();
                let loss = 0.5 * v.iter().map(|x| x * x).sum::<f64>();
                Ok((loss, GradientBundle(vec![m.0.clone()])))
            },
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-8, "error {err}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let p = Params(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let err = finite_difference_check(
            &p,
            |m| Ok((3.0, GradientBundle(vec![Matrix::zeros(m.0.rows(), m.0.cols())]))),
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let p = Params(Matrix::zeros(1, 1));
        let res = finite_difference_check(
            &p,
            |m| Ok((f64::NAN, GradientBundle(vec![m.0.clone()]))),
            1e-5,
        );
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let p = Params(Matrix::from_vec(1, 1, vec![2.0]).unwrap());
        let err = finite_difference_check(
            &p,
            |m| {
                let x = m.0.get(0, 0);
                Ok((x * x, GradientBundle(vec![m.0.clone()])))
            },
            1e-5,
        )
        .unwrap();
        assert!((err - 0.5).abs() < 1e-6);
    }
}
