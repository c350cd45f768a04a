use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer's chosen operators (in draw / descending-score order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSelection {
    pub chosen: Vec<usize>,
    pub normalized_scores: Vec<f64>,
    pub log_prob: f64,
}

/// `max(1, ⌈d · L_max⌉)`.
pub fn adapt_depth(d: f64, l_max: usize) -> usize {
    let l_max = l_max.max(1);
    let raw = (d * l_max as f64).ceil();
    if raw.is_nan() || raw < 1.0 {
        1
    } else {
        (raw as usize).min(l_max)
    }
}

/// Indices sorted by descending score; ties keep the lower index first.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Minimal descending prefix whose cumulative score exceeds `tau`.
pub fn select_layer(scores: &[f64], tau: f64) -> Vec<usize> {
    let mut chosen = Vec::new();
    let mut mass = 0.0;
    for i in descending_order(scores) {
        chosen.push(i);
        mass += scores[i];
        if mass > tau {
            break;
        }
    }
    chosen
}

/// Draw operators without replacement, each with probability proportional
/// to its normalized score among those left, until the drawn mass exceeds
/// `tau`. The log-probability is the sum of the per-draw log-probabilities.
pub fn sample_layer<R: Rng + ?Sized>(scores: &[f64], tau: f64, rng: &mut R) -> LayerSelection {
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut chosen = Vec::new();
    let mut log_prob = 0.0;
    let mut mass = 0.0;
    while !remaining.is_empty() {
        let left: f64 = remaining.iter().map(|&i| scores[i]).sum();
        let pick = if remaining.len() == 1 {
            0
        } else {
            let u: f64 = rng.random::<f64>() * left;
            let mut acc = 0.0;
            let mut pos = remaining.len() - 1;
            for (p, &i) in remaining.iter().enumerate() {
                acc += scores[i];
                if u < acc {
                    pos = p;
                    break;
                }
            }
            pos
        };
        let i = remaining.remove(pick);
        log_prob += (scores[i] / left).ln();
        chosen.push(i);
        mass += scores[i];
        if mass > tau {
            break;
        }
    }
    LayerSelection {
        chosen,
        normalized_scores: scores.to_vec(),
        log_prob,
    }
}

/// Log-probability of drawing exactly `chosen` under [`sample_layer`]. Fails
/// if the sequence is not a valid stopped draw sequence.
pub fn sequence_log_prob(scores: &[f64], chosen: &[usize], tau: f64) -> Result<f64> {
    if chosen.is_empty() {
        return Err(Error::contract("empty layer selection"));
    }
    let mut taken = vec![false; scores.len()];
    let mut mass = 0.0;
    let mut lp = 0.0;
    for (t, &i) in chosen.iter().enumerate() {
        if i >= scores.len() || taken[i] {
            return Err(Error::contract(format!("invalid operator index {i} in selection")));
        }
        if mass > tau {
            return Err(Error::contract(format!(
                "selection continues past the stopping point at draw {t}"
            )));
        }
        let left: f64 = (0..scores.len()).filter(|&r| !taken[r]).map(|r| scores[r]).sum();
        lp += (scores[i] / left).ln();
        taken[i] = true;
        mass += scores[i];
    }
    if mass <= tau && taken.iter().any(|t| !t) {
        return Err(Error::contract("selection stops before its mass exceeds tau"));
    }
    Ok(lp)
}

/// `d ln P(chosen) / d logit_i` for softmax-normalized scores: every draw
/// contributes `onehot(j) − q` over the operators still available.
pub fn sequence_logit_gradient(scores: &[f64], chosen: &[usize]) -> Vec<f64> {
    let mut grad = vec![0.0; scores.len()];
    let mut available = vec![true; scores.len()];
    for &j in chosen {
        let left: f64 = (0..scores.len()).filter(|&r| available[r]).map(|r| scores[r]).sum();
        for i in 0..scores.len() {
            if available[i] {
                grad[i] -= scores[i] / left;
            }
        }
        grad[j] += 1.0;
        available[j] = false;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_cases() {
        assert_eq!(adapt_depth(0.5, 5), 3);
        assert_eq!(adapt_depth(1e-12, 5), 1);
        assert_eq!(adapt_depth(0.99, 5), 5);
        let got: Vec<usize> = [0.2, 0.4, 0.6, 0.8].iter().map(|&d| adapt_depth(d, 5)).collect();
        assert_eq!(got, vec![1, 2, 3, 4]);
    }

    #[test]
    fn threshold_cases() {
        assert_eq!(select_layer(&[0.5, 0.3, 0.2], 0.3), vec![0]);
        assert_eq!(select_layer(&[0.25; 4], 0.3), vec![0, 1]);
        assert_eq!(select_layer(&[0.2, 0.5, 0.3], 0.6), vec![1, 2]);
    }

    #[test]
    fn single_operator_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_layer(&[1.0], 0.3, &mut rng);
        assert_eq!(s.chosen, vec![0]);
        assert_eq!(s.log_prob, 0.0);
    }

    #[test]
    fn recorded_and_recomputed_log_probs_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scores = [0.1, 0.05, 0.4, 0.15, 0.3];
        for _ in 0..200 {
            let s = sample_layer(&scores, 0.6, &mut rng);
            let lp = sequence_log_prob(&scores, &s.chosen, 0.6).unwrap();
            assert!((lp - s.log_prob).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_sequences_are_rejected() {
        let scores = [0.5, 0.3, 0.2];
        assert!(sequence_log_prob(&scores, &[0, 1], 0.3).is_err());
        assert!(sequence_log_prob(&scores, &[2], 0.3).is_err());
        assert!(sequence_log_prob(&scores, &[2, 2], 0.3).is_err());
    }
}
