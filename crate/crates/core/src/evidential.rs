//! Dirichlet evidence math for the classifier head.
//!
//! Non-negative per-class evidence `e` parameterizes a Dirichlet with
//! `α = e + 1`. Its strength `S = Σα` yields the uncertainty `u = K / S` and
//! the expected class probabilities `p̂ = α / S`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidentialOutput {
    pub evidence: Vec<f64>,
    pub alpha: Vec<f64>,
    pub strength: f64,
    pub uncertainty: f64,
    pub expected_prob: Vec<f64>,
}

impl EvidentialOutput {
    pub fn from_evidence(evidence: &[f64]) -> Result<Self> {
        if evidence.len() < 2 {
            return Err(Error::Contract(format!("need >= 2 classes, got {}", evidence.len())));
        }
        if let Some(e) = evidence.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
            return Err(Error::Contract(format!("evidence must be finite and >= 0, got {e}")));
        }
        let alpha: Vec<f64> = evidence.iter().map(|e| e + 1.0).collect();
        let strength: f64 = alpha.iter().sum();
        Ok(EvidentialOutput {
            evidence: evidence.to_vec(),
            uncertainty: alpha.len() as f64 / strength,
            expected_prob: alpha.iter().map(|a| a / strength).collect(),
            alpha,
            strength,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }
}

/// Numerically stable softplus, the evidence activation.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Trigamma ψ'(x) for x > 0: recurrence up to x ≥ 6, then the asymptotic
/// series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let z = 1.0 / (x * x);
    acc + 1.0 / x
        + z / 2.0
        + (1.0 / x) * z * (1.0 / 6.0 - z * (1.0 / 30.0 - z * (1.0 / 42.0 - z * (1.0 / 30.0 - z * 5.0 / 66.0))))
}

/// KL(Dir(α) ‖ Dir(1, …, 1)).
pub fn kl_to_uniform(alpha: &[f64]) -> f64 {
    let k = alpha.len() as f64;
    let s: f64 = alpha.iter().sum();
    let psi_s = digamma(s);
    ln_gamma(s) - ln_gamma(k) - alpha.iter().map(|a| ln_gamma(*a)).sum::<f64>()
        + alpha.iter().map(|a| (a - 1.0) * (digamma(*a) - psi_s)).sum::<f64>()
}

/// KL annealing weight `min(1, epoch / anneal_epochs)`.
pub fn kl_weight(epoch: usize, anneal_epochs: usize) -> f64 {
    if anneal_epochs == 0 {
        1.0
    } else {
        (epoch as f64 / anneal_epochs as f64).min(1.0)
    }
}

fn check_one_hot(target: &[f64], k: usize) -> Result<()> {
    let ones = target.iter().filter(|v| **v == 1.0).count();
    let zeros = target.iter().filter(|v| **v == 0.0).count();
    if target.len() != k || ones != 1 || ones + zeros != k {
        return Err(Error::Contract(format!("target {target:?} is not one-hot over {k} classes")));
    }
    Ok(())
}

/// Expected squared error under the Dirichlet plus the annealed KL penalty
/// on misleading evidence:
///
/// `Σ_k (y_k − p̂_k)² + p̂_k(1 − p̂_k)/(S + 1) + λ·KL(Dir(α̃) ‖ Dir(1))`
/// with `α̃ = y + (1 − y)⊙α`.
pub fn evidential_loss(out: &EvidentialOutput, target: &[f64], kl_lambda: f64) -> Result<f64> {
    Ok(loss_and_grad(out, target, kl_lambda)?.0)
}

/// Loss and its gradient with respect to the evidence vector.
pub fn loss_and_grad(out: &EvidentialOutput, target: &[f64], kl_lambda: f64) -> Result<(f64, Vec<f64>)> {
    let k = out.num_classes();
    check_one_hot(target, k)?;
    let s = out.strength;
    let p = &out.expected_prob;

    let mut loss = 0.0;
    for j in 0..k {
        loss += (target[j] - p[j]).powi(2) + p[j] * (1.0 - p[j]) / (s + 1.0);
    }
    // dL/dp_k, plus the direct dependence on S through the variance term.
    let dl_dp: Vec<f64> = (0..k)
        .map(|j| -2.0 * (target[j] - p[j]) + (1.0 - 2.0 * p[j]) / (s + 1.0))
        .collect();
    let dl_ds_direct = -(0..k).map(|j| p[j] * (1.0 - p[j])).sum::<f64>() / (s + 1.0).powi(2);
    // dp_k/dα_j = (δ_kj − p_k)/S
    let weighted: f64 = (0..k).map(|j| dl_dp[j] * p[j]).sum();
    let mut grad: Vec<f64> = (0..k).map(|j| (dl_dp[j] - weighted) / s + dl_ds_direct).collect();

    if kl_lambda != 0.0 {
        let tilde: Vec<f64> = (0..k)
            .map(|j| target[j] + (1.0 - target[j]) * out.alpha[j])
            .collect();
        loss += kl_lambda * kl_to_uniform(&tilde);
        let s_t: f64 = tilde.iter().sum();
        let tri_s = trigamma(s_t);
        let excess: f64 = tilde.iter().map(|a| a - 1.0).sum();
        for j in 0..k {
            if target[j] == 0.0 {
                let d = (tilde[j] - 1.0) * trigamma(tilde[j]) - tri_s * excess;
                grad[j] += kl_lambda * d;
            }
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_evidence_is_maximally_uncertain() {
        let o = EvidentialOutput::from_evidence(&[0.0, 0.0]).unwrap();
        assert_eq!(o.alpha, vec![1.0, 1.0]);
        assert_eq!(o.strength, 2.0);
        assert_eq!(o.uncertainty, 1.0);
        assert_eq!(o.expected_prob, vec![0.5, 0.5]);
    }

    #[test]
    fn confident_evidence() {
        let o = EvidentialOutput::from_evidence(&[9.0, 0.0]).unwrap();
        assert_eq!(o.alpha, vec![10.0, 1.0]);
        assert_eq!(o.strength, 11.0);
        assert_abs_diff_eq!(o.uncertainty, 2.0 / 11.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o.expected_prob[0], 10.0 / 11.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o.expected_prob[1], 1.0 / 11.0, epsilon = 1e-15);
    }

    #[test]
    fn uncertainty_decoupled_from_probability() {
        let o = EvidentialOutput::from_evidence(&[4.0, 4.0]).unwrap();
        assert_abs_diff_eq!(o.uncertainty, 0.2, epsilon = 1e-15);
        assert_eq!(o.expected_prob, vec![0.5, 0.5]);
    }

    #[test]
    fn loss_hand_value() {
        let o = EvidentialOutput::from_evidence(&[0.0, 0.0]).unwrap();
        // (0.5² + 0.5²) + 2·(0.25/3)
        let l = evidential_loss(&o, &[1.0, 0.0], 0.0).unwrap();
        assert_abs_diff_eq!(l, 0.5 + 0.5 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l, 0.6667, epsilon = 1e-4);
    }

    #[test]
    fn kl_of_uniform_is_zero() {
        assert_abs_diff_eq!(kl_to_uniform(&[1.0, 1.0]), 0.0, epsilon = 1e-12);
        assert!(kl_to_uniform(&[3.0, 1.0]) > 0.0);
    }

    #[test]
    fn loss_vanishes_with_confident_correct_evidence() {
        let mut last = f64::INFINITY;
        for t in [1e1, 1e3, 1e6, 1e9] {
            let o = EvidentialOutput::from_evidence(&[t, 0.0]).unwrap();
            let l = evidential_loss(&o, &[1.0, 0.0], 1.0).unwrap();
            assert!(l < last);
            last = l;
        }
        assert!(last < 1e-8);
    }

    #[test]
    fn rejects_non_one_hot_targets() {
        let o = EvidentialOutput::from_evidence(&[1.0, 2.0]).unwrap();
        for bad in [vec![0.5, 0.5], vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0]] {
            assert!(matches!(evidential_loss(&o, &bad, 0.0), Err(Error::Contract(_))));
        }
    }

    #[test]
    fn trigamma_matches_digamma_derivative() {
        for x in [0.3, 1.0, 2.5, 7.0, 40.0] {
            let h = 1e-5;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(trigamma(x), fd, epsilon = 1e-6 * fd.abs().max(1.0));
        }
        // ψ'(1) = π²/6
        assert_abs_diff_eq!(trigamma(1.0), std::f64::consts::PI.powi(2) / 6.0, epsilon = 1e-12);
    }
}
