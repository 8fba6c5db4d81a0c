//! Propensity-weightable ranking losses.
//!
//! Each loss returns its value and the gradient with respect to the scores.
//! Ranks whose mask entry is false are padding: they contribute neither to
//! the loss nor to its gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorers::sigmoid;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLabels {
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
    pub mask: Vec<bool>,
}

impl WeightedLabels {
    pub fn new(labels: Vec<f64>, weights: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if weights.len() != labels.len() || mask.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                actual: if weights.len() != labels.len() {
                    weights.len()
                } else {
                    mask.len()
                },
            });
        }
        if weights.iter().zip(&mask).any(|(&w, &m)| m && !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidValue("weights must be finite and non-negative".into()));
        }
        Ok(Self { labels, weights, mask })
    }

    pub fn weighted(labels: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = labels.len();
        Self::new(labels, weights, vec![true; n])
    }

    pub fn unweighted(labels: Vec<f64>) -> Self {
        let n = labels.len();
        Self {
            labels,
            weights: vec![1.0; n],
            mask: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn valid(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl LossGrad {
    fn zero(n: usize) -> Self {
        Self {
            loss: 0.0,
            grad: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(alias = "softmax_loss", alias = "softmax")]
    Softmax,
    #[serde(alias = "sigmoid_loss", alias = "sigmoid")]
    Sigmoid,
    #[serde(alias = "pairwise_loss", alias = "pairwise")]
    Pairwise,
}

pub fn compute(kind: LossKind, scores: &[f64], wl: &WeightedLabels) -> LossGrad {
    match kind {
        LossKind::Softmax => softmax_loss(scores, wl),
        LossKind::Sigmoid => sigmoid_loss(scores, wl),
        LossKind::Pairwise => pairwise_loss(scores, wl),
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Listwise cross-entropy between the label distribution and
/// `softmax(scores)`: `-sum_k w_k * y_k * log softmax_k` with `y` the labels
/// normalized to sum to one over valid ranks.
pub fn softmax_loss(scores: &[f64], wl: &WeightedLabels) -> LossGrad {
    assert_eq!(scores.len(), wl.len(), "scores/labels length");
    let n = scores.len();
    let label_sum: f64 = wl.valid().map(|k| wl.labels[k]).sum();
    if label_sum <= 0.0 {
        return LossGrad::zero(n);
    }
    let max = wl.valid().map(|k| scores[k]).fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + wl.valid().map(|k| (scores[k] - max).exp()).sum::<f64>().ln();
    let mut loss = 0.0;
    let mut total_target = 0.0;
    let mut grad = vec![0.0; n];
    for k in wl.valid() {
        let target = wl.weights[k] * wl.labels[k] / label_sum;
        loss -= target * (scores[k] - log_z);
        total_target += target;
        grad[k] = -target;
    }
    for k in wl.valid() {
        grad[k] += total_target * (scores[k] - log_z).exp();
    }
    LossGrad { loss, grad }
}

/// Mean over valid ranks of `w_k * BCE(sigmoid(s_k), y_k)`.
pub fn sigmoid_loss(scores: &[f64], wl: &WeightedLabels) -> LossGrad {
    assert_eq!(scores.len(), wl.len(), "scores/labels length");
    let n = scores.len();
    let count = wl.valid().count();
    if count == 0 {
        return LossGrad::zero(n);
    }
    let scale = 1.0 / count as f64;
    let mut out = LossGrad::zero(n);
    for k in wl.valid() {
        let (s, y, w) = (scores[k], wl.labels[k], wl.weights[k]);
        // BCE in logit form: softplus(s) - y * s.
        out.loss += scale * w * (softplus(s) - y * s);
        out.grad[k] = scale * w * (sigmoid(s) - y);
    }
    out
}

/// Sum over valid ordered pairs with `y_i > y_j` of
/// `w_i * log(1 + exp(-(s_i - s_j)))`.
pub fn pairwise_loss(scores: &[f64], wl: &WeightedLabels) -> LossGrad {
    assert_eq!(scores.len(), wl.len(), "scores/labels length");
    let mut out = LossGrad::zero(scores.len());
    let valid: Vec<usize> = wl.valid().collect();
    for &i in &valid {
        for &j in &valid {
            if wl.labels[i] <= wl.labels[j] {
                continue;
            }
            let margin = scores[i] - scores[j];
            let w = wl.weights[i];
            out.loss += w * softplus(-margin);
            let g = w * sigmoid(-margin);
            out.grad[i] -= g;
            out.grad[j] += g;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLossGrad {
    pub loss: f64,
    pub pos_grad: Vec<f64>,
    pub neg_grad: Vec<f64>,
}

/// Sum over pairs of `-w * log sigmoid(pos - neg)`.
pub fn pairwise_cross_entropy_loss(pos: &[f64], neg: &[f64], weights: &[f64]) -> Result<PairLossGrad> {
    if pos.len() != neg.len() || pos.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: pos.len(),
            actual: if neg.len() != pos.len() { neg.len() } else { weights.len() },
        });
    }
    let mut out = PairLossGrad {
        loss: 0.0,
        pos_grad: vec![0.0; pos.len()],
        neg_grad: vec![0.0; pos.len()],
    };
    for k in 0..pos.len() {
        let margin = pos[k] - neg[k];
        out.loss += weights[k] * softplus(-margin);
        let g = weights[k] * sigmoid(-margin);
        out.pos_grad[k] = -g;
        out.neg_grad[k] = g;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    #[test]
    fn softmax_zero_labels() {
        let out = softmax_loss(&[1.0, -2.0, 0.5], &WeightedLabels::unweighted(vec![0.0; 3]));
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.grad, vec![0.0; 3]);
    }

    #[test]
    fn softmax_two_equal_scores() {
        let out = softmax_loss(&[0.3, 0.3], &WeightedLabels::unweighted(vec![1.0, 0.0]));
        assert_abs_diff_eq!(out.loss, LN_2, epsilon = 1e-12);
    }

    #[test]
    fn softmax_linear_in_weight() {
        let scores = [0.2, -0.4, 1.1];
        let labels = vec![1.0, 0.0, 1.0];
        let base = softmax_loss(&scores, &WeightedLabels::weighted(labels.clone(), vec![1.0, 1.0, 1.0]).unwrap());
        let doubled = softmax_loss(&scores, &WeightedLabels::weighted(labels, vec![2.0, 1.0, 1.0]).unwrap());
        let log_z = scores.iter().map(|s: &f64| s.exp()).sum::<f64>().ln();
        let contribution = -0.5 * (scores[0] - log_z);
        assert_abs_diff_eq!(doubled.loss - base.loss, contribution, epsilon = 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let wl = WeightedLabels::weighted(vec![1.0, 0.0, 2.0, 1.0], vec![1.0, 3.0, 0.5, 2.0]).unwrap();
        let a = softmax_loss(&[0.1, 0.2, -0.3, 1.0], &wl);
        let b = softmax_loss(&[5.1, 5.2, 4.7, 6.0], &wl);
        assert_abs_diff_eq!(a.loss, b.loss, epsilon = 1e-12);
        for (x, y) in a.grad.iter().zip(&b.grad) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn sigmoid_values() {
        let out = sigmoid_loss(&[0.0], &WeightedLabels::unweighted(vec![0.5]));
        assert_abs_diff_eq!(out.loss, LN_2, epsilon = 1e-12);
        let big = sigmoid_loss(&[50.0], &WeightedLabels::unweighted(vec![1.0]));
        assert!(big.loss < 1e-20);
        let zero_w = sigmoid_loss(&[0.7, -2.0], &WeightedLabels::weighted(vec![1.0, 0.0], vec![0.0, 0.0]).unwrap());
        assert_eq!(zero_w.loss, 0.0);
    }

    #[test]
    fn pairwise_values() {
        let equal = pairwise_loss(&[0.3, 1.0, -1.0], &WeightedLabels::unweighted(vec![1.0; 3]));
        assert_eq!(equal.loss, 0.0);
        let margin0 = pairwise_loss(&[0.0, 0.0], &WeightedLabels::unweighted(vec![1.0, 0.0]));
        assert_abs_diff_eq!(margin0.loss, LN_2, epsilon = 1e-12);
        let wl = WeightedLabels::unweighted(vec![1.0, 0.0]);
        let good = pairwise_loss(&[1.0, 0.0], &wl);
        let swapped = pairwise_loss(&[0.0, 1.0], &wl);
        assert!(swapped.loss > good.loss);
    }

    #[test]
    fn pair_cross_entropy_values() {
        let out = pairwise_cross_entropy_loss(&[0.4], &[0.4], &[1.0]).unwrap();
        assert_abs_diff_eq!(out.loss, LN_2, epsilon = 1e-12);
        let far = pairwise_cross_entropy_loss(&[60.0], &[0.0], &[1.0]).unwrap();
        assert!(far.loss < 1e-20);
        // Unit propensities (1 / (1 * 1)) leave the loss unweighted.
        let w = 1.0 / (1.0 * 1.0);
        let a = pairwise_cross_entropy_loss(&[0.3, -0.2], &[0.1, 0.5], &[w, w]).unwrap();
        let b = pairwise_cross_entropy_loss(&[0.3, -0.2], &[0.1, 0.5], &[1.0, 1.0]).unwrap();
        assert_eq!(a, b);
        assert!(pairwise_cross_entropy_loss(&[0.0], &[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn padding_changes_nothing() {
        let scores = [0.5, -0.1, 0.9];
        let labels = vec![1.0, 0.0, 2.0];
        let weights = vec![1.5, 2.0, 0.5];
        let plain = WeightedLabels::weighted(labels.clone(), weights.clone()).unwrap();
        let mut padded_labels = labels.clone();
        padded_labels.extend([3.0, 1.0]);
        let mut padded_weights = weights.clone();
        padded_weights.extend([9.0, 9.0]);
        let padded = WeightedLabels::new(padded_labels, padded_weights, vec![true, true, true, false, false]).unwrap();
        let padded_scores = [0.5, -0.1, 0.9, 100.0, -7.0];
        for kind in [LossKind::Softmax, LossKind::Sigmoid, LossKind::Pairwise] {
            let a = compute(kind, &scores, &plain);
            let b = compute(kind, &padded_scores, &padded);
            assert_abs_diff_eq!(a.loss, b.loss, epsilon = 1e-12);
            assert_eq!(&b.grad[3..], &[0.0, 0.0]);
            for (x, y) in a.grad.iter().zip(&b.grad) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unit_weights_equal_unweighted() {
        let scores = [0.5, -0.1, 0.9, 0.0];
        let labels = vec![1.0, 0.0, 1.0, 0.0];
        let a = WeightedLabels::unweighted(labels.clone());
        let b = WeightedLabels::weighted(labels, vec![1.0; 4]).unwrap();
        for kind in [LossKind::Softmax, LossKind::Sigmoid, LossKind::Pairwise] {
            assert_eq!(compute(kind, &scores, &a), compute(kind, &scores, &b));
        }
    }

    #[test]
    fn negative_weight_rejected() {
        assert!(WeightedLabels::weighted(vec![1.0], vec![-1.0]).is_err());
        assert!(WeightedLabels::weighted(vec![1.0], vec![1.0, 1.0]).is_err());
    }
}
