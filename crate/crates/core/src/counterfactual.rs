//! Counterfactual learners: IPW, DLA, REM and PD.
//!
//! All four read the clicks of displayed documents from an offline batch
//! and take one optimizer step on the scorer per call. Ranks are positions
//! within the displayed list (0-based internally).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeds::InputFeedBatch;
use crate::losses::{
    compute, pairwise_cross_entropy_loss, sigmoid_loss, softmax_loss, softplus, LossGrad, LossKind, WeightedLabels,
};
use crate::optim::Optimizer;
use crate::propensity::{inverse_weight, PropensityTable};
use crate::scorers::{forward_with_grad_batch, sigmoid, RankingModel};
use crate::MAX_INVERSE_WEIGHT;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainStepReport {
    pub loss: f64,
    pub step: usize,
    pub aux: BTreeMap<String, f64>,
}

impl TrainStepReport {
    pub(crate) fn new(loss: f64, step: usize) -> Result<Self> {
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {loss} at step {step}")));
        }
        Ok(Self {
            loss,
            step,
            aux: BTreeMap::new(),
        })
    }

    pub(crate) fn with_curve(mut self, prefix: &str, values: &[f64]) -> Self {
        for (k, v) in values.iter().enumerate() {
            self.aux.insert(format!("{prefix}_{}", k + 1), *v);
        }
        self
    }
}

/// Scores every list, asks `list_loss` for each list's loss and score
/// gradient, and applies one optimizer step on the batch mean.
pub(crate) fn descend<F>(
    model: &mut RankingModel,
    optimizer: &mut Optimizer,
    lists: &[&[Vec<f64>]],
    mut list_loss: F,
) -> Result<f64>
where
    F: FnMut(usize, &[f64]) -> Result<LossGrad>,
{
    if lists.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / lists.len() as f64;
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    {
        let scored = forward_with_grad_batch(&model.params, &model.spec, lists)?;
        for (l, sg) in scored.iter().enumerate() {
            let mut lg = list_loss(l, &sg.scores)?;
            loss += scale * lg.loss;
            lg.grad.iter_mut().for_each(|g| *g *= scale);
            sg.pullback_into(&lg.grad, &mut grad);
        }
    }
    optimizer.step(model.params.values_mut(), grad)?;
    if !model.params.is_finite() {
        return Err(Error::Numerical("scorer parameters became non-finite".into()));
    }
    Ok(loss)
}

fn shown_lists(batch: &InputFeedBatch) -> Vec<&[Vec<f64>]> {
    batch.lists.iter().map(|l| l.shown_features()).collect()
}

fn check_labels(batch: &InputFeedBatch) -> Result<()> {
    if batch.lists.iter().flat_map(|l| &l.labels).any(|&y| !(y >= 0.0 && y.is_finite())) {
        return Err(Error::Contract("labels must be finite and non-negative".into()));
    }
    Ok(())
}

fn binary_clicks(batch: &InputFeedBatch) -> Result<Vec<Vec<bool>>> {
    batch
        .lists
        .iter()
        .map(|l| {
            l.labels
                .iter()
                .map(|&y| match y {
                    0.0 => Ok(false),
                    1.0 => Ok(true),
                    y => Err(Error::Contract(format!("clicks must be binary, got {y}"))),
                })
                .collect()
        })
        .collect()
}

/// Inverse propensity weighting with a fixed propensity table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ipw {
    pub model: RankingModel,
    pub optimizer: Optimizer,
    pub loss: LossKind,
    pub table: PropensityTable,
    steps: usize,
}

impl Ipw {
    pub fn new(model: RankingModel, optimizer: Optimizer, loss: LossKind, table: PropensityTable) -> Self {
        Self {
            model,
            optimizer,
            loss,
            table,
            steps: 0,
        }
    }

    /// Unweighted training on raw clicks.
    pub fn naive(model: RankingModel, optimizer: Optimizer, loss: LossKind, cutoff: usize) -> Result<Self> {
        Ok(Self::new(model, optimizer, loss, PropensityTable::basic(cutoff.max(1))?))
    }

    pub fn step(&mut self, batch: &InputFeedBatch) -> Result<TrainStepReport> {
        check_labels(batch)?;
        let (table, kind) = (&self.table, self.loss);
        let loss = descend(&mut self.model, &mut self.optimizer, &shown_lists(batch), |l, scores| {
            let list = &batch.lists[l];
            let w = table.weights_for(list.shown)?;
            Ok(compute(kind, scores, &WeightedLabels::weighted(list.labels.clone(), w)?))
        })?;
        self.steps += 1;
        TrainStepReport::new(loss, self.steps)
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Dual learning: a ranker and a per-rank examination model trained
/// against each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dla {
    pub model: RankingModel,
    pub optimizer: Optimizer,
    /// Per-rank examination logits; `softmax(phi)` is the examination curve.
    pub phi: Vec<f64>,
    pub phi_optimizer: Optimizer,
    pub loss: LossKind,
    steps: usize,
}

impl Dla {
    pub fn new(model: RankingModel, optimizer: Optimizer, phi_optimizer: Optimizer, loss: LossKind, cutoff: usize) -> Self {
        Self {
            model,
            optimizer,
            phi: vec![0.0; cutoff.max(1)],
            phi_optimizer,
            loss,
            steps: 0,
        }
    }

    /// Examination propensity of each rank relative to rank 1.
    pub fn exam_ratios(&self) -> Vec<f64> {
        self.phi.iter().map(|p| (p - self.phi[0]).exp()).collect()
    }

    pub fn step(&mut self, batch: &InputFeedBatch) -> Result<TrainStepReport> {
        check_labels(batch)?;
        if let Some(l) = batch.lists.iter().find(|l| l.shown > self.phi.len()) {
            return Err(Error::Contract(format!(
                "list shows {} documents, examination model covers {}",
                l.shown,
                self.phi.len()
            )));
        }
        let exam_weights: Vec<f64> = {
            let p = softmax(&self.phi);
            p.iter().map(|&pk| inverse_weight(pk / p[0])).collect()
        };
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut phi_grad = vec![0.0; self.phi.len()];
        let mut phi_loss = 0.0;
        let (phi, kind) = (&self.phi, self.loss);
        let ranker_loss = descend(&mut self.model, &mut self.optimizer, &shown_lists(batch), |l, scores| {
            let list = &batch.lists[l];
            let n = list.shown;
            // Inverse relevance weights from the ranker, held constant.
            let rel_weights: Vec<f64> = scores
                .iter()
                .map(|s| (scores[0] - s).exp().min(MAX_INVERSE_WEIGHT))
                .collect();
            // Undo the per-list label normalization so every click counts once.
            let clicks: f64 = list.labels.iter().sum();
            let pl = softmax_loss(&phi[..n], &WeightedLabels::weighted(list.labels.clone(), rel_weights)?);
            phi_loss += scale * clicks * pl.loss;
            for (g, d) in phi_grad.iter_mut().zip(&pl.grad) {
                *g += scale * clicks * d;
            }
            let w = exam_weights[..n].to_vec();
            Ok(compute(kind, scores, &WeightedLabels::weighted(list.labels.clone(), w)?))
        })?;
        self.phi_optimizer.step(&mut self.phi, phi_grad)?;
        self.steps += 1;
        let mut report = TrainStepReport::new(ranker_loss + phi_loss, self.steps)?.with_curve("exam", &self.exam_ratios());
        report.aux.insert("propensity_loss".into(), phi_loss);
        Ok(report)
    }
}

const PROB_FLOOR: f64 = 1e-6;

fn clamp_prob(p: f64) -> Result<f64> {
    if !p.is_finite() {
        return Err(Error::Numerical(format!("probability {p} is not finite")));
    }
    Ok(p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
}

/// Posterior `(P(o=1|c), P(r=1|c))` under the examination hypothesis.
pub fn rem_posteriors(gamma: f64, r: f64, clicked: bool) -> (f64, f64) {
    if clicked {
        return (1.0, 1.0);
    }
    let denom = 1.0 - gamma * r;
    (gamma * (1.0 - r) / denom, r * (1.0 - gamma) / denom)
}

/// `sum c log(gamma r) + (1 - c) log(1 - gamma r)` over every displayed
/// document; `relevance[l][k]` is the relevance probability at rank k.
pub fn rem_log_likelihood(gamma: &[f64], relevance: &[Vec<f64>], clicks: &[Vec<bool>]) -> f64 {
    let mut ll = 0.0;
    for (rel, cl) in relevance.iter().zip(clicks) {
        for (k, (&r, &c)) in rel.iter().zip(cl).enumerate() {
            let p = gamma[k] * r;
            ll += if c { p.ln() } else { (-p).ln_1p() };
        }
    }
    ll
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemLatentState {
    /// Absolute examination probability per rank, in (0, 1).
    pub exam_probs: Vec<f64>,
    pub step: usize,
}

impl RemLatentState {
    pub fn new(cutoff: usize, initial: f64) -> Result<Self> {
        Ok(Self {
            exam_probs: vec![clamp_prob(initial)?; cutoff.max(1)],
            step: 0,
        })
    }

    /// Examination relative to rank 1.
    pub fn exam_ratios(&self) -> Vec<f64> {
        self.exam_probs.iter().map(|g| g / self.exam_probs[0]).collect()
    }
}

/// Regression EM with a per-rank examination estimate updated by an
/// exponential moving average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rem {
    pub model: RankingModel,
    pub optimizer: Optimizer,
    pub state: RemLatentState,
    pub decay: f64,
}

pub const REM_DECAY: f64 = 0.99;
pub const REM_INITIAL_EXAM: f64 = 0.9;

impl Rem {
    pub fn new(model: RankingModel, optimizer: Optimizer, cutoff: usize) -> Result<Self> {
        Ok(Self {
            model,
            optimizer,
            state: RemLatentState::new(cutoff, REM_INITIAL_EXAM)?,
            decay: REM_DECAY,
        })
    }

    pub fn step(&mut self, batch: &InputFeedBatch) -> Result<TrainStepReport> {
        let clicks = binary_clicks(batch)?;
        let cutoff = self.state.exam_probs.len();
        if let Some(c) = clicks.iter().find(|c| c.len() > cutoff) {
            return Err(Error::Contract(format!("list shows {} documents, state covers {cutoff}", c.len())));
        }
        let gamma = self.state.exam_probs.clone();
        let mut exam_sum = vec![0.0; cutoff];
        let mut exam_count = vec![0usize; cutoff];
        let mut relevance = Vec::with_capacity(clicks.len());
        let loss = descend(&mut self.model, &mut self.optimizer, &shown_lists(batch), |l, scores| {
            let mut targets = Vec::with_capacity(scores.len());
            let mut rel = Vec::with_capacity(scores.len());
            for (k, (&s, &c)) in scores.iter().zip(&clicks[l]).enumerate() {
                let r = clamp_prob(sigmoid(s))?;
                let (po, pr) = rem_posteriors(gamma[k], r, c);
                exam_sum[k] += po;
                exam_count[k] += 1;
                targets.push(pr);
                rel.push(r);
            }
            relevance.push(rel);
            Ok(sigmoid_loss(scores, &WeightedLabels::unweighted(targets)))
        })?;
        let ll = rem_log_likelihood(&gamma, &relevance, &clicks);
        for k in 0..cutoff {
            if exam_count[k] > 0 {
                let target = exam_sum[k] / exam_count[k] as f64;
                let g = self.decay * self.state.exam_probs[k] + (1.0 - self.decay) * target;
                self.state.exam_probs[k] = clamp_prob(g)?;
            }
        }
        self.state.step += 1;
        let mut report = TrainStepReport::new(loss, self.state.step)?.with_curve("exam", &self.state.exam_ratios());
        report.aux.insert("log_likelihood".into(), ll);
        Ok(report)
    }
}

/// One displayed list for full-batch EM: features per rank and clicks.
pub type ClickedList = (Vec<Vec<f64>>, Vec<bool>);

fn relevance_of(model: &RankingModel, data: &[ClickedList]) -> Result<Vec<Vec<f64>>> {
    data.iter()
        .map(|(x, _)| model.score(x)?.into_iter().map(|s| clamp_prob(sigmoid(s))).collect())
        .collect()
}

/// Expected complete-data log-likelihood of the relevance part.
fn relevance_q(model: &RankingModel, data: &[ClickedList], targets: &[Vec<f64>]) -> Result<f64> {
    let mut q = 0.0;
    for ((x, _), t) in data.iter().zip(targets) {
        for (s, &p) in model.score(x)?.into_iter().zip(t) {
            let r = clamp_prob(sigmoid(s))?;
            q += p * r.ln() + (1.0 - p) * (1.0 - r).ln();
        }
    }
    Ok(q)
}

/// Full-batch generalized EM. The examination step is closed form; the
/// relevance step is one backtracking gradient-ascent step on the expected
/// complete-data log-likelihood, accepted only if it does not decrease.
/// Returns the observed-data log-likelihood before each iteration and after
/// the last one.
pub fn rem_full_batch_em(
    model: &mut RankingModel,
    gamma: &mut [f64],
    data: &[ClickedList],
    iterations: usize,
    learning_rate: f64,
) -> Result<Vec<f64>> {
    let clicks: Vec<Vec<bool>> = data.iter().map(|(_, c)| c.clone()).collect();
    if clicks.iter().any(|c| c.len() > gamma.len()) {
        return Err(Error::Contract("list longer than the examination curve".into()));
    }
    let mut history = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let relevance = relevance_of(model, data)?;
        history.push(rem_log_likelihood(gamma, &relevance, &clicks));
        let mut exam_sum = vec![0.0; gamma.len()];
        let mut exam_count = vec![0usize; gamma.len()];
        let mut targets = Vec::with_capacity(data.len());
        for (rel, cl) in relevance.iter().zip(&clicks) {
            let mut t = Vec::with_capacity(rel.len());
            for (k, (&r, &c)) in rel.iter().zip(cl).enumerate() {
                let (po, pr) = rem_posteriors(gamma[k], r, c);
                exam_sum[k] += po;
                exam_count[k] += 1;
                t.push(pr);
            }
            targets.push(t);
        }
        for k in 0..gamma.len() {
            if exam_count[k] > 0 {
                gamma[k] = clamp_prob(exam_sum[k] / exam_count[k] as f64)?;
            }
        }
        let lists: Vec<&[Vec<f64>]> = data.iter().map(|(x, _)| x.as_slice()).collect();
        let mut grad = vec![0.0; model.params.len()];
        {
            let scored = forward_with_grad_batch(&model.params, &model.spec, &lists)?;
            for (sg, t) in scored.iter().zip(&targets) {
                // d(-Q)/ds = sigmoid(s) - target
                let upstream: Vec<f64> = sg.scores.iter().zip(t).map(|(&s, &p)| sigmoid(s) - p).collect();
                sg.pullback_into(&upstream, &mut grad);
            }
        }
        let q_old = relevance_q(model, data, &targets)?;
        let mut step = learning_rate;
        for _ in 0..40 {
            let mut candidate = model.clone();
            for (v, g) in candidate.params.values_mut().iter_mut().zip(&grad) {
                *v -= step * g;
            }
            if relevance_q(&candidate, data, &targets)? >= q_old {
                *model = candidate;
                break;
            }
            step *= 0.5;
        }
    }
    let relevance = relevance_of(model, data)?;
    history.push(rem_log_likelihood(gamma, &relevance, &clicks));
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdState {
    /// Click-side propensity per rank, rank 1 = 1.
    pub exam_plus: Vec<f64>,
    /// Non-click-side propensity per rank, rank 1 = 1.
    pub exam_minus: Vec<f64>,
}

impl PdState {
    pub fn unit(cutoff: usize) -> Self {
        Self {
            exam_plus: vec![1.0; cutoff.max(1)],
            exam_minus: vec![1.0; cutoff.max(1)],
        }
    }
}

pub const PD_DECAY: f64 = 0.99;

/// Pairwise debiasing with jointly estimated click and non-click
/// propensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pd {
    pub model: RankingModel,
    pub optimizer: Optimizer,
    pub state: PdState,
    /// Exponent `1 / (1 + regularization)` applied to the re-estimated ratios.
    pub regularization: f64,
    pub decay: f64,
    acc_plus: Vec<f64>,
    acc_minus: Vec<f64>,
    steps: usize,
}

impl Pd {
    pub fn new(model: RankingModel, optimizer: Optimizer, cutoff: usize, regularization: f64) -> Self {
        let cutoff = cutoff.max(1);
        Self {
            model,
            optimizer,
            state: PdState::unit(cutoff),
            regularization,
            decay: PD_DECAY,
            acc_plus: vec![0.0; cutoff],
            acc_minus: vec![0.0; cutoff],
            steps: 0,
        }
    }

    pub fn step(&mut self, batch: &InputFeedBatch) -> Result<TrainStepReport> {
        let clicks = binary_clicks(batch)?;
        let cutoff = self.state.exam_plus.len();
        if let Some(c) = clicks.iter().find(|c| c.len() > cutoff) {
            return Err(Error::Contract(format!("list shows {} documents, state covers {cutoff}", c.len())));
        }
        let mut mass_plus = vec![0.0; cutoff];
        let mut mass_minus = vec![0.0; cutoff];
        let state = &self.state;
        let loss = descend(&mut self.model, &mut self.optimizer, &shown_lists(batch), |l, scores| {
            let c = &clicks[l];
            let mut pairs = Vec::new();
            for i in (0..c.len()).filter(|&i| c[i]) {
                for j in (0..c.len()).filter(|&j| !c[j]) {
                    pairs.push((i, j));
                }
            }
            let pos: Vec<f64> = pairs.iter().map(|&(i, _)| scores[i]).collect();
            let neg: Vec<f64> = pairs.iter().map(|&(_, j)| scores[j]).collect();
            let w: Vec<f64> = pairs
                .iter()
                .map(|&(i, j)| inverse_weight(state.exam_plus[i] * state.exam_minus[j]))
                .collect();
            let pl = pairwise_cross_entropy_loss(&pos, &neg, &w)?;
            let mut grad = vec![0.0; scores.len()];
            for (p, &(i, j)) in pairs.iter().enumerate() {
                grad[i] += pl.pos_grad[p];
                grad[j] += pl.neg_grad[p];
                let raw = softplus(neg[p] - pos[p]);
                mass_plus[i] += raw / state.exam_minus[j];
                mass_minus[j] += raw / state.exam_plus[i];
            }
            Ok(LossGrad { loss: pl.loss, grad })
        })?;
        let exponent = 1.0 / (1.0 + self.regularization);
        let floor = 1.0 / MAX_INVERSE_WEIGHT;
        for (acc, mass, est) in [
            (&mut self.acc_plus, &mass_plus, &mut self.state.exam_plus),
            (&mut self.acc_minus, &mass_minus, &mut self.state.exam_minus),
        ] {
            for (a, m) in acc.iter_mut().zip(mass) {
                *a = self.decay * *a + m;
            }
            if acc[0] > 0.0 {
                for (e, a) in est.iter_mut().zip(acc.iter()) {
                    *e = (a / acc[0]).powf(exponent).clamp(floor, 1.0 / floor);
                }
            }
        }
        self.steps += 1;
        Ok(TrainStepReport::new(loss, self.steps)?
            .with_curve("exam_plus", &self.state.exam_plus)
            .with_curve("exam_minus", &self.state.exam_minus))
    }
}
