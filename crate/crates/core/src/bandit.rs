//! Online learners: the dueling family (DBGD, MGD, NSGD) and PDGD.
//!
//! Dueling learners perturb the incumbent scorer, show a team-draft
//! interleaving of the incumbent's and candidates' rankings to the
//! simulated user, and move toward candidates that earn strictly more
//! clicks. PDGD instead learns from pairwise preferences inferred from a
//! Plackett-Luce sampled ranking.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::clicksim::{simulate, ClickModelSpec};
use crate::counterfactual::{descend, TrainStepReport};
use crate::error::{Error, Result};
use crate::feeds::{rank_by_scores, FeedList, InputFeedBatch};
use crate::losses::{pairwise_cross_entropy_loss, LossGrad};
use crate::optim::Optimizer;
use crate::rng::Rng;
use crate::scorers::{l2_norm, sample_unit_direction, shift, update_toward, RankingModel, ScorerParams};

/// `log P(perm | scores)` under Plackett-Luce. `perm` may be a prefix;
/// each position normalizes over every document not yet placed.
pub fn plackett_luce_log_prob(scores: &[f64], perm: &[usize]) -> f64 {
    let mut remaining = vec![true; scores.len()];
    let mut log_p = 0.0;
    for &d in perm {
        let max = (0..scores.len())
            .filter(|&i| remaining[i])
            .map(|i| scores[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let log_z = max
            + (0..scores.len())
                .filter(|&i| remaining[i])
                .map(|i| (scores[i] - max).exp())
                .sum::<f64>()
                .ln();
        log_p += scores[d] - log_z;
        remaining[d] = false;
    }
    log_p
}

pub fn plackett_luce_prob(scores: &[f64], perm: &[usize]) -> f64 {
    plackett_luce_log_prob(scores, perm).exp()
}

/// Draws a full ranking by sequential softmax sampling without replacement.
pub fn sample_plackett_luce(scores: &[f64], rng: &mut Rng) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut perm = Vec::with_capacity(scores.len());
    while remaining.len() > 1 {
        let max = remaining.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = remaining.iter().map(|&i| (scores[i] - max).exp()).collect();
        let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
        let mut pick = remaining.len() - 1;
        for (slot, w) in weights.iter().enumerate() {
            if u < *w {
                pick = slot;
                break;
            }
            u -= w;
        }
        perm.push(remaining.remove(pick));
    }
    perm.extend(remaining);
    perm
}

/// PDGD pair window: an unclicked document at position `unclicked` is
/// paired with a clicked one at `clicked` when it is ranked above it or
/// directly below it.
pub fn pdgd_pair_eligible(clicked: usize, unclicked: usize) -> bool {
    unclicked < clicked + 2
}

/// Debiasing weight of the preference between positions `a` and `b` of
/// `perm`: `P(swapped) / (P(perm) + P(swapped))`.
pub fn pdgd_rho(scores: &[f64], perm: &[usize], a: usize, b: usize) -> f64 {
    let mut swapped = perm.to_vec();
    swapped.swap(a, b);
    let delta = plackett_luce_log_prob(scores, &swapped) - plackett_luce_log_prob(scores, perm);
    crate::scorers::sigmoid(delta)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterleavedList {
    pub docs: Vec<usize>,
    /// Index of the input list that contributed each slot.
    pub teams: Vec<usize>,
}

impl InterleavedList {
    pub fn truncate(&mut self, len: usize) {
        self.docs.truncate(len);
        self.teams.truncate(len);
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// Team-draft interleaving (multileaving for more than two lists): every
/// round the teams pick in a fresh random order, each appending its
/// highest-ranked document not yet placed.
pub fn team_draft_interleave(lists: &[Vec<usize>], rng: &mut Rng) -> InterleavedList {
    let mut out = InterleavedList {
        docs: Vec::new(),
        teams: Vec::new(),
    };
    let mut placed = std::collections::BTreeSet::new();
    let total: std::collections::BTreeSet<usize> = lists.iter().flatten().copied().collect();
    let mut next = vec![0usize; lists.len()];
    let mut order: Vec<usize> = (0..lists.len()).collect();
    while placed.len() < total.len() {
        order.shuffle(rng);
        for &t in &order {
            while next[t] < lists[t].len() && placed.contains(&lists[t][next[t]]) {
                next[t] += 1;
            }
            if let Some(&d) = lists[t].get(next[t]) {
                placed.insert(d);
                out.docs.push(d);
                out.teams.push(t);
            }
        }
    }
    out
}

/// Clicks credited to each of `n_teams` teams; `clicks` aligns with the
/// leading slots of the interleaved list.
pub fn credit_clicks(il: &InterleavedList, clicks: &[bool], n_teams: usize) -> Vec<usize> {
    let mut credit = vec![0; n_teams];
    for (&team, &c) in il.teams.iter().zip(clicks) {
        if c {
            credit[team] += 1;
        }
    }
    credit
}

/// The simulated user an online learner interacts with.
#[derive(Debug, Clone, Copy)]
pub struct OnlineEnv<'a> {
    pub click_model: &'a ClickModelSpec,
    /// Number of displayed documents (0: all).
    pub cutoff: usize,
}

impl OnlineEnv<'_> {
    fn shown(&self, n: usize) -> usize {
        if self.cutoff == 0 {
            n
        } else {
            n.min(self.cutoff)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub params: ScorerParams,
    pub direction: Vec<f64>,
}

/// Recent losing directions; new directions are sampled orthogonal to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSpaceHistory {
    capacity: usize,
    entries: VecDeque<Vec<f64>>,
}

pub const NULL_SPACE_ATTEMPTS: usize = 10;

impl NullSpaceHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, direction: Vec<f64>) -> Result<()> {
        let norm = l2_norm(&direction);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("history direction has norm {norm}")));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(direction);
        Ok(())
    }

    fn basis(&self) -> Vec<Vec<f64>> {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for e in &self.entries {
            let mut v = e.clone();
            project_out(&mut v, &basis);
            let n = l2_norm(&v);
            if n > 1e-8 {
                basis.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        basis
    }

    /// A unit direction orthogonal to every stored entry.
    pub fn sample(&self, dim: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        let basis = self.basis();
        for _ in 0..NULL_SPACE_ATTEMPTS {
            let mut v = sample_unit_direction(dim, rng);
            project_out(&mut v, &basis);
            let n = l2_norm(&v);
            if n > 1e-6 {
                return Ok(v.into_iter().map(|x| x / n).collect());
            }
        }
        Err(Error::Numerical("null-space projection collapsed on every attempt".into()))
    }
}

/// Removes the components along an orthonormal `basis` (two passes).
fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DuelingKind {
    Dbgd,
    Mgd,
    Nsgd,
}

/// DBGD, MGD and NSGD. DBGD is the single-candidate case of MGD; NSGD adds
/// null-space sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dueling {
    pub kind: DuelingKind,
    pub model: RankingModel,
    pub delta: f64,
    pub learning_rate: f64,
    pub n_candidates: usize,
    pub need_interleave: bool,
    pub history: Option<NullSpaceHistory>,
    steps: usize,
}

pub const DEFAULT_DELTA: f64 = 1.0;
pub const DEFAULT_STEP: f64 = 0.01;
pub const DEFAULT_CANDIDATES: usize = 4;
pub const DEFAULT_NULL_SPACE_CAPACITY: usize = 10;

impl Dueling {
    pub fn dbgd(model: RankingModel, delta: f64, learning_rate: f64, need_interleave: bool) -> Self {
        Self {
            kind: DuelingKind::Dbgd,
            model,
            delta,
            learning_rate,
            n_candidates: 1,
            need_interleave,
            history: None,
            steps: 0,
        }
    }

    pub fn mgd(model: RankingModel, delta: f64, learning_rate: f64, n_candidates: usize, need_interleave: bool) -> Result<Self> {
        if n_candidates == 0 {
            return Err(Error::InvalidValue("n_candidates must be positive".into()));
        }
        Ok(Self {
            kind: DuelingKind::Mgd,
            n_candidates,
            ..Self::dbgd(model, delta, learning_rate, need_interleave)
        })
    }

    pub fn nsgd(
        model: RankingModel,
        delta: f64,
        learning_rate: f64,
        n_candidates: usize,
        need_interleave: bool,
        capacity: usize,
    ) -> Result<Self> {
        Ok(Self {
            kind: DuelingKind::Nsgd,
            history: Some(NullSpaceHistory::new(capacity)),
            ..Self::mgd(model, delta, learning_rate, n_candidates, need_interleave)?
        })
    }

    pub fn sample_candidates(&self, rng: &mut Rng) -> Result<Vec<Candidate>> {
        let dim = self.model.params.len();
        (0..self.n_candidates)
            .map(|_| {
                let direction = match &self.history {
                    Some(h) => h.sample(dim, rng)?,
                    None => sample_unit_direction(dim, rng),
                };
                Ok(Candidate {
                    params: shift(&self.model.params, &direction, self.delta),
                    direction,
                })
            })
            .collect()
    }

    /// Click credit of the incumbent (index 0) and each candidate.
    fn duel(&self, list: &FeedList, candidates: &[Candidate], env: OnlineEnv, rng: &mut Rng) -> Result<Vec<usize>> {
        let mut rankings = vec![rank_by_scores(&self.model.score(&list.features)?)];
        for c in candidates {
            rankings.push(rank_by_scores(&self.model.with_params(c.params.clone()).score(&list.features)?));
        }
        let shown = env.shown(list.num_candidates());
        let mut credit = if self.need_interleave {
            let mut il = team_draft_interleave(&rankings, rng);
            il.truncate(shown);
            let grades: Vec<u32> = il.docs.iter().map(|&d| list.grades[d]).collect();
            let clicks = simulate(env.click_model, &grades, rng)?;
            credit_clicks(&il, &clicks.clicks, rankings.len())
        } else {
            rankings
                .iter()
                .map(|r| {
                    let grades: Vec<u32> = r[..shown].iter().map(|&d| list.grades[d]).collect();
                    Ok(simulate(env.click_model, &grades, rng)?.num_clicks())
                })
                .collect::<Result<Vec<_>>>()?
        };
        // A candidate showing exactly the incumbent's list carries no signal.
        for (c, r) in rankings.iter().enumerate().skip(1) {
            if r[..shown] == rankings[0][..shown] {
                credit[c] = credit[0];
            }
        }
        Ok(credit)
    }

    /// One interaction on one query; returns the clicks collected and
    /// whether the incumbent moved.
    pub fn interact(&mut self, list: &FeedList, env: OnlineEnv, rng: &mut Rng) -> Result<(usize, bool)> {
        let candidates = self.sample_candidates(rng)?;
        let credit = self.duel(list, &candidates, env, rng)?;
        let mut winners = Vec::new();
        for (c, cand) in candidates.iter().enumerate() {
            if credit[c + 1] > credit[0] {
                winners.push(&cand.direction);
            } else if credit[c + 1] < credit[0] {
                if let Some(h) = &mut self.history {
                    h.push(cand.direction.clone())?;
                }
            }
        }
        let mut moved = false;
        if !winners.is_empty() {
            let mut mean = vec![0.0; self.model.params.len()];
            for w in &winners {
                for (m, x) in mean.iter_mut().zip(w.iter()) {
                    *m += x;
                }
            }
            let norm = l2_norm(&mean);
            if norm > 1e-12 {
                mean.iter_mut().for_each(|m| *m /= norm);
                self.model.params = update_toward(&self.model.params, &mean, self.learning_rate)?;
                moved = true;
            }
        }
        Ok((credit.iter().sum(), moved))
    }

    /// Treats every list of the batch as one interaction.
    pub fn step(&mut self, batch: &InputFeedBatch, env: OnlineEnv, rng: &mut Rng) -> Result<TrainStepReport> {
        let mut clicks = 0;
        let mut updates = 0;
        for list in &batch.lists {
            let (c, moved) = self.interact(list, env, rng)?;
            clicks += c;
            updates += moved as usize;
        }
        self.steps += 1;
        let mut report = TrainStepReport::new(0.0, self.steps)?;
        report.aux.insert("clicks".into(), clicks as f64);
        report.aux.insert("updates".into(), updates as f64);
        Ok(report)
    }
}

/// Pairwise differentiable gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pdgd {
    pub model: RankingModel,
    pub optimizer: Optimizer,
    steps: usize,
}

impl Pdgd {
    pub fn new(model: RankingModel, optimizer: Optimizer) -> Self {
        Self {
            model,
            optimizer,
            steps: 0,
        }
    }

    /// Each list's document order is taken as the served ranking and its
    /// labels as clicks on the displayed prefix.
    pub fn step(&mut self, batch: &InputFeedBatch) -> Result<TrainStepReport> {
        let lists: Vec<&[Vec<f64>]> = batch.lists.iter().map(|l| l.features.as_slice()).collect();
        let loss = descend(&mut self.model, &mut self.optimizer, &lists, |l, scores| {
            let list = &batch.lists[l];
            let perm: Vec<usize> = (0..scores.len()).collect();
            let clicked = |k: usize| list.labels[k] > 0.0;
            let mut pairs = Vec::new();
            for i in (0..list.shown).filter(|&i| clicked(i)) {
                for j in (0..list.shown).filter(|&j| !clicked(j) && pdgd_pair_eligible(i, j)) {
                    pairs.push((i, j, pdgd_rho(scores, &perm, i, j)));
                }
            }
            let pos: Vec<f64> = pairs.iter().map(|p| scores[p.0]).collect();
            let neg: Vec<f64> = pairs.iter().map(|p| scores[p.1]).collect();
            let rho: Vec<f64> = pairs.iter().map(|p| p.2).collect();
            let pl = pairwise_cross_entropy_loss(&pos, &neg, &rho)?;
            let mut grad = vec![0.0; scores.len()];
            for (p, &(i, j, _)) in pairs.iter().enumerate() {
                grad[i] += pl.pos_grad[p];
                grad[j] += pl.neg_grad[p];
            }
            Ok(LossGrad { loss: pl.loss, grad })
        })?;
        self.steps += 1;
        TrainStepReport::new(loss, self.steps)
    }
}
