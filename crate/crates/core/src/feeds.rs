//! Input feeds: how training and evaluation batches are assembled.
//!
//! A [`FeedList`] always carries every candidate document of its query, in
//! the order they were (or would have been) displayed. Only the first
//! `shown` of them were presented to the simulated user and carry labels;
//! the rest are available to learners that re-rank (bandits) or need the
//! full Plackett-Luce normalizer (PDGD).

use serde::{Deserialize, Serialize};

use rand::Rng as _;

use crate::bandit::sample_plackett_luce;
use crate::clicksim::{simulate, ClickModelSpec};
use crate::dataset::{pad_batch, Corpus, PaddedBatch, PaddingPolicy};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scorers::RankingModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedKind {
    #[serde(alias = "DirectLabelFeed", alias = "direct_label")]
    DirectLabel,
    #[serde(alias = "ClickSimulationFeed", alias = "click_simulation")]
    ClickSimulation,
    #[serde(alias = "DeterministicOnlineSimulationFeed", alias = "deterministic_online")]
    DeterministicOnline,
    #[serde(alias = "StochasticOnlineSimulationFeed", alias = "stochastic_online")]
    StochasticOnline,
}

impl FeedKind {
    pub fn is_online(self) -> bool {
        matches!(self, FeedKind::DeterministicOnline | FeedKind::StochasticOnline)
    }

    pub fn simulates_clicks(self) -> bool {
        self != FeedKind::DirectLabel
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedList {
    pub query_index: usize,
    pub doc_ids: Vec<usize>,
    pub features: Vec<Vec<f64>>,
    /// True grades; hidden from learners except through simulated users.
    pub grades: Vec<u32>,
    /// Number of leading documents that were displayed.
    pub shown: usize,
    /// Clicks (or grades) for the displayed documents.
    pub labels: Vec<f64>,
    /// Scores that produced the served order, aligned with `doc_ids`.
    pub served_scores: Option<Vec<f64>>,
}

impl FeedList {
    pub fn shown_features(&self) -> &[Vec<f64>] {
        &self.features[..self.shown]
    }

    pub fn shown_grades(&self) -> &[u32] {
        &self.grades[..self.shown]
    }

    /// The displayed order, present only for online feeds.
    pub fn served_list(&self) -> Option<&[usize]> {
        self.served_scores.as_ref().map(|_| &self.doc_ids[..self.shown])
    }

    pub fn num_candidates(&self) -> usize {
        self.doc_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputFeedBatch {
    pub lists: Vec<FeedList>,
    pub online: bool,
}

impl InputFeedBatch {
    /// Fixed-length view of the displayed documents and their labels.
    pub fn padded(&self, policy: &PaddingPolicy) -> Result<PaddedBatch> {
        let rows: Vec<(Vec<usize>, Vec<f64>)> = self
            .lists
            .iter()
            .map(|l| (l.doc_ids[..l.shown].to_vec(), l.labels.clone()))
            .collect();
        pad_batch(&rows, policy)
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedHparams {
    #[serde(default)]
    pub click_model_json: Option<String>,
    /// Inline alternative to `click_model_json`.
    #[serde(default)]
    pub click_model: Option<ClickModelSpec>,
    #[serde(default)]
    pub oracle_mode: bool,
    #[serde(default)]
    pub dynamic_bias_eta_change: f64,
    #[serde(default)]
    pub dynamic_bias_step_interval: f64,
}

impl Default for FeedHparams {
    fn default() -> Self {
        Self {
            click_model_json: None,
            click_model: None,
            oracle_mode: false,
            dynamic_bias_eta_change: 0.0,
            dynamic_bias_step_interval: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InputFeed {
    kind: FeedKind,
    click_model: Option<ClickModelSpec>,
    oracle_mode: bool,
    /// Selection-bias cutoff (0: show everything).
    cutoff: usize,
    eta_change: f64,
    eta_interval: usize,
    cursor: usize,
}

impl InputFeed {
    pub fn new(kind: FeedKind, click_model: Option<ClickModelSpec>, cutoff: usize) -> Result<Self> {
        if kind.simulates_clicks() && click_model.is_none() {
            return Err(Error::Config(format!("{kind:?} feed needs a click model")));
        }
        Ok(Self {
            kind,
            click_model,
            oracle_mode: false,
            cutoff,
            eta_change: 0.0,
            eta_interval: 0,
            cursor: 0,
        })
    }

    pub fn direct_label() -> Self {
        Self::new(FeedKind::DirectLabel, None, 0).expect("direct feed needs no click model")
    }

    pub fn click_simulation(spec: ClickModelSpec, cutoff: usize) -> Self {
        Self::new(FeedKind::ClickSimulation, Some(spec), cutoff).expect("click model given")
    }

    pub fn deterministic_online(spec: ClickModelSpec, cutoff: usize) -> Self {
        Self::new(FeedKind::DeterministicOnline, Some(spec), cutoff).expect("click model given")
    }

    pub fn stochastic_online(spec: ClickModelSpec, cutoff: usize) -> Self {
        Self::new(FeedKind::StochasticOnline, Some(spec), cutoff).expect("click model given")
    }

    /// Emit graded relevance instead of simulated clicks.
    pub fn with_oracle_mode(mut self, on: bool) -> Self {
        self.oracle_mode = on;
        self
    }

    /// Every `interval` steps, add `change` to the click model's eta.
    pub fn with_dynamic_bias(mut self, change: f64, interval: usize) -> Self {
        self.eta_change = change;
        self.eta_interval = interval;
        self
    }

    pub fn kind(&self) -> FeedKind {
        self.kind
    }

    pub fn click_model(&self) -> Option<&ClickModelSpec> {
        self.click_model.as_ref()
    }

    /// Whether labels are simulated clicks rather than grades.
    pub fn emits_clicks(&self) -> bool {
        self.kind.simulates_clicks() && self.click_model.is_some() && !self.oracle_mode
    }

    /// Replaces the click model's eta, e.g. when resuming a dynamic-bias run.
    pub fn set_eta(&mut self, eta: f64) -> Result<()> {
        if let Some(spec) = &self.click_model {
            self.click_model = Some(spec.with_eta(eta)?);
        }
        Ok(())
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Applies the dynamic-bias schedule after training step `step` (1-based).
    pub fn on_step(&mut self, step: usize) -> Result<()> {
        if self.eta_change == 0.0 || self.eta_interval == 0 || !step.is_multiple_of(self.eta_interval) {
            return Ok(());
        }
        if let Some(spec) = &self.click_model {
            let eta = (spec.eta + self.eta_change).max(0.0);
            self.click_model = Some(spec.with_eta(eta)?);
        }
        Ok(())
    }

    fn shown_count(&self, len: usize) -> usize {
        if self.kind == FeedKind::DirectLabel || self.cutoff == 0 {
            len
        } else {
            len.min(self.cutoff)
        }
    }

    /// Builds the list for one query.
    pub fn build_list(
        &self,
        corpus: &Corpus,
        query_index: usize,
        model: Option<&RankingModel>,
        rng: &mut Rng,
    ) -> Result<FeedList> {
        let session = corpus.session(query_index);
        let mut doc_ids = session.doc_ids.clone();
        let mut grades = session.labels.clone();
        let mut features = corpus.session_features(query_index);
        let mut served_scores = None;
        if self.kind.is_online() {
            let model = model.ok_or_else(|| Error::Contract("online feed needs a scorer snapshot".into()))?;
            let scores = model.score(&features)?;
            let order = match self.kind {
                FeedKind::DeterministicOnline => rank_by_scores(&scores),
                _ => sample_plackett_luce(&scores, rng),
            };
            doc_ids = order.iter().map(|&i| doc_ids[i]).collect();
            grades = order.iter().map(|&i| grades[i]).collect();
            features = order.iter().map(|&i| std::mem::take(&mut features[i])).collect();
            served_scores = Some(order.iter().map(|&i| scores[i]).collect());
        }
        let shown = self.shown_count(doc_ids.len());
        let labels = match (&self.click_model, self.kind, self.oracle_mode) {
            (Some(spec), kind, false) if kind.simulates_clicks() => {
                simulate(spec, &grades[..shown], rng)?.as_labels()
            }
            _ => grades[..shown].iter().map(|&g| g as f64).collect(),
        };
        Ok(FeedList {
            query_index,
            doc_ids,
            features,
            grades,
            shown,
            labels,
            served_scores,
        })
    }

    /// A random batch: queries drawn uniformly with replacement.
    pub fn get_batch(
        &self,
        corpus: &Corpus,
        batch_size: usize,
        model: Option<&RankingModel>,
        rng: &mut Rng,
    ) -> Result<InputFeedBatch> {
        let mut lists = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let q = rng.random_range(0..corpus.num_sessions());
            lists.push(self.build_list(corpus, q, model, rng)?);
        }
        Ok(InputFeedBatch {
            lists,
            online: self.kind.is_online(),
        })
    }

    /// The next sequential batch; `None` once every query of the epoch has
    /// been emitted (the cursor then rewinds for the next epoch).
    pub fn next_batch(
        &mut self,
        corpus: &Corpus,
        batch_size: usize,
        model: Option<&RankingModel>,
        rng: &mut Rng,
    ) -> Result<Option<InputFeedBatch>> {
        if self.cursor >= corpus.num_sessions() {
            self.cursor = 0;
            return Ok(None);
        }
        let end = (self.cursor + batch_size.max(1)).min(corpus.num_sessions());
        let lists = (self.cursor..end)
            .map(|q| self.build_list(corpus, q, model, rng))
            .collect::<Result<_>>()?;
        self.cursor = end;
        Ok(Some(InputFeedBatch {
            lists,
            online: self.kind.is_online(),
        }))
    }

    pub fn reset_cursor(&mut self) {
        self.cursor = 0;
    }
}

/// Indices sorted by descending score; ties keep their original order.
pub fn rank_by_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}
