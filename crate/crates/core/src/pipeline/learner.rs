use serde::{Deserialize, Serialize};

use super::config::{AlgorithmKind, ExperimentSettings, PropensityEstimatorKind};
use crate::bandit::{Dueling, OnlineEnv, Pdgd, DEFAULT_CANDIDATES, DEFAULT_DELTA, DEFAULT_NULL_SPACE_CAPACITY, DEFAULT_STEP};
use crate::clicksim::ClickModelSpec;
use crate::counterfactual::{Dla, Ipw, Pd, Rem, TrainStepReport};
use crate::dataset::Corpus;
use crate::error::{Error, Result};
use crate::feeds::InputFeedBatch;
use crate::losses::LossKind;
use crate::propensity::{estimate_randomized, oracle_from_click_model, PropensityTable};
use crate::rng::{stream, Rng, Stream};
use crate::scorers::RankingModel;
use std::path::Path;

pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
pub const DEFAULT_PDGD_LEARNING_RATE: f64 = 0.1;
pub const DEFAULT_PD_REGULARIZATION: f64 = 1.0;
pub const RANDOMIZED_SESSIONS: usize = 100_000;

/// Everything a learner needs from its surroundings at construction time.
pub struct LearnerContext<'a> {
    pub train: &'a Corpus,
    pub click_model: Option<&'a ClickModelSpec>,
    /// Number of displayed documents per list.
    pub cutoff: usize,
    pub base_dir: &'a Path,
    pub seed: u64,
}

/// A learner together with all of its mutable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Learner {
    Ipw(Ipw),
    Dla(Dla),
    Rem(Rem),
    Pd(Pd),
    Dueling(Dueling),
    Pdgd(Pdgd),
}

fn propensity_table(settings: &ExperimentSettings, ctx: &LearnerContext) -> Result<PropensityTable> {
    let h = &settings.learning_algorithm_hparams;
    let kind = match (h.propensity_estimator_type, &h.propensity_estimator_json, ctx.click_model) {
        (Some(kind), _, _) => kind,
        (None, Some(_), _) => PropensityEstimatorKind::Randomized,
        (None, None, Some(_)) => PropensityEstimatorKind::Oracle,
        (None, None, None) => PropensityEstimatorKind::Basic,
    };
    match kind {
        PropensityEstimatorKind::Basic => PropensityTable::basic(ctx.cutoff),
        PropensityEstimatorKind::Oracle => {
            let spec = ctx
                .click_model
                .ok_or_else(|| Error::Config("oracle propensities need a training click model".into()))?;
            oracle_from_click_model(spec, ctx.cutoff)
        }
        PropensityEstimatorKind::Randomized => match &h.propensity_estimator_json {
            Some(path) => {
                let p = Path::new(path);
                let p = if p.is_relative() && !p.exists() { ctx.base_dir.join(p) } else { p.to_path_buf() };
                PropensityTable::load(&p)
            }
            None => {
                let spec = ctx
                    .click_model
                    .ok_or_else(|| Error::Config("randomized propensities need a training click model".into()))?;
                let mut rng = stream(ctx.seed, Stream::Propensity);
                estimate_randomized(ctx.train, spec, RANDOMIZED_SESSIONS, ctx.cutoff, &mut rng)
            }
        },
    }
}

impl Learner {
    pub fn build(settings: &ExperimentSettings, model: RankingModel, ctx: &LearnerContext) -> Result<Self> {
        let h = &settings.learning_algorithm_hparams;
        let loss = h.loss_function.unwrap_or(LossKind::Softmax);
        let cutoff = ctx.cutoff;
        Ok(match settings.learning_algorithm {
            AlgorithmKind::Naive => Learner::Ipw(Ipw::naive(model, h.optimizer(DEFAULT_LEARNING_RATE), loss, cutoff)?),
            AlgorithmKind::Ipw => {
                let table = propensity_table(settings, ctx)?;
                Learner::Ipw(Ipw::new(model, h.optimizer(DEFAULT_LEARNING_RATE), loss, table))
            }
            AlgorithmKind::Dla => {
                // The examination logits are not weight-decayed.
                let mut phi_opt = h.optimizer(DEFAULT_LEARNING_RATE);
                phi_opt.l2_loss = 0.0;
                if let Some(lr) = h.propensity_learning_rate {
                    phi_opt.learning_rate = lr;
                }
                Learner::Dla(Dla::new(model, h.optimizer(DEFAULT_LEARNING_RATE), phi_opt, loss, cutoff))
            }
            AlgorithmKind::Rem => Learner::Rem(Rem::new(model, h.optimizer(DEFAULT_LEARNING_RATE), cutoff)?),
            AlgorithmKind::Pd => Learner::Pd(Pd::new(
                model,
                h.optimizer(DEFAULT_LEARNING_RATE),
                cutoff,
                h.regulation_p.unwrap_or(DEFAULT_PD_REGULARIZATION),
            )),
            AlgorithmKind::Dbgd | AlgorithmKind::Mgd | AlgorithmKind::Nsgd => {
                let delta = h.delta.unwrap_or(DEFAULT_DELTA);
                let alpha = h.learning_rate.unwrap_or(DEFAULT_STEP);
                let interleave = h.need_interleave.unwrap_or(true);
                let n = h.n_candidates.unwrap_or(DEFAULT_CANDIDATES);
                Learner::Dueling(match settings.learning_algorithm {
                    AlgorithmKind::Dbgd => Dueling::dbgd(model, delta, alpha, interleave),
                    AlgorithmKind::Mgd => Dueling::mgd(model, delta, alpha, n, interleave)?,
                    _ => Dueling::nsgd(
                        model,
                        delta,
                        alpha,
                        n,
                        interleave,
                        h.null_space_capacity.unwrap_or(DEFAULT_NULL_SPACE_CAPACITY),
                    )?,
                })
            }
            AlgorithmKind::Pdgd => Learner::Pdgd(Pdgd::new(model, h.optimizer(DEFAULT_PDGD_LEARNING_RATE))),
        })
    }

    pub fn model(&self) -> &RankingModel {
        match self {
            Learner::Ipw(l) => &l.model,
            Learner::Dla(l) => &l.model,
            Learner::Rem(l) => &l.model,
            Learner::Pd(l) => &l.model,
            Learner::Dueling(l) => &l.model,
            Learner::Pdgd(l) => &l.model,
        }
    }

    /// One training step. Dueling learners need `env` to show their
    /// interleaved lists to the simulated user.
    pub fn train(&mut self, batch: &InputFeedBatch, env: Option<OnlineEnv>, rng: &mut Rng) -> Result<TrainStepReport> {
        match self {
            Learner::Ipw(l) => l.step(batch),
            Learner::Dla(l) => l.step(batch),
            Learner::Rem(l) => l.step(batch),
            Learner::Pd(l) => l.step(batch),
            Learner::Pdgd(l) => l.step(batch),
            Learner::Dueling(l) => {
                let env = env.ok_or_else(|| Error::Config("online learner needs a click model".into()))?;
                l.step(batch, env, rng)
            }
        }
    }
}
