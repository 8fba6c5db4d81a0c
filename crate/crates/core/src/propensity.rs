//! Examination propensity tables.
//!
//! Three estimators produce a [`PropensityTable`]: the oracle reads the
//! curve off a pbm click model, the basic estimator assumes no position bias
//! (all ones), and the randomized estimator measures per-rank click rates
//! on uniformly shuffled result lists. Tables are normalized so that rank 1
//! has propensity 1.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::clicksim::{pbm_exam_prob, simulate, ClickModelKind, ClickModelSpec};
use crate::dataset::Corpus;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::MAX_INVERSE_WEIGHT;

const NORMALIZATION_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropensityTable {
    exam_probs: Vec<f64>,
}

/// Divides every entry by the first one.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    match values.first() {
        Some(&first) if first != 0.0 => values.iter().map(|v| v / first).collect(),
        _ => values.to_vec(),
    }
}

impl PropensityTable {
    /// Normalizes `exam_probs` to rank-1 = 1 and checks every entry is in (0, 1].
    pub fn new(exam_probs: Vec<f64>) -> Result<Self> {
        if exam_probs.is_empty() {
            return Err(Error::InvalidValue("propensity table is empty".into()));
        }
        if exam_probs.iter().any(|&p| !p.is_finite() || p <= 0.0) {
            return Err(Error::InvalidValue(format!(
                "propensities must be positive and finite: {exam_probs:?}"
            )));
        }
        let normalized = normalize(&exam_probs);
        if let Some(bad) = normalized.iter().find(|&&p| p > 1.0 + NORMALIZATION_SLACK) {
            return Err(Error::InvalidValue(format!(
                "normalized propensity {bad} exceeds 1 (rank-1 must be the most examined)"
            )));
        }
        Ok(Self {
            exam_probs: normalized.into_iter().map(|p| p.min(1.0)).collect(),
        })
    }

    /// All-ones table: no position-bias correction.
    pub fn basic(cutoff: usize) -> Result<Self> {
        Self::new(vec![1.0; cutoff])
    }

    pub fn exam_probs(&self) -> &[f64] {
        &self.exam_probs
    }

    pub fn len(&self) -> usize {
        self.exam_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exam_probs.is_empty()
    }

    /// `min(1/p_k, MAX_INVERSE_WEIGHT)` for each rank.
    pub fn inverse_weights(&self) -> Vec<f64> {
        self.exam_probs.iter().map(|&p| inverse_weight(p)).collect()
    }

    /// Inverse weights for the first `n` ranks.
    pub fn weights_for(&self, n: usize) -> Result<Vec<f64>> {
        if n > self.len() {
            return Err(Error::Contract(format!(
                "propensity table covers {} ranks, list has {n}",
                self.len()
            )));
        }
        Ok(self.exam_probs[..n].iter().map(|&p| inverse_weight(p)).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("propensity table serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            exam_probs: Vec<f64>,
        }
        let raw: Raw = serde_json::from_str(json)?;
        Self::new(raw.exam_probs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

pub fn inverse_weight(p: f64) -> f64 {
    (1.0 / p).min(MAX_INVERSE_WEIGHT)
}

/// The pbm examination curve, `(1/k)^eta` for k = 1..=cutoff.
pub fn oracle_from_click_model(spec: &ClickModelSpec, cutoff: usize) -> Result<PropensityTable> {
    if spec.model_name != ClickModelKind::Pbm {
        return Err(Error::Unsupported(format!(
            "{} has no static per-rank propensity",
            spec.model_name
        )));
    }
    PropensityTable::new((1..=cutoff).map(|k| pbm_exam_prob(k, spec.eta)).collect())
}

/// Estimates propensities from clicks on uniformly shuffled top-`cutoff`
/// lists: the click rate at rank k divided by the click rate at rank 1.
pub fn estimate_randomized(
    corpus: &Corpus,
    spec: &ClickModelSpec,
    sessions: usize,
    cutoff: usize,
    rng: &mut Rng,
) -> Result<PropensityTable> {
    if sessions == 0 || cutoff == 0 {
        return Err(Error::InvalidValue("sessions and cutoff must be positive".into()));
    }
    let mut clicks = vec![0u64; cutoff];
    let mut impressions = vec![0u64; cutoff];
    let mut grades = Vec::with_capacity(cutoff);
    for _ in 0..sessions {
        let session = corpus.session(rng.random_range(0..corpus.num_sessions()));
        let shown = session.len().min(cutoff);
        grades.clear();
        grades.extend_from_slice(&session.labels[..shown]);
        grades.shuffle(rng);
        let record = simulate(spec, &grades, rng)?;
        for (k, &c) in record.clicks.iter().enumerate() {
            impressions[k] += 1;
            clicks[k] += c as u64;
        }
    }
    if clicks[0] == 0 {
        return Err(Error::EstimationFailed("no clicks observed at rank 1".into()));
    }
    let rate = |k: usize| {
        if impressions[k] == 0 {
            0.0
        } else {
            clicks[k] as f64 / impressions[k] as f64
        }
    };
    let top = rate(0);
    let floor = 1.0 / MAX_INVERSE_WEIGHT;
    PropensityTable::new((0..cutoff).map(|k| (rate(k) / top).clamp(floor, 1.0)).collect())
}
