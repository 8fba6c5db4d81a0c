//! Click models: position-based (pbm), cascade and user browsing (ubm).
//!
//! All three share one JSON schema. A document of grade `g` is clicked, once
//! examined, with probability
//! `neg + (pos - neg) * (2^g - 1) / (2^g_max - 1)`. Examination follows
//! `(1/k)^eta` at rank `k` for pbm. The ubm variant uses the same power law
//! over the distance to the previous click; it is a minimal stand-in, not a
//! fitted browsing model.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClickModelKind {
    Pbm,
    Cascade,
    Ubm,
}

impl fmt::Display for ClickModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClickModelKind::Pbm => "pbm",
            ClickModelKind::Cascade => "cascade",
            ClickModelKind::Ubm => "ubm",
        })
    }
}

impl FromStr for ClickModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pbm" => Ok(ClickModelKind::Pbm),
            "cascade" => Ok(ClickModelKind::Cascade),
            "ubm" => Ok(ClickModelKind::Ubm),
            other => Err(Error::InvalidValue(format!("unknown click model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClickModelSpec {
    pub model_name: ClickModelKind,
    pub neg_click_prob: f64,
    pub pos_click_prob: f64,
    pub max_relevance_grade: u32,
    /// Position-bias severity exponent.
    pub eta: f64,
}

impl ClickModelSpec {
    pub fn new(model_name: ClickModelKind, neg: f64, pos: f64, g_max: u32, eta: f64) -> Result<Self> {
        let spec = Self {
            model_name,
            neg_click_prob: neg,
            pos_click_prob: pos,
            max_relevance_grade: g_max,
            eta,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (neg, pos) = (self.neg_click_prob, self.pos_click_prob);
        if !(0.0..=1.0).contains(&neg) || !(0.0..=1.0).contains(&pos) {
            return Err(Error::InvalidValue(format!(
                "click probabilities must lie in [0, 1], got neg={neg} pos={pos}"
            )));
        }
        if neg > pos {
            return Err(Error::InvalidValue(format!(
                "neg_click_prob {neg} exceeds pos_click_prob {pos}"
            )));
        }
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::InvalidValue(format!("eta must be a non-negative real, got {}", self.eta)));
        }
        Ok(())
    }

    /// Copy with a different severity, as used by dynamic bias schedules.
    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        let mut spec = self.clone();
        spec.eta = eta;
        spec.validate()?;
        Ok(spec)
    }

    /// `<model>_<neg>_<pos>_<g_max>_<eta>.json`, e.g. `pbm_0.1_1.0_4_1.0.json`.
    pub fn file_name(&self) -> String {
        format!(
            "{}_{:?}_{:?}_{}_{:?}.json",
            self.model_name, self.neg_click_prob, self.pos_click_prob, self.max_relevance_grade, self.eta
        )
    }
}

pub fn load_spec(json: &str) -> Result<ClickModelSpec> {
    let spec: ClickModelSpec = serde_json::from_str(json)?;
    spec.validate()?;
    Ok(spec)
}

pub fn save_spec(spec: &ClickModelSpec) -> String {
    serde_json::to_string(spec).expect("click model spec serializes")
}

pub fn load_spec_file(path: &Path) -> Result<ClickModelSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_spec(&text)
}

/// Probability that an examined document of `grade` is clicked.
pub fn click_prob_from_grade(grade: u32, spec: &ClickModelSpec) -> Result<f64> {
    let g_max = spec.max_relevance_grade;
    if grade > g_max {
        return Err(Error::InvalidValue(format!(
            "grade {grade} exceeds the click model's max_relevance_grade {g_max}"
        )));
    }
    let (neg, pos) = (spec.neg_click_prob, spec.pos_click_prob);
    if g_max == 0 {
        return Ok(if grade > 0 { pos } else { neg });
    }
    let gain = (2f64.powi(grade as i32) - 1.0) / (2f64.powi(g_max as i32) - 1.0);
    Ok(neg + (pos - neg) * gain)
}

/// `(1/rank)^eta` for a 1-based rank.
pub fn pbm_exam_prob(rank: usize, eta: f64) -> f64 {
    debug_assert!(rank >= 1);
    (1.0 / rank as f64).powf(eta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClickRecord {
    pub clicks: Vec<bool>,
    /// Examination probability in effect at each rank when it was sampled.
    pub exam_probs: Vec<f64>,
}

impl ClickRecord {
    pub fn num_clicks(&self) -> usize {
        self.clicks.iter().filter(|&&c| c).count()
    }

    pub fn as_labels(&self) -> Vec<f64> {
        self.clicks.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()
    }
}

/// Samples clicks for grades shown at ranks 1..=n.
pub fn simulate(spec: &ClickModelSpec, grades: &[u32], rng: &mut Rng) -> Result<ClickRecord> {
    let n = grades.len();
    let mut clicks = vec![false; n];
    let mut exam_probs = vec![0.0; n];
    let rel: Vec<f64> = grades
        .iter()
        .map(|&g| click_prob_from_grade(g, spec))
        .collect::<Result<_>>()?;
    match spec.model_name {
        ClickModelKind::Pbm => {
            for k in 0..n {
                let exam = pbm_exam_prob(k + 1, spec.eta);
                exam_probs[k] = exam;
                clicks[k] = rng.random::<f64>() < exam * rel[k];
            }
        }
        ClickModelKind::Cascade => {
            for k in 0..n {
                exam_probs[k] = 1.0;
                if rng.random::<f64>() < rel[k] {
                    clicks[k] = true;
                    break;
                }
            }
        }
        ClickModelKind::Ubm => {
            let mut last_click = 0usize;
            for k in 0..n {
                let rank = k + 1;
                let exam = pbm_exam_prob(rank - last_click, spec.eta);
                exam_probs[k] = exam;
                if rng.random::<f64>() < exam * rel[k] {
                    clicks[k] = true;
                    last_click = rank;
                }
            }
        }
    }
    Ok(ClickRecord { clicks, exam_probs })
}
