//! Ranking metrics over scored, graded lists.
//!
//! Documents are ranked by descending score with ties broken by original
//! position. Padded slots (mask false) are dropped before ranking. Cutoff
//! metrics look at the top `k`; ARP, MAP and OPA always use the whole list.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mrr,
    Err,
    Arp,
    Dcg,
    Ndcg,
    Precision,
    Map,
    Opa,
}

impl MetricKind {
    pub const ALL: [MetricKind; 8] = [
        MetricKind::Mrr,
        MetricKind::Err,
        MetricKind::Arp,
        MetricKind::Dcg,
        MetricKind::Ndcg,
        MetricKind::Precision,
        MetricKind::Map,
        MetricKind::Opa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Mrr => "mrr",
            MetricKind::Err => "err",
            MetricKind::Arp => "arp",
            MetricKind::Dcg => "dcg",
            MetricKind::Ndcg => "ndcg",
            MetricKind::Precision => "precision",
            MetricKind::Map => "map",
            MetricKind::Opa => "opa",
        }
    }

    /// Whether larger values mean better rankings.
    pub fn higher_is_better(self) -> bool {
        self != MetricKind::Arp
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

/// Parses an objective such as `"ndcg_10"`.
pub fn parse_objective(s: &str) -> Result<(MetricKind, usize)> {
    let (name, k) = s
        .rsplit_once('_')
        .ok_or_else(|| Error::Config(format!("objective {s:?} is not of the form metric_k")))?;
    let k: usize = k
        .parse()
        .map_err(|_| Error::Config(format!("objective {s:?} has a bad cutoff")))?;
    if k == 0 {
        return Err(Error::Config(format!("objective {s:?} has cutoff 0")));
    }
    Ok((name.parse()?, k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub scores: Vec<f64>,
    pub grades: Vec<f64>,
    pub mask: Vec<bool>,
    pub g_max: u32,
}

impl RankedResult {
    pub fn new(scores: Vec<f64>, grades: Vec<f64>, g_max: u32) -> Result<Self> {
        let n = scores.len();
        Self::with_mask(scores, grades, vec![true; n], g_max)
    }

    pub fn with_mask(scores: Vec<f64>, grades: Vec<f64>, mask: Vec<bool>, g_max: u32) -> Result<Self> {
        if grades.len() != scores.len() || mask.len() != scores.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                actual: if grades.len() != scores.len() { grades.len() } else { mask.len() },
            });
        }
        if grades.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::InvalidValue("grades must be non-negative".into()));
        }
        Ok(Self {
            scores,
            grades,
            mask,
            g_max,
        })
    }
}

/// Valid indices by descending score, ties in original order.
pub fn sort_by_score(result: &RankedResult) -> Vec<usize> {
    let mut order: Vec<usize> = (0..result.scores.len()).filter(|&i| result.mask[i]).collect();
    order.sort_by(|&a, &b| result.scores[b].total_cmp(&result.scores[a]));
    order
}

fn gain(g: f64) -> f64 {
    g.exp2() - 1.0
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

fn dcg(grades: impl Iterator<Item = f64>, k: usize) -> f64 {
    grades.take(k).enumerate().map(|(i, g)| gain(g) * discount(i + 1)).sum()
}

pub fn evaluate(result: &RankedResult, metric: MetricKind, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidValue("metric cutoff must be at least 1".into()));
    }
    let order = sort_by_score(result);
    let ranked: Vec<f64> = order.iter().map(|&i| result.grades[i]).collect();
    let relevant = |g: f64| g > 0.0;
    let value = match metric {
        MetricKind::Mrr => ranked
            .iter()
            .take(k)
            .position(|&g| relevant(g))
            .map_or(0.0, |p| 1.0 / (p + 1) as f64),
        MetricKind::Err => {
            let denom = (result.g_max.max(1) as f64).exp2();
            let mut not_stopped = 1.0;
            let mut err = 0.0;
            for (i, &g) in ranked.iter().take(k).enumerate() {
                let r = gain(g) / denom;
                err += not_stopped * r / (i + 1) as f64;
                not_stopped *= 1.0 - r;
            }
            err
        }
        MetricKind::Arp => {
            let ranks: Vec<usize> = (0..ranked.len()).filter(|&i| relevant(ranked[i])).collect();
            if ranks.is_empty() {
                0.0
            } else {
                ranks.iter().map(|&i| (i + 1) as f64).sum::<f64>() / ranks.len() as f64
            }
        }
        MetricKind::Dcg => dcg(ranked.iter().copied(), k),
        MetricKind::Ndcg => {
            let mut ideal = ranked.clone();
            ideal.sort_by(|a, b| b.total_cmp(a));
            let best = dcg(ideal.into_iter(), k);
            if best > 0.0 {
                dcg(ranked.iter().copied(), k) / best
            } else {
                0.0
            }
        }
        MetricKind::Precision => ranked.iter().take(k).filter(|&&g| relevant(g)).count() as f64 / k as f64,
        MetricKind::Map => {
            let mut hits = 0usize;
            let mut sum = 0.0;
            for (i, &g) in ranked.iter().enumerate() {
                if relevant(g) {
                    hits += 1;
                    sum += hits as f64 / (i + 1) as f64;
                }
            }
            if hits == 0 {
                0.0
            } else {
                sum / hits as f64
            }
        }
        MetricKind::Opa => {
            let valid: Vec<usize> = (0..result.scores.len()).filter(|&i| result.mask[i]).collect();
            let mut pairs = 0usize;
            let mut correct = 0usize;
            for &i in &valid {
                for &j in &valid {
                    if result.grades[i] > result.grades[j] {
                        pairs += 1;
                        if result.scores[i] > result.scores[j] {
                            correct += 1;
                        }
                    }
                }
            }
            if pairs == 0 {
                0.0
            } else {
                correct as f64 / pairs as f64
            }
        }
    };
    Ok(value)
}

/// Mean of `metric@k` over lists; 0 for no lists.
pub fn mean_metric(results: &[RankedResult], metric: MetricKind, k: usize) -> Result<f64> {
    if results.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for r in results {
        total += evaluate(r, metric, k)?;
    }
    Ok(total / results.len() as f64)
}
