//! Synthetic LETOR corpora with a linear ground truth.
//!
//! Features are i.i.d. standard normal. A document's grade buckets its true
//! linear score (plus optional noise) at fixed thresholds, and the logged
//! order comes from a separate "production" linear ranker whose weights are
//! a perturbed copy of the truth, so logged positions correlate with, but do
//! not equal, relevance.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{Corpus, Document, QuerySession, Split};
use crate::error::Result;
use crate::rng::{seeded, Rng};

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub feature_size: usize,
    pub docs_per_query: usize,
    /// Ground-truth scoring weights (unit norm).
    pub truth: Vec<f64>,
    /// Weights of the ranker that produced the logged order.
    pub logging: Vec<f64>,
    /// Grade `g` is assigned when the true score exceeds `thresholds[g - 1]`.
    pub thresholds: Vec<f64>,
    pub label_noise: f64,
    pub logging_noise: f64,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

impl SyntheticSpec {
    /// Grades 0..=4 from a random unit truth vector; `logging_bias` scales
    /// the random perturbation separating the logging ranker from the truth.
    pub fn new(feature_size: usize, docs_per_query: usize, logging_bias: f64, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let truth = unit(normal_vec(&mut rng, feature_size));
        let perturbation = unit(normal_vec(&mut rng, feature_size));
        let logging = unit(
            truth
                .iter()
                .zip(&perturbation)
                .map(|(t, p)| t + logging_bias * p)
                .collect(),
        );
        Self {
            feature_size,
            docs_per_query,
            truth,
            logging,
            thresholds: vec![0.5, 1.0, 1.5, 2.0],
            label_noise: 0.0,
            logging_noise: 0.1,
        }
    }

    pub fn max_grade(&self) -> u32 {
        self.thresholds.len() as u32
    }

    pub fn grade(&self, true_score: f64) -> u32 {
        self.thresholds.iter().filter(|&&t| true_score > t).count() as u32
    }

    pub fn generate(&self, num_queries: usize, split: Split, seed: u64) -> Result<Corpus> {
        let mut rng = seeded(seed);
        let mut documents = Vec::with_capacity(num_queries * self.docs_per_query);
        let mut sessions = Vec::with_capacity(num_queries);
        for q in 0..num_queries {
            let mut docs: Vec<(f64, Document)> = (0..self.docs_per_query)
                .map(|_| {
                    let features = normal_vec(&mut rng, self.feature_size);
                    let truth: f64 = dot(&self.truth, &features)
                        + self.label_noise * rng.sample::<f64, _>(StandardNormal);
                    let logged =
                        dot(&self.logging, &features) + self.logging_noise * rng.sample::<f64, _>(StandardNormal);
                    (
                        logged,
                        Document {
                            features,
                            relevance_grade: self.grade(truth),
                        },
                    )
                })
                .collect();
            docs.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut session = QuerySession {
                query_id: format!("{split}-{q}"),
                doc_ids: Vec::with_capacity(docs.len()),
                labels: Vec::with_capacity(docs.len()),
            };
            for (_, doc) in docs {
                session.doc_ids.push(documents.len());
                session.labels.push(doc.relevance_grade);
                documents.push(doc);
            }
            sessions.push(session);
        }
        Corpus::new(documents, sessions, split)?.with_g_max(self.max_grade())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
