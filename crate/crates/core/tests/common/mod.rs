#![allow(dead_code)]

pub mod checks;
pub mod gradcheck;
pub mod oracle;

use serde_json::{json, Value};

use ultr::clicksim::{ClickModelKind, ClickModelSpec};
use ultr::dataset::synthetic::SyntheticSpec;
use ultr::dataset::Split;
use ultr::metrics::MetricKind;
use ultr::pipeline::{run_test, Datasets, Experiment, ExperimentSettings, RunConfig, Trainer, TrainingOutcome};

pub const TRAIN_QUERIES: usize = 500;
pub const DOCS: usize = 20;
pub const FEATURES: usize = 10;

pub fn env_f64(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

pub fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

pub fn pbm(eta: f64) -> ClickModelSpec {
    ClickModelSpec::new(ClickModelKind::Pbm, 0.1, 1.0, 4, eta).unwrap()
}

/// Train/valid/test splits of the synthetic linear-truth corpus.
pub fn synthetic_data(logging_bias: f64, seed: u64) -> (SyntheticSpec, Datasets) {
    let mut spec = SyntheticSpec::new(FEATURES, DOCS, logging_bias, seed);
    spec.label_noise = 0.5;
    let data = Datasets {
        train: spec.generate(TRAIN_QUERIES, Split::Train, seed + 1).unwrap(),
        valid: spec.generate(100, Split::Valid, seed + 2).unwrap(),
        test: Some(spec.generate(200, Split::Test, seed + 3).unwrap()),
    };
    (spec, data)
}

pub fn settings(algorithm: &str, feed: &str, click_model: &ClickModelSpec, hparams: Value) -> ExperimentSettings {
    let json = json!({
        "train_input_feed": feed,
        "train_input_hparams": {"click_model": click_model},
        "ranking_model": "Linear",
        "ranking_model_hparams": {"norm": "none"},
        "learning_algorithm": algorithm,
        "learning_algorithm_hparams": hparams,
        "metrics": ["ndcg"],
        "metrics_topn": [10],
        "objective_metric": "ndcg_10"
    });
    ExperimentSettings::from_json(&json.to_string()).unwrap()
}

pub fn run_config(iterations: usize, batch_size: usize, seed: u64) -> RunConfig {
    RunConfig {
        batch_size,
        selection_bias_cutoff: 10,
        max_train_iteration: iterations,
        steps_per_checkpoint: iterations.max(1),
        seed,
        ..RunConfig::default()
    }
}

pub struct RunResult {
    pub initial_ndcg: f64,
    pub final_ndcg: f64,
    pub outcome: TrainingOutcome,
}

/// Trains and reports test nDCG@10 of the initial and final scorers.
pub fn train_and_test(settings: ExperimentSettings, run: RunConfig, data: &Datasets) -> RunResult {
    let exp = Experiment::new(settings, run).unwrap();
    let trainer = Trainer::new(&exp, data).unwrap();
    let test = data.test.as_ref().unwrap();
    let initial = run_test(&exp, test, &trainer.record()).unwrap();
    let outcome = trainer.run().unwrap();
    let last = run_test(&exp, test, &outcome.final_record).unwrap();
    RunResult {
        initial_ndcg: initial.value(MetricKind::Ndcg, 10).unwrap(),
        final_ndcg: last.value(MetricKind::Ndcg, 10).unwrap(),
        outcome,
    }
}
