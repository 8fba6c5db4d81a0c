use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clicksim::{load_spec_file, ClickModelSpec};
use crate::error::{Error, Result};
use crate::feeds::{FeedHparams, FeedKind, InputFeed};
use crate::losses::LossKind;
use crate::metrics::{parse_objective, MetricKind};
use crate::optim::{GradStrategy, Optimizer};
use crate::scorers::{Activation, Norm, ScorerKind, ScorerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlgorithmKind {
    #[serde(rename = "naive", alias = "NA", alias = "Naive")]
    Naive,
    #[serde(rename = "IPW", alias = "ipw")]
    Ipw,
    #[serde(rename = "DLA", alias = "dla")]
    Dla,
    #[serde(rename = "REM", alias = "rem", alias = "RegressionEM")]
    Rem,
    #[serde(rename = "PD", alias = "pd", alias = "PairD", alias = "PairDebias")]
    Pd,
    #[serde(rename = "DBGD", alias = "dbgd")]
    Dbgd,
    #[serde(rename = "MGD", alias = "mgd")]
    Mgd,
    #[serde(rename = "NSGD", alias = "nsgd")]
    Nsgd,
    #[serde(rename = "PDGD", alias = "pdgd")]
    Pdgd,
}

impl AlgorithmKind {
    pub fn is_dueling(self) -> bool {
        matches!(self, AlgorithmKind::Dbgd | AlgorithmKind::Mgd | AlgorithmKind::Nsgd)
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::String(name)) => f.write_str(&name),
            _ => write!(f, "{self:?}"),
        }
    }
}

impl FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::Config(format!("unknown learning algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropensityEstimatorKind {
    #[serde(alias = "oracle", alias = "OraclePropensityEstimator")]
    Oracle,
    #[serde(alias = "basic", alias = "BasicPropensityEstimator")]
    Basic,
    #[serde(alias = "randomized", alias = "RandomizedPropensityEstimator")]
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingModelHparams {
    #[serde(default)]
    pub hidden_layer_sizes: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation_func: Activation,
    #[serde(default = "default_norm")]
    pub norm: Norm,
}

fn default_activation() -> Activation {
    Activation::Elu
}

fn default_norm() -> Norm {
    Norm::Layer
}

impl Default for RankingModelHparams {
    fn default() -> Self {
        Self {
            hidden_layer_sizes: Vec::new(),
            activation_func: default_activation(),
            norm: default_norm(),
        }
    }
}

/// Union of every learner's hyperparameters; unset fields take the
/// learner's default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmHparams {
    pub learning_rate: Option<f64>,
    pub max_gradient_norm: Option<f64>,
    pub grad_strategy: Option<GradStrategy>,
    pub loss_function: Option<LossKind>,
    pub l2_loss: Option<f64>,
    pub propensity_estimator_type: Option<PropensityEstimatorKind>,
    pub propensity_estimator_json: Option<String>,
    /// DLA examination-model learning rate (defaults to `learning_rate`).
    pub propensity_learning_rate: Option<f64>,
    pub need_interleave: Option<bool>,
    pub n_candidates: Option<usize>,
    pub delta: Option<f64>,
    pub null_space_capacity: Option<usize>,
    /// PD regularization exponent.
    pub regulation_p: Option<f64>,
}

impl AlgorithmHparams {
    pub fn optimizer(&self, default_lr: f64) -> Optimizer {
        Optimizer::new(
            self.grad_strategy.unwrap_or(GradStrategy::Sgd),
            self.learning_rate.unwrap_or(default_lr),
            self.max_gradient_norm.unwrap_or(0.0),
            self.l2_loss.unwrap_or(0.0),
        )
    }
}

/// The experiment settings file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    pub train_input_feed: FeedKind,
    #[serde(default)]
    pub train_input_hparams: FeedHparams,
    #[serde(default = "direct_feed")]
    pub valid_input_feed: FeedKind,
    #[serde(default)]
    pub valid_input_hparams: FeedHparams,
    #[serde(default = "direct_feed")]
    pub test_input_feed: FeedKind,
    #[serde(default)]
    pub test_input_hparams: FeedHparams,
    #[serde(default = "default_model")]
    pub ranking_model: ScorerKind,
    #[serde(default)]
    pub ranking_model_hparams: RankingModelHparams,
    pub learning_algorithm: AlgorithmKind,
    #[serde(default)]
    pub learning_algorithm_hparams: AlgorithmHparams,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default = "default_topn")]
    pub metrics_topn: Vec<usize>,
    #[serde(default = "default_objective")]
    pub objective_metric: String,
}

fn direct_feed() -> FeedKind {
    FeedKind::DirectLabel
}

fn default_model() -> ScorerKind {
    ScorerKind::Linear
}

fn default_metrics() -> Vec<MetricKind> {
    vec![MetricKind::Ndcg, MetricKind::Err]
}

fn default_topn() -> Vec<usize> {
    vec![1, 3, 5, 10]
}

fn default_objective() -> String {
    "ndcg_10".into()
}

impl ExperimentSettings {
    pub fn from_json(json: &str) -> Result<Self> {
        let settings: Self = serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))?;
        settings.validate()?;
        Ok(settings)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_algorithm.is_dueling() && !self.train_input_feed.is_online() {
            return Err(Error::Config(format!(
                "{} learns online and cannot train from {:?}",
                self.learning_algorithm, self.train_input_feed
            )));
        }
        if self.metrics_topn.contains(&0) {
            return Err(Error::Config("metrics_topn entries must be positive".into()));
        }
        let (metric, _) = self.objective()?;
        if !self.metrics.contains(&metric) {
            return Err(Error::Config(format!(
                "objective metric {metric} is not among the evaluated metrics"
            )));
        }
        self.scorer_spec().validate()
    }

    pub fn objective(&self) -> Result<(MetricKind, usize)> {
        parse_objective(&self.objective_metric)
    }

    pub fn scorer_spec(&self) -> ScorerSpec {
        let h = &self.ranking_model_hparams;
        ScorerSpec {
            kind: self.ranking_model,
            hidden_layer_sizes: h.hidden_layer_sizes.clone(),
            activation: h.activation_func,
            norm: h.norm,
        }
    }
}

/// Command-line run parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub train_data_prefix: String,
    pub valid_data_prefix: String,
    pub test_data_prefix: String,
    pub model_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub batch_size: usize,
    pub max_list_cutoff: usize,
    pub selection_bias_cutoff: usize,
    pub max_train_iteration: usize,
    pub start_saving_iteration: usize,
    pub steps_per_checkpoint: usize,
    pub test_while_train: bool,
    pub test_only: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("."),
            train_data_prefix: "train".into(),
            valid_data_prefix: "valid".into(),
            test_data_prefix: "test".into(),
            model_dir: None,
            output_dir: None,
            batch_size: 256,
            max_list_cutoff: 0,
            selection_bias_cutoff: 10,
            max_train_iteration: 10_000,
            start_saving_iteration: 0,
            steps_per_checkpoint: 50,
            test_while_train: false,
            test_only: false,
            seed: 0,
        }
    }
}

fn resolve_click_model(h: &FeedHparams, base: &Path) -> Result<Option<ClickModelSpec>> {
    match (&h.click_model, &h.click_model_json) {
        (Some(spec), _) => {
            spec.validate()?;
            Ok(Some(spec.clone()))
        }
        (None, Some(path)) => {
            let p = Path::new(path);
            let p = if p.is_relative() && !p.exists() { base.join(p) } else { p.to_path_buf() };
            Ok(Some(load_spec_file(&p)?))
        }
        (None, None) => Ok(None),
    }
}

/// Builds a feed from its kind and hyperparameters. Relative click-model
/// paths that do not exist as given are tried under `base`.
pub fn build_feed(kind: FeedKind, h: &FeedHparams, cutoff: usize, base: &Path) -> Result<InputFeed> {
    let click_model = if kind.simulates_clicks() { resolve_click_model(h, base)? } else { None };
    let interval = h.dynamic_bias_step_interval;
    if !(interval >= 0.0) || interval.fract() != 0.0 {
        return Err(Error::Config(format!("dynamic_bias_step_interval must be a whole number, got {interval}")));
    }
    Ok(InputFeed::new(kind, click_model, cutoff)?
        .with_oracle_mode(h.oracle_mode)
        .with_dynamic_bias(h.dynamic_bias_eta_change, interval as usize))
}
