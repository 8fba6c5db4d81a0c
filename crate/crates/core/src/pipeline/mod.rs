//! Experiment driver: settings, the training loop, checkpoints and
//! evaluation reports.

mod config;
mod learner;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{
    build_feed, AlgorithmHparams, AlgorithmKind, ExperimentSettings, PropensityEstimatorKind, RankingModelHparams,
    RunConfig,
};
pub use learner::{Learner, LearnerContext};

use crate::bandit::OnlineEnv;
use crate::counterfactual::TrainStepReport;
use crate::dataset::{load_split, split_path, Corpus, Split};
use crate::error::{Error, Result};
use crate::feeds::{FeedList, InputFeed};
use crate::metrics::{evaluate, MetricKind, RankedResult};
use crate::rng::{step_stream, stream, Stream};
use crate::scorers::RankingModel;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LATEST_FILE: &str = "latest.json";
pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const TEST_PER_QUERY_FILE: &str = "test_per_query.tsv";
pub const TEST_AGGREGATE_FILE: &str = "test_aggregate.tsv";

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Option<Corpus>,
}

impl Datasets {
    pub fn load_test(run: &RunConfig) -> Result<Corpus> {
        Ok(load_split(&run.data_dir, &run.test_data_prefix, Split::Test)?.with_list_cutoff(run.max_list_cutoff))
    }

    /// Loads the three splits; the test split is optional.
    pub fn load(run: &RunConfig) -> Result<Self> {
        let load = |prefix: &str, split| Ok::<_, Error>(load_split(&run.data_dir, prefix, split)?.with_list_cutoff(run.max_list_cutoff));
        let test = if split_path(&run.data_dir, &run.test_data_prefix).exists() {
            Some(load(&run.test_data_prefix, Split::Test)?)
        } else {
            None
        };
        Ok(Self {
            train: load(&run.train_data_prefix, Split::Train)?,
            valid: load(&run.valid_data_prefix, Split::Valid)?,
            test,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub settings: ExperimentSettings,
    pub run: RunConfig,
    /// Directory that relative paths in the settings are resolved against.
    pub base_dir: PathBuf,
}

impl Experiment {
    pub fn new(settings: ExperimentSettings, run: RunConfig) -> Result<Self> {
        settings.validate()?;
        if run.steps_per_checkpoint == 0 {
            return Err(Error::Config("steps_per_checkpoint must be positive".into()));
        }
        Ok(Self {
            settings,
            run,
            base_dir: PathBuf::from("."),
        })
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    /// `metric@k` for every configured metric and cutoff.
    pub fn metric_columns(&self) -> Vec<(MetricKind, usize)> {
        let s = &self.settings;
        s.metrics.iter().flat_map(|&m| s.metrics_topn.iter().map(move |&k| (m, k))).collect()
    }

    fn column_names(&self) -> Vec<String> {
        self.metric_columns().iter().map(|(m, k)| format!("{m}@{k}")).collect()
    }

    fn objective_index(&self) -> Result<usize> {
        let (m, k) = self.settings.objective()?;
        let cols = self.metric_columns();
        match cols.iter().position(|&c| c == (m, k)) {
            Some(i) => Ok(i),
            None => Err(Error::Config(format!(
                "objective {} is not covered by metrics_topn",
                self.settings.objective_metric
            ))),
        }
    }

    /// Number of documents shown per list for a corpus.
    fn displayed(&self, corpus: &Corpus) -> usize {
        let longest = corpus.sessions().iter().map(|s| s.len()).max().unwrap_or(0);
        match self.run.selection_bias_cutoff {
            0 => longest,
            c => c.min(longest),
        }
        .max(1)
    }

    /// The feed configured for one split.
    pub fn feed(&self, which: Split) -> Result<InputFeed> {
        let s = &self.settings;
        let (kind, h) = match which {
            Split::Train => (s.train_input_feed, &s.train_input_hparams),
            Split::Valid => (s.valid_input_feed, &s.valid_input_hparams),
            Split::Test => (s.test_input_feed, &s.test_input_hparams),
        };
        build_feed(kind, h, self.run.selection_bias_cutoff, &self.base_dir)
    }
}

/// Scorer parameters, learner state and bookkeeping at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: usize,
    pub learner: Learner,
    pub best_objective: Option<f64>,
    /// Current click-model eta of the training feed (dynamic bias).
    pub train_eta: Option<f64>,
}

impl CheckpointRecord {
    pub fn model(&self) -> &RankingModel {
        self.learner.model()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub valid: Vec<f64>,
    pub test: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricLog {
    pub columns: Vec<String>,
    pub rows: Vec<LogRow>,
}

impl MetricLog {
    pub fn to_tsv(&self) -> String {
        let with_test = self.rows.iter().any(|r| r.test.is_some());
        let mut out = String::from("step\tloss");
        for c in &self.columns {
            write!(out, "\tvalid_{c}").unwrap();
        }
        if with_test {
            for c in &self.columns {
                write!(out, "\ttest_{c}").unwrap();
            }
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{}\t{}", r.step, r.loss).unwrap();
            for v in &r.valid {
                write!(out, "\t{v}").unwrap();
            }
            if let Some(t) = &r.test {
                for v in t {
                    write!(out, "\t{v}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    /// Validation values of one column, in row order.
    pub fn valid_column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.valid[i]).collect())
    }
}

/// Per-query and mean metric values over one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub columns: Vec<String>,
    pub per_query: Vec<(String, Vec<f64>)>,
    pub aggregate: Vec<f64>,
}

impl Evaluation {
    pub fn value(&self, metric: MetricKind, k: usize) -> Option<f64> {
        let name = format!("{metric}@{k}");
        self.columns.iter().position(|c| *c == name).map(|i| self.aggregate[i])
    }

    pub fn per_query_tsv(&self) -> String {
        let mut out = String::from("query_id");
        for c in &self.columns {
            write!(out, "\t{c}").unwrap();
        }
        out.push('\n');
        for (q, values) in &self.per_query {
            out.push_str(q);
            for v in values {
                write!(out, "\t{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn aggregate_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        for (c, v) in self.columns.iter().zip(&self.aggregate) {
            writeln!(out, "{c}\t{v}").unwrap();
        }
        out
    }
}

/// Evaluates `scores` over one full pass of `feed` on `corpus`. Metrics are
/// computed against the feed's labels on the displayed documents.
pub fn evaluate_with<F>(
    exp: &Experiment,
    corpus: &Corpus,
    feed: &mut InputFeed,
    model: Option<&RankingModel>,
    rng_stream: Stream,
    mut scores: F,
) -> Result<Evaluation>
where
    F: FnMut(&FeedList) -> Result<Vec<f64>>,
{
    let columns = exp.metric_columns();
    let g_max = if feed.emits_clicks() {
        1
    } else {
        corpus.g_max().max(1)
    };
    let mut rng = stream(exp.run.seed, rng_stream);
    let mut per_query = Vec::with_capacity(corpus.num_sessions());
    feed.reset_cursor();
    while let Some(batch) = feed.next_batch(corpus, exp.run.batch_size.max(1), model, &mut rng)? {
        for list in &batch.lists {
            let s = scores(list)?;
            if s.len() != list.shown {
                return Err(Error::DimensionMismatch {
                    expected: list.shown,
                    actual: s.len(),
                });
            }
            let result = RankedResult::new(s, list.labels.clone(), g_max)?;
            let values = columns
                .iter()
                .map(|&(m, k)| evaluate(&result, m, k))
                .collect::<Result<Vec<_>>>()?;
            per_query.push((corpus.session(list.query_index).query_id.clone(), values));
        }
    }
    let n = per_query.len().max(1) as f64;
    let mut aggregate = vec![0.0; columns.len()];
    for (_, v) in &per_query {
        for (a, x) in aggregate.iter_mut().zip(v) {
            *a += x;
        }
    }
    aggregate.iter_mut().for_each(|a| *a /= n);
    Ok(Evaluation {
        columns: exp.column_names(),
        per_query,
        aggregate,
    })
}

/// Evaluates a ranking model on a split with that split's feed.
pub fn evaluate_model(exp: &Experiment, corpus: &Corpus, split: Split, model: &RankingModel) -> Result<Evaluation> {
    let mut feed = exp.feed(split)?;
    let rng_stream = if split == Split::Test { Stream::Test } else { Stream::Valid };
    evaluate_with(exp, corpus, &mut feed, Some(model), rng_stream, |list| model.score(list.shown_features()))
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub final_record: CheckpointRecord,
    pub best: Option<CheckpointRecord>,
    pub log: MetricLog,
    pub checkpoints_saved: usize,
    pub test: Option<Evaluation>,
}

/// The training loop, steppable for tests and resumable from checkpoints.
pub struct Trainer<'a> {
    exp: &'a Experiment,
    data: &'a Datasets,
    learner: Learner,
    feed: InputFeed,
    step: usize,
    best: Option<f64>,
    best_record: Option<CheckpointRecord>,
    checkpoints_saved: usize,
    loss_sum: f64,
    loss_count: usize,
    log: MetricLog,
}

impl<'a> Trainer<'a> {
    pub fn new(exp: &'a Experiment, data: &'a Datasets) -> Result<Self> {
        let feed = exp.feed(Split::Train)?;
        let mut init_rng = stream(exp.run.seed, Stream::Init);
        let model = RankingModel::init(exp.settings.scorer_spec(), data.train.feature_size(), &mut init_rng)?;
        let ctx = LearnerContext {
            train: &data.train,
            click_model: feed.click_model(),
            cutoff: exp.displayed(&data.train),
            base_dir: &exp.base_dir,
            seed: exp.run.seed,
        };
        let learner = Learner::build(&exp.settings, model, &ctx)?;
        exp.objective_index()?;
        Ok(Self {
            exp,
            data,
            learner,
            feed,
            step: 0,
            best: None,
            best_record: None,
            checkpoints_saved: 0,
            loss_sum: 0.0,
            loss_count: 0,
            log: MetricLog {
                columns: exp.column_names(),
                rows: Vec::new(),
            },
        })
    }

    /// Continues a run from `record` as if it had never stopped.
    pub fn resume(exp: &'a Experiment, data: &'a Datasets, record: CheckpointRecord) -> Result<Self> {
        let mut t = Self::new(exp, data)?;
        if let Some(eta) = record.train_eta {
            t.feed.set_eta(eta)?;
        }
        t.step = record.step;
        t.best = record.best_objective;
        t.learner = record.learner;
        Ok(t)
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn record(&self) -> CheckpointRecord {
        CheckpointRecord {
            step: self.step,
            learner: self.learner.clone(),
            best_objective: self.best,
            train_eta: self.feed.click_model().map(|c| c.eta),
        }
    }

    /// Runs one training step.
    pub fn step_once(&mut self) -> Result<TrainStepReport> {
        let step = self.step + 1;
        let seed = self.exp.run.seed;
        let mut feed_rng = step_stream(seed, Stream::TrainFeed, step as u64);
        let batch = self.feed.get_batch(
            &self.data.train,
            self.exp.run.batch_size.max(1),
            Some(self.learner.model()),
            &mut feed_rng,
        )?;
        let env = self.feed.click_model().map(|click_model| OnlineEnv {
            click_model,
            cutoff: self.exp.run.selection_bias_cutoff,
        });
        let mut alg_rng = step_stream(seed, Stream::Algorithm, step as u64);
        let report = self
            .learner
            .train(&batch, env, &mut alg_rng)
            .map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!(
                    "{} diverged at step {step}: {msg}",
                    self.exp.settings.learning_algorithm
                )),
                other => other,
            })?;
        self.feed.on_step(step)?;
        self.step = step;
        self.loss_sum += report.loss;
        self.loss_count += 1;
        Ok(report)
    }

    /// Validates, logs, and saves if the objective improved.
    fn checkpoint(&mut self) -> Result<()> {
        let model = self.learner.model().clone();
        let valid = evaluate_model(self.exp, &self.data.valid, Split::Valid, &model)?;
        let test = match (&self.data.test, self.exp.run.test_while_train) {
            (Some(test), true) => Some(evaluate_model(self.exp, test, Split::Test, &model)?.aggregate),
            _ => None,
        };
        let loss = if self.loss_count > 0 { self.loss_sum / self.loss_count as f64 } else { 0.0 };
        self.loss_sum = 0.0;
        self.loss_count = 0;
        let objective = valid.aggregate[self.exp.objective_index()?];
        self.log.rows.push(LogRow {
            step: self.step,
            loss,
            valid: valid.aggregate,
            test,
        });
        let (metric, _) = self.exp.settings.objective()?;
        let improved = match self.best {
            None => true,
            Some(b) if metric.higher_is_better() => objective > b,
            Some(b) => objective < b,
        };
        if self.step >= self.exp.run.start_saving_iteration && improved {
            self.best = Some(objective);
            let record = self.record();
            if let Some(dir) = &self.exp.run.model_dir {
                record.save(&dir.join(CHECKPOINT_FILE))?;
            }
            self.best_record = Some(record);
            self.checkpoints_saved += 1;
        }
        Ok(())
    }

    /// Trains until `max_train_iteration` steps have been taken.
    pub fn run(mut self) -> Result<TrainingOutcome> {
        let total = self.exp.run.max_train_iteration;
        let every = self.exp.run.steps_per_checkpoint;
        if let Some(dir) = &self.exp.run.model_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        while self.step < total {
            self.step_once()?;
            if self.step.is_multiple_of(every) || self.step == total {
                self.checkpoint()?;
            }
        }
        let final_record = self.record();
        if let Some(dir) = &self.exp.run.model_dir {
            final_record.save(&dir.join(LATEST_FILE))?;
        }
        let test = match (&self.data.test, self.exp.run.test_while_train) {
            (Some(test), true) => {
                let best = self.best_record.as_ref().unwrap_or(&final_record);
                Some(run_test(self.exp, test, best)?)
            }
            _ => None,
        };
        Ok(TrainingOutcome {
            final_record,
            best: self.best_record,
            log: self.log,
            checkpoints_saved: self.checkpoints_saved,
            test,
        })
    }
}

fn write_output(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

/// Trains and writes the metric log to `output_dir` when one is set.
pub fn run_training(exp: &Experiment, data: &Datasets) -> Result<TrainingOutcome> {
    let outcome = Trainer::new(exp, data)?.run()?;
    if let Some(dir) = &exp.run.output_dir {
        write_output(dir, TRAIN_LOG_FILE, &outcome.log.to_tsv())?;
    }
    Ok(outcome)
}

/// Evaluates a checkpoint on the test split and writes per-query and
/// aggregate files to `output_dir` when one is set.
pub fn run_test(exp: &Experiment, test: &Corpus, record: &CheckpointRecord) -> Result<Evaluation> {
    let eval = evaluate_model(exp, test, Split::Test, record.model())?;
    if let Some(dir) = &exp.run.output_dir {
        write_output(dir, TEST_PER_QUERY_FILE, &eval.per_query_tsv())?;
        write_output(dir, TEST_AGGREGATE_FILE, &eval.aggregate_tsv())?;
    }
    Ok(eval)
}

/// Loads the best checkpoint saved in `model_dir`.
pub fn load_checkpoint(run: &RunConfig) -> Result<CheckpointRecord> {
    let dir = run
        .model_dir
        .as_ref()
        .ok_or_else(|| Error::Config("model_dir is required to load a checkpoint".into()))?;
    let path = dir.join(CHECKPOINT_FILE);
    if !path.exists() {
        return Err(Error::Config(format!("no checkpoint at {}", path.display())));
    }
    CheckpointRecord::load(&path)
}
