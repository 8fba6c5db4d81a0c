use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use ultr::clicksim::{load_spec_file, save_spec, ClickModelKind, ClickModelSpec};
use ultr::dataset::synthetic::SyntheticSpec;
use ultr::dataset::{load_split, to_letor, Split};
use ultr::pipeline::{load_checkpoint, run_test, run_training, Datasets, Evaluation, Experiment, ExperimentSettings, RunConfig};
use ultr::propensity::estimate_randomized;
use ultr::rng::{stream, Stream};
use ultr::{Error, Result};

#[derive(Parser)]
#[command(name = "ultr", version, about = "Unbiased learning to rank with simulated clicks")]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a click model JSON named <model>_<neg>_<pos>_<g_max>_<eta>.json.
    MakeClickModel {
        /// pbm, cascade or ubm.
        model_name: ClickModelKind,
        neg_click_prob: f64,
        pos_click_prob: f64,
        max_relevance_grade: u32,
        eta: f64,
        #[arg(default_value = ".")]
        out_dir: PathBuf,
    },
    /// Estimate examination propensities from clicks on shuffled lists.
    EstimatePropensity {
        #[arg(long = "click_model_json")]
        click_model_json: PathBuf,
        #[arg(long = "data_dir")]
        data_dir: PathBuf,
        #[arg(long = "train_data_prefix", default_value = "train")]
        train_data_prefix: String,
        #[arg(long = "output_path")]
        output_path: PathBuf,
        #[arg(long = "selection_bias_cutoff", default_value_t = 10)]
        selection_bias_cutoff: usize,
        #[arg(long, default_value_t = 1_000_000)]
        sessions: usize,
    },
    /// Write train/valid/test LETOR files for a synthetic linear-truth corpus.
    GenerateSynthetic {
        #[arg(long = "out_dir")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 500)]
        queries: usize,
        #[arg(long = "docs_per_query", default_value_t = 20)]
        docs_per_query: usize,
        #[arg(long = "feature_size", default_value_t = 10)]
        feature_size: usize,
        #[arg(long = "logging_bias", default_value_t = 1.0)]
        logging_bias: f64,
    },
    /// Train a ranking model (or only test it with --test_only true).
    Train(RunArgs),
    /// Evaluate the best checkpoint in model_dir on the test split.
    Test(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long = "data_dir")]
    data_dir: PathBuf,
    #[arg(long = "setting_file")]
    setting_file: PathBuf,
    #[arg(long = "train_data_prefix", default_value = "train")]
    train_data_prefix: String,
    #[arg(long = "valid_data_prefix", default_value = "valid")]
    valid_data_prefix: String,
    #[arg(long = "test_data_prefix", default_value = "test")]
    test_data_prefix: String,
    #[arg(long = "model_dir", default_value = "model")]
    model_dir: PathBuf,
    #[arg(long = "output_dir", default_value = "output")]
    output_dir: PathBuf,
    #[arg(long = "batch_size", default_value_t = 256)]
    batch_size: usize,
    #[arg(long = "max_list_cutoff", default_value_t = 0)]
    max_list_cutoff: usize,
    #[arg(long = "selection_bias_cutoff", default_value_t = 10)]
    selection_bias_cutoff: usize,
    #[arg(long = "max_train_iteration", default_value_t = 10_000)]
    max_train_iteration: usize,
    #[arg(long = "start_saving_iteration", default_value_t = 0)]
    start_saving_iteration: usize,
    #[arg(long = "steps_per_checkpoint", default_value_t = 50)]
    steps_per_checkpoint: usize,
    #[arg(long = "test_while_train", action = ArgAction::Set, default_value_t = false)]
    test_while_train: bool,
    #[arg(long = "test_only", action = ArgAction::Set, default_value_t = false)]
    test_only: bool,
}

impl RunArgs {
    fn experiment(&self, seed: u64) -> Result<Experiment> {
        let settings = ExperimentSettings::load(&self.setting_file)?;
        let run = RunConfig {
            data_dir: self.data_dir.clone(),
            train_data_prefix: self.train_data_prefix.clone(),
            valid_data_prefix: self.valid_data_prefix.clone(),
            test_data_prefix: self.test_data_prefix.clone(),
            model_dir: Some(self.model_dir.clone()),
            output_dir: Some(self.output_dir.clone()),
            batch_size: self.batch_size,
            max_list_cutoff: self.max_list_cutoff,
            selection_bias_cutoff: self.selection_bias_cutoff,
            max_train_iteration: self.max_train_iteration,
            start_saving_iteration: self.start_saving_iteration,
            steps_per_checkpoint: self.steps_per_checkpoint,
            test_while_train: self.test_while_train,
            test_only: self.test_only,
            seed,
        };
        let base = self.setting_file.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(Experiment::new(settings, run)?.with_base_dir(base))
    }
}

fn print_evaluation(label: &str, eval: &Evaluation) {
    for (c, v) in eval.columns.iter().zip(&eval.aggregate) {
        println!("{label} {c}\t{v:.6}");
    }
}

fn test_only(exp: &Experiment) -> Result<()> {
    let record = load_checkpoint(&exp.run)?;
    let test = Datasets::load_test(&exp.run)?;
    let eval = run_test(exp, &test, &record)?;
    print_evaluation("test", &eval);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeClickModel {
            model_name,
            neg_click_prob,
            pos_click_prob,
            max_relevance_grade,
            eta,
            out_dir,
        } => {
            let spec = ClickModelSpec::new(model_name, neg_click_prob, pos_click_prob, max_relevance_grade, eta)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let path = out_dir.join(spec.file_name());
            std::fs::write(&path, save_spec(&spec)).map_err(|e| Error::io(&path, e))?;
            println!("{}", path.display());
        }
        Command::EstimatePropensity {
            click_model_json,
            data_dir,
            train_data_prefix,
            output_path,
            selection_bias_cutoff,
            sessions,
        } => {
            let spec = load_spec_file(&click_model_json)?;
            let corpus = load_split(&data_dir, &train_data_prefix, Split::Train)?;
            let mut rng = stream(cli.seed, Stream::Propensity);
            let table = estimate_randomized(&corpus, &spec, sessions, selection_bias_cutoff, &mut rng)?;
            table.save(&output_path)?;
            println!("{}", output_path.display());
        }
        Command::GenerateSynthetic {
            out_dir,
            queries,
            docs_per_query,
            feature_size,
            logging_bias,
        } => {
            let spec = SyntheticSpec::new(feature_size, docs_per_query, logging_bias, cli.seed);
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            for (i, (name, split, n)) in [
                ("train", Split::Train, queries),
                ("valid", Split::Valid, queries.div_ceil(5)),
                ("test", Split::Test, queries.div_ceil(5)),
            ]
            .into_iter()
            .enumerate()
            {
                let corpus = spec.generate(n, split, cli.seed.wrapping_add(1 + i as u64))?;
                let path = out_dir.join(format!("{name}.txt"));
                std::fs::write(&path, to_letor(&corpus)).map_err(|e| Error::io(&path, e))?;
            }
            println!("{}", out_dir.display());
        }
        Command::Train(args) => {
            let exp = args.experiment(cli.seed)?;
            if exp.run.test_only {
                return test_only(&exp);
            }
            let data = Datasets::load(&exp.run)?;
            let outcome = run_training(&exp, &data)?;
            println!(
                "trained {} steps, {} checkpoint(s) saved",
                outcome.final_record.step, outcome.checkpoints_saved
            );
            if let Some(row) = outcome.log.rows.last() {
                for (c, v) in outcome.log.columns.iter().zip(&row.valid) {
                    println!("valid {c}\t{v:.6}");
                }
            }
            if let Some(eval) = &outcome.test {
                print_evaluation("test", eval);
            }
        }
        Command::Test(args) => test_only(&args.experiment(cli.seed)?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
