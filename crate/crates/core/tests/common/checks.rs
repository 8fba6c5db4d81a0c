//! One function per acceptance criterion. Each returns `Ok(detail)` when
//! the criterion holds and `Err(detail)` otherwise.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use super::gradcheck::max_rel_error;
use super::{oracle, pbm, run_config, settings, synthetic_data, train_and_test, RunResult};
use ultr::bandit::{pdgd_rho, plackett_luce_prob};
use ultr::counterfactual::{rem_full_batch_em, ClickedList, REM_INITIAL_EXAM};
use ultr::dataset::synthetic::SyntheticSpec;
use ultr::dataset::{parse_letor, Split};
use ultr::feeds::InputFeed;
use ultr::losses::{pairwise_cross_entropy_loss, pairwise_loss, sigmoid_loss, softmax_loss, LossGrad, WeightedLabels};
use ultr::metrics::{evaluate, MetricKind, RankedResult};
use ultr::pipeline::{run_training, Datasets, Experiment, ExperimentSettings, RunConfig, TRAIN_LOG_FILE};
use ultr::propensity::{estimate_randomized, oracle_from_click_model};
use ultr::rng::{seeded, stream, Rng, Stream};
use ultr::scorers::{
    forward_batch, forward_with_grad_batch, init, Activation, Norm, RankingModel, ScorerParams, ScorerSpec,
};

pub type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn normal(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_ranked_list(rng: &mut Rng) -> (RankedResult, usize) {
    let n = rng.random_range(1..=6);
    let g_max = rng.random_range(1..=4u32);
    // Coarse scores so ties occur.
    let scores = (0..n).map(|_| rng.random_range(0..4) as f64 * 0.5).collect();
    let grades = (0..n).map(|_| rng.random_range(0..=g_max) as f64).collect();
    let mask = (0..n).map(|_| rng.random::<f64>() < 0.85).collect();
    let k = rng.random_range(1..=7);
    (RankedResult::with_mask(scores, grades, mask, g_max).unwrap(), k)
}

pub fn metric_oracle() -> Outcome {
    let mut rng = seeded(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (r, k) = random_ranked_list(&mut rng);
        for m in MetricKind::ALL {
            let got = evaluate(&r, m, k).map_err(|e| e.to_string())?;
            let want = oracle::metric(m.name(), &r.scores, &r.grades, &r.mask, r.g_max, k);
            let diff = (got - want).abs();
            if diff.is_nan() || diff > 1e-12 {
                return Err(format!("{m}@{k} on {r:?}: {got} vs {want}"));
            }
            worst = worst.max(diff);
        }
    }
    Ok(format!("1000 lists x 8 metrics, max |diff| {worst:.1e}"))
}

fn scorer_specs() -> Vec<ScorerSpec> {
    let mut specs = vec![ScorerSpec::linear(Norm::None), ScorerSpec::linear(Norm::Layer), ScorerSpec::linear(Norm::Batch)];
    for act in [Activation::Elu, Activation::Relu, Activation::Sigmoid, Activation::Tanh] {
        for norm in [Norm::None, Norm::Layer, Norm::Batch] {
            specs.push(ScorerSpec::dnn(vec![5, 3], act, norm));
        }
    }
    specs
}

/// Checks `d(sum_lk u_lk * score_lk) / d theta` on a two-list batch.
fn scorer_error(spec: &ScorerSpec, rng: &mut Rng) -> f64 {
    let features = 4;
    let lists: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|_| (0..rng.random_range(2..5)).map(|_| normal(rng, features)).collect())
        .collect();
    let views: Vec<&[Vec<f64>]> = lists.iter().map(|l| l.as_slice()).collect();
    let upstream: Vec<Vec<f64>> = lists.iter().map(|l| normal(rng, l.len())).collect();
    // Jitter keeps ReLU pre-activations off the kink at zero-bias init.
    let start = init(spec, features, rng).unwrap();
    let jittered = start.values().iter().map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let params = ScorerParams::from_values(jittered, start.layer_sizes().to_vec()).unwrap();
    let mut analytic = vec![0.0; params.len()];
    for (sg, u) in forward_with_grad_batch(&params, spec, &views).unwrap().iter().zip(&upstream) {
        sg.pullback_into(u, &mut analytic);
    }
    let sizes = params.layer_sizes().to_vec();
    max_rel_error(params.values(), &analytic, 1e-5, 1e-4, |theta| {
        let p = ScorerParams::from_values(theta.to_vec(), sizes.clone()).unwrap();
        forward_batch(&p, spec, &views)
            .unwrap()
            .iter()
            .zip(&upstream)
            .map(|(s, u)| s.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    })
}

fn random_labels(rng: &mut Rng, n: usize, binary: bool) -> WeightedLabels {
    let labels = (0..n)
        .map(|_| if binary { rng.random_range(0..2) as f64 } else { rng.random_range(0..3) as f64 })
        .collect();
    let weights = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
    let mask = (0..n).map(|i| i == 0 || rng.random::<f64>() < 0.8).collect();
    WeightedLabels::new(labels, weights, mask).unwrap()
}

fn loss_errors(rng: &mut Rng) -> Vec<(&'static str, f64)> {
    type Loss = fn(&[f64], &WeightedLabels) -> LossGrad;
    let losses: [(&str, Loss); 3] = [("softmax", softmax_loss), ("sigmoid", sigmoid_loss), ("pairwise", pairwise_loss)];
    let mut out = Vec::new();
    for (name, loss) in losses {
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let n = rng.random_range(2..8);
            let scores = normal(rng, n);
            let wl = random_labels(rng, n, name == "sigmoid");
            let analytic = loss(&scores, &wl).grad;
            worst = worst.max(max_rel_error(&scores, &analytic, 1e-6, 1e-6, |s| loss(s, &wl).loss));
        }
        out.push((name, worst));
    }
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..6);
        let pos = normal(rng, n);
        let neg = normal(rng, n);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let g = pairwise_cross_entropy_loss(&pos, &neg, &w).unwrap();
        let f = |p: &[f64], q: &[f64]| pairwise_cross_entropy_loss(p, q, &w).unwrap().loss;
        worst = worst.max(max_rel_error(&pos, &g.pos_grad, 1e-6, 1e-6, |p| f(p, &neg)));
        worst = worst.max(max_rel_error(&neg, &g.neg_grad, 1e-6, 1e-6, |q| f(&pos, q)));
    }
    out.push(("pairwise_cross_entropy", worst));
    out
}

pub fn gradient_suite() -> Outcome {
    let mut rng = seeded(21);
    let mut scorer_worst: f64 = 0.0;
    for spec in scorer_specs() {
        for _ in 0..50 {
            let err = scorer_error(&spec, &mut rng);
            if !(err < 1e-4) {
                return Err(format!("{spec:?}: relative error {err:.2e}"));
            }
            scorer_worst = scorer_worst.max(err);
        }
    }
    let losses = loss_errors(&mut rng);
    let loss_worst = losses.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let failing: Vec<String> = losses.iter().filter(|(_, e)| !(*e < 1e-5)).map(|(n, e)| format!("{n} {e:.2e}")).collect();
    ensure(
        failing.is_empty(),
        format!(
            "{} scorer configs max rel err {scorer_worst:.1e}; 4 losses max rel err {loss_worst:.1e} {}",
            scorer_specs().len(),
            failing.join(", ")
        ),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..=p.len() {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out
}

/// Empirical permutation frequencies of the stochastic online feed on one
/// three-document query whose linear scores equal its single feature.
pub fn sampler_max_deviation(feature_values: [f64; 3], draws: usize, seed: u64) -> f64 {
    let text: String = feature_values.iter().map(|v| format!("0 qid:1 1:{v}\n")).collect();
    let corpus = parse_letor(&text).unwrap();
    let model = RankingModel {
        spec: ScorerSpec::linear(Norm::None),
        params: ScorerParams::from_values(vec![1.0, 0.0], vec![1, 1]).unwrap(),
    };
    let feed = InputFeed::stochastic_online(pbm(1.0), 3);
    let mut rng = seeded(seed);
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for _ in 0..draws {
        let list = feed.build_list(&corpus, 0, Some(&model), &mut rng).unwrap();
        *counts.entry(list.doc_ids.clone()).or_default() += 1;
    }
    let base = corpus.session(0).doc_ids.clone();
    permutations(3)
        .into_iter()
        .map(|perm| {
            let ids: Vec<usize> = perm.iter().map(|&i| base[i]).collect();
            let freq = counts.get(&ids).copied().unwrap_or(0) as f64 / draws as f64;
            (freq - plackett_luce_prob(&feature_values, &perm)).abs()
        })
        .fold(0.0, f64::max)
}

pub fn plackett_luce_consistency() -> Outcome {
    let mut rng = seeded(31);
    let mut worst_sum: f64 = 0.0;
    for n in 1..=5 {
        let perms = permutations(n);
        for _ in 0..20 {
            let scores: Vec<f64> = normal(&mut rng, n).iter().map(|s| 3.0 * s).collect();
            let total: f64 = perms.iter().map(|p| plackett_luce_prob(&scores, p)).sum();
            worst_sum = worst_sum.max((total - 1.0).abs());
        }
    }
    let unequal = sampler_max_deviation([0.5, -1.0, 1.2], 100_000, 32);
    let equal = sampler_max_deviation([0.3, 0.3, 0.3], 100_000, 33);
    ensure(
        worst_sum <= 1e-9 && unequal <= 0.01 && equal <= 0.01,
        format!("max |sum-1| {worst_sum:.1e}; sampler max |freq-p| {unequal:.4} (unequal), {equal:.4} (equal)"),
    )
}

pub fn rho_identity() -> Outcome {
    let mut rng = seeded(41);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.random_range(2..9);
        let scores: Vec<f64> = normal(&mut rng, n).iter().map(|s| 2.0 * s).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let a = rng.random_range(0..n);
        let b = (a + rng.random_range(1..n)) % n;
        let rho = pdgd_rho(&scores, &perm, a, b);
        let mut swapped = perm.clone();
        swapped.swap(a, b);
        let mate = pdgd_rho(&scores, &swapped, b, a);
        if !(rho > 0.0 && rho < 1.0) {
            return Err(format!("rho {rho} outside (0,1)"));
        }
        worst = worst.max((rho + mate - 1.0).abs());
    }
    ensure(worst <= 1e-9, format!("10000 instances, max |rho + rho' - 1| {worst:.1e}"))
}

pub fn randomized_propensity() -> Outcome {
    let spec = SyntheticSpec::new(super::FEATURES, super::DOCS, 1.0, 51);
    let corpus = spec.generate(super::TRAIN_QUERIES, Split::Train, 52).unwrap();
    let click_model = pbm(1.0);
    let estimated = estimate_randomized(&corpus, &click_model, 1_000_000, 10, &mut stream(53, Stream::Propensity))
        .map_err(|e| e.to_string())?;
    let oracle = oracle_from_click_model(&click_model, 10).unwrap();
    let errors: Vec<f64> = estimated
        .exam_probs()
        .iter()
        .zip(oracle.exam_probs())
        .map(|(e, o)| (e - o).abs() / o)
        .collect();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    ensure(worst <= 0.05, format!("max relative error {worst:.4} over 10 ranks"))
}

/// Logged top-10 lists of a small corpus with `sessions` click draws each.
pub fn clicked_lists(corpus: &ultr::dataset::Corpus, sessions: usize, rng: &mut Rng) -> Vec<ClickedList> {
    let feed = InputFeed::click_simulation(pbm(1.0), 10);
    let mut data = Vec::new();
    for q in 0..corpus.num_sessions() {
        for _ in 0..sessions {
            let list = feed.build_list(corpus, q, None, rng).unwrap();
            let clicks = list.labels.iter().map(|&c| c > 0.0).collect();
            data.push((list.shown_features().to_vec(), clicks));
        }
    }
    data
}

pub fn rem_monotonicity() -> Outcome {
    let mut min_gain = f64::INFINITY;
    for seed in 0..5u64 {
        let spec = SyntheticSpec::new(super::FEATURES, super::DOCS, 1.0, seed);
        let corpus = spec.generate(20, Split::Train, seed + 100).unwrap();
        let mut rng = seeded(seed + 200);
        let data = clicked_lists(&corpus, 5, &mut rng);
        let mut model = RankingModel::init(ScorerSpec::linear(Norm::None), super::FEATURES, &mut rng).unwrap();
        let mut gamma = vec![REM_INITIAL_EXAM; 10];
        let history = rem_full_batch_em(&mut model, &mut gamma, &data, 50, 0.5).map_err(|e| e.to_string())?;
        for (i, w) in history.windows(2).enumerate() {
            let gain = w[1] - w[0];
            if !(gain >= -1e-9 * w[0].abs().max(1.0)) {
                return Err(format!("seed {seed}: log-likelihood fell at iteration {i}: {} -> {}", w[0], w[1]));
            }
            min_gain = min_gain.min(gain);
        }
    }
    Ok(format!("5 seeds x 50 iterations, smallest step {min_gain:.2e}"))
}

/// Learner configurations used by the synthetic experiments.
pub fn synthetic_setup(algorithm: &str) -> (&'static str, usize, Value) {
    match algorithm {
        "PDGD" => ("StochasticOnlineSimulationFeed", 1, json!({"learning_rate": 0.5})),
        "DBGD" | "MGD" | "NSGD" => ("StochasticOnlineSimulationFeed", 1, json!({})),
        "IPW" => ("ClickSimulationFeed", 256, json!({"learning_rate": 0.05, "l2_loss": 0.3, "propensity_estimator_type": "oracle"})),
        "DLA" => ("ClickSimulationFeed", 256, json!({"learning_rate": 0.05, "l2_loss": 0.3, "propensity_learning_rate": 0.1})),
        _ => ("ClickSimulationFeed", 256, json!({"learning_rate": 0.05, "l2_loss": 0.3})),
    }
}

pub fn run_synthetic(algorithm: &str, data: &Datasets, iterations: usize, seed: u64) -> RunResult {
    let (feed, batch, hparams) = synthetic_setup(algorithm);
    train_and_test(settings(algorithm, feed, &pbm(1.0), hparams), run_config(iterations, batch, seed), data)
}

pub fn synthetic_results(algorithms: &[&str]) -> Vec<(String, RunResult)> {
    let (_, data) = synthetic_data(1.0, 0);
    algorithms.iter().map(|a| (a.to_string(), run_synthetic(a, &data, 10_000, 0))).collect()
}

fn final_of<'a>(results: &'a [(String, RunResult)], name: &str) -> &'a RunResult {
    &results.iter().find(|(n, _)| n == name).unwrap().1
}

pub fn synthetic_bias(results: &[(String, RunResult)]) -> Outcome {
    let naive = final_of(results, "naive").final_ndcg;
    let gap = |n: &str| final_of(results, n).final_ndcg - naive;
    let (ipw, dla, pdgd) = (gap("IPW"), gap("DLA"), gap("PDGD"));
    ensure(
        ipw >= 0.05 && dla >= 0.03 && pdgd >= 0.03,
        format!("naive {naive:.4}; IPW {ipw:+.4} (need +0.05), DLA {dla:+.4}, PDGD {pdgd:+.4} (need +0.03)"),
    )
}

pub fn bandit_convergence(results: &[(String, RunResult)]) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["DBGD", "MGD", "NSGD"] {
        let r = final_of(results, name);
        let gain = r.final_ndcg - r.initial_ndcg;
        ok &= gain >= 0.1;
        parts.push(format!("{name} {:.4}->{:.4}", r.initial_ndcg, r.final_ndcg));
    }
    let dbgd = final_of(results, "DBGD").final_ndcg;
    ok &= final_of(results, "MGD").final_ndcg >= dbgd - 0.02;
    ok &= final_of(results, "NSGD").final_ndcg >= dbgd - 0.02;
    ensure(ok, parts.join(", "))
}

fn logged_run(settings: &ExperimentSettings, run: &RunConfig, data: &Datasets, dir: &Path) -> Vec<u8> {
    let run = RunConfig {
        output_dir: Some(dir.to_path_buf()),
        ..run.clone()
    };
    let exp = Experiment::new(settings.clone(), run).unwrap();
    run_training(&exp, data).unwrap();
    std::fs::read(dir.join(TRAIN_LOG_FILE)).unwrap()
}

pub fn determinism() -> Outcome {
    let (_, data) = synthetic_data(1.0, 7);
    let mut checked = Vec::new();
    for algorithm in ["IPW", "DLA", "PDGD", "NSGD"] {
        let (feed, batch, hparams) = synthetic_setup(algorithm);
        let s = settings(algorithm, feed, &pbm(1.0), hparams);
        let mut run = run_config(200, batch.min(32), 7);
        run.steps_per_checkpoint = 50;
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let first = logged_run(&s, &run, &data, a.path());
        let second = logged_run(&s, &run, &data, b.path());
        if first != second {
            return Err(format!("{algorithm}: metric logs differ"));
        }
        checked.push(format!("{algorithm} ({} bytes)", first.len()));
    }
    Ok(format!("identical logs: {}", checked.join(", ")))
}

/// Offline ordering on a user-supplied LETOR dataset: DLA >= IPW >= PD >= REM.
/// `None` when no dataset is configured.
pub fn letor_ordering() -> Option<Outcome> {
    let dir = std::env::var("ULTR_LETOR_DATA_DIR").ok()?;
    let steps = super::env_usize("ULTR_LETOR_STEPS", 10_000);
    let run = RunConfig {
        data_dir: dir.into(),
        batch_size: 256,
        selection_bias_cutoff: 10,
        max_train_iteration: steps,
        steps_per_checkpoint: 500,
        ..RunConfig::default()
    };
    let data = match Datasets::load(&run) {
        Ok(d) => d,
        Err(e) => return Some(Err(format!("loading dataset: {e}"))),
    };
    let mut scores = Vec::new();
    for algorithm in ["DLA", "IPW", "PD", "REM"] {
        let json = json!({
            "train_input_feed": "ClickSimulationFeed",
            "train_input_hparams": {"click_model": pbm(1.0)},
            "ranking_model": "DNN",
            "ranking_model_hparams": {"hidden_layer_sizes": [512, 256, 128], "activation_func": "elu", "norm": "layer"},
            "learning_algorithm": algorithm,
            "learning_algorithm_hparams": {"learning_rate": 0.05, "max_gradient_norm": 5.0, "grad_strategy": "ada_grad"},
            "metrics": ["ndcg"],
            "metrics_topn": [10],
            "objective_metric": "ndcg_10"
        });
        let s = ExperimentSettings::from_json(&json.to_string()).unwrap();
        scores.push((algorithm, train_and_test(s, run.clone(), &data).final_ndcg));
    }
    let ordered = scores.windows(2).all(|w| w[0].1 >= w[1].1);
    let detail = scores.iter().map(|(a, s)| format!("{a} {s:.4}")).collect::<Vec<_>>().join(" >= ");
    Some(ensure(ordered, detail))
}
