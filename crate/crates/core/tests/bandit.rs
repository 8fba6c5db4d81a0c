mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;

use common::pbm;
use ultr::bandit::{credit_clicks, team_draft_interleave, Dueling, NullSpaceHistory, OnlineEnv};
use ultr::dataset::synthetic::SyntheticSpec;
use ultr::dataset::Split;
use ultr::feeds::InputFeed;
use ultr::rng::seeded;
use ultr::scorers::{l2_norm, sample_unit_direction, Norm, RankingModel, ScorerSpec};

fn rankings(n_teams: usize, n_docs: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = seeded(seed);
    (0..n_teams)
        .map(|_| {
            let mut r: Vec<usize> = (0..n_docs).collect();
            r.shuffle(&mut rng);
            r
        })
        .collect()
}

fn team_counts(teams: &[usize], n_teams: usize) -> Vec<usize> {
    let mut counts = vec![0; n_teams];
    for &t in teams {
        counts[t] += 1;
    }
    counts
}

proptest! {
    #[test]
    fn interleaving_places_every_document_once(n_teams in 2usize..6, n_docs in 0usize..16, seed in any::<u64>(), keep in 0usize..20) {
        let lists = rankings(n_teams, n_docs, seed);
        let mut il = team_draft_interleave(&lists, &mut seeded(seed ^ 1));
        let unique: BTreeSet<usize> = il.docs.iter().copied().collect();
        prop_assert_eq!(unique.len(), il.docs.len());
        prop_assert_eq!(il.docs.len(), n_docs);
        prop_assert_eq!(il.teams.len(), n_docs);
        il.truncate(keep);
        let counts = team_counts(&il.teams, n_teams);
        let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
        prop_assert!(spread <= 1, "team counts {:?}", counts);
    }

    #[test]
    fn credits_partition_the_clicks(n_docs in 1usize..12, seed in any::<u64>(), mask in proptest::collection::vec(any::<bool>(), 12)) {
        let lists = rankings(3, n_docs, seed);
        let il = team_draft_interleave(&lists, &mut seeded(seed));
        let clicks = &mask[..n_docs];
        let credit = credit_clicks(&il, clicks, 3);
        prop_assert_eq!(credit.iter().sum::<usize>(), clicks.iter().filter(|&&c| c).count());
    }

    #[test]
    fn null_space_samples_are_orthogonal_unit_vectors(dim in 3usize..30, stored in 0usize..6, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let mut hist = NullSpaceHistory::new(4);
        for _ in 0..stored.min(dim - 1) {
            hist.push(sample_unit_direction(dim, &mut rng)).unwrap();
        }
        prop_assert!(hist.len() <= 4);
        let d = hist.sample(dim, &mut rng).unwrap();
        prop_assert!((l2_norm(&d) - 1.0).abs() < 1e-9);
        for e in hist.entries() {
            let dot: f64 = e.iter().zip(&d).map(|(a, b)| a * b).sum();
            prop_assert!(dot.abs() < 1e-9, "dot {}", dot);
        }
    }
}

#[test]
fn swapped_pair_interleaves_both_ways_evenly() {
    let lists = vec![vec![1, 2], vec![2, 1]];
    let mut rng = seeded(9);
    let n = 20_000;
    let first = (0..n).filter(|_| team_draft_interleave(&lists, &mut rng).docs == [1, 2]).count();
    let p = first as f64 / n as f64;
    let se = (0.25 / n as f64).sqrt();
    assert!((p - 0.5).abs() < 3.0 * se, "{p}");
}

#[test]
fn unit_basis_vector_is_projected_away() {
    let mut hist = NullSpaceHistory::new(10);
    let mut e1 = vec![0.0; 8];
    e1[0] = 1.0;
    hist.push(e1).unwrap();
    let mut rng = seeded(3);
    for _ in 0..100 {
        assert!(hist.sample(8, &mut rng).unwrap()[0].abs() < 1e-9);
    }
}

fn model(seed: u64) -> RankingModel {
    RankingModel::init(ScorerSpec::linear(Norm::None), 10, &mut seeded(seed)).unwrap()
}

#[test]
fn empty_history_samples_like_mgd() {
    let mgd = Dueling::mgd(model(1), 1.0, 0.01, 4, true).unwrap();
    let nsgd = Dueling::nsgd(model(1), 1.0, 0.01, 4, true, 10).unwrap();
    let a = mgd.sample_candidates(&mut seeded(5)).unwrap();
    let b = nsgd.sample_candidates(&mut seeded(5)).unwrap();
    for (x, y) in a.iter().zip(&b) {
        for (u, v) in x.direction.iter().zip(&y.direction) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

/// Every accepted update moves the incumbent by exactly the step size, so
/// the aggregated winning direction has unit norm.
#[test]
fn updates_move_by_the_step_size() {
    let corpus = SyntheticSpec::new(10, 20, 1.0, 2).generate(50, Split::Train, 3).unwrap();
    let cm = pbm(1.0);
    let feed = InputFeed::stochastic_online(cm.clone(), 10);
    let env = OnlineEnv { click_model: &cm, cutoff: 10 };
    let mut rng = seeded(4);
    for mut learner in [
        Dueling::dbgd(model(2), 1.0, 0.05, true),
        Dueling::mgd(model(2), 1.0, 0.05, 4, true).unwrap(),
        Dueling::nsgd(model(2), 1.0, 0.05, 4, false, 5).unwrap(),
    ] {
        let mut moves = 0;
        for q in 0..200 {
            let list = feed.build_list(&corpus, q % 50, Some(&learner.model), &mut rng).unwrap();
            let before = learner.model.params.values().to_vec();
            let (_, moved) = learner.interact(&list, env, &mut rng).unwrap();
            let diff: Vec<f64> = learner.model.params.values().iter().zip(&before).map(|(a, b)| a - b).collect();
            if moved {
                moves += 1;
                assert!((l2_norm(&diff) - 0.05).abs() < 1e-9);
            } else {
                assert!(diff.iter().all(|&d| d == 0.0));
            }
        }
        assert!(moves > 0);
        if let Some(h) = &learner.history {
            assert!(h.len() <= 5);
        }
    }
}
