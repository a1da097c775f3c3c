mod common;

use std::collections::{BTreeMap, HashSet};

use common::{conversation, participant};
use prefagg_core::corpus::{
    census_rebalance, filter_balanced, load_corpus, type_counts, write_corpus, BalanceMode, CensusCell,
    ConversationType, Corpus,
};
use prefagg_core::scoring::{
    average_ranks_desc, extract_battles, normalize_scores, Outcome, ScoreMode, TurnScope,
};
use prefagg_core::synthetic::{synthetic_corpus, SyntheticSpec};
use proptest::prelude::*;

fn small(seed: u64) -> Corpus {
    synthetic_corpus(&SyntheticSpec {
        participants: 12,
        conversations_per_participant: 4,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

/// Participants with a random number of conversations of each type.
fn uneven(counts: &[[usize; 3]]) -> Corpus {
    let mut ps = Vec::new();
    let mut cs = Vec::new();
    for (u, per_type) in counts.iter().enumerate() {
        let user = format!("u{u}");
        ps.push(participant(&user, "Female"));
        for (t, &n) in per_type.iter().enumerate() {
            for k in 0..n {
                let cid = format!("c{u}-{t}-{k}");
                cs.push(conversation(&cid, &user, ConversationType::ALL[t], &[("a", 60.0), ("b", 40.0)]));
            }
        }
    }
    Corpus::new(ps, cs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn write_then_load_round_trips(seed in 0u64..1000) {
        let corpus = small(seed);
        let dir = tempfile::tempdir().unwrap();
        let paths = write_corpus(&corpus, dir.path()).unwrap();
        let back = load_corpus(&paths).unwrap();
        prop_assert_eq!(back.participants(), corpus.participants());
        prop_assert_eq!(back.conversations(), corpus.conversations());
        prop_assert_eq!(back.topics(), corpus.topics());
        prop_assert_eq!(back.embeddings().map(|e| e.len()), corpus.embeddings().map(|e| e.len()));
        prop_assert_eq!(paths.content_hash().unwrap(), paths.content_hash().unwrap());
    }

    #[test]
    fn balanced_subset_is_balanced(
        counts in prop::collection::vec(prop::array::uniform3(0usize..4), 1..20),
        seed in any::<u64>(),
    ) {
        let corpus = uneven(&counts);
        let balanced = filter_balanced(&corpus, BalanceMode::Recompute, seed);
        for (user, per_type) in type_counts(&balanced) {
            prop_assert!(per_type[0] == per_type[1] && per_type[1] == per_type[2], "{user}: {per_type:?}");
            prop_assert!(per_type[0] == 1 || per_type[0] == 2);
        }
        let eligible = counts.iter().filter(|c| c.iter().all(|&n| n > 0)).count();
        prop_assert_eq!(balanced.participants().len(), eligible);
        let again = filter_balanced(&corpus, BalanceMode::Recompute, seed);
        prop_assert_eq!(again.conversations(), balanced.conversations());
        // Idempotent: a balanced corpus is its own balanced subset.
        let twice = filter_balanced(&balanced, BalanceMode::Recompute, seed ^ 1);
        prop_assert_eq!(twice.conversations().len(), balanced.conversations().len());
    }

    #[test]
    fn census_rebalance_respects_target(
        sizes in prop::collection::vec(0usize..15, 3),
        weights in prop::collection::vec(0.0f64..1.0, 3),
        target in 1i64..40,
        seed in any::<u64>(),
    ) {
        let genders = ["Male", "Female", "Other"];
        let mut ps = Vec::new();
        let mut cs = Vec::new();
        for (g, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                let user = format!("{g}-{i}");
                ps.push(participant(&user, genders[g]));
                cs.push(conversation(&format!("c{user}"), &user, ConversationType::Unguided, &[("a", 1.0), ("b", 2.0)]));
            }
        }
        let corpus = Corpus::new(ps, cs).unwrap();
        let total: f64 = weights.iter().sum::<f64>().max(1e-9);
        let census: Vec<CensusCell> = genders
            .iter()
            .zip(&weights)
            .map(|(g, w)| CensusCell {
                age: "Prefer not to say".into(),
                gender: g.to_string(),
                ethnicity: "Prefer not to say".into(),
                proportion: w / total,
            })
            .collect();
        let out = census_rebalance(&corpus, &census, target, seed).unwrap();
        prop_assert!(out.participants().len() as i64 <= target);
        let ids: HashSet<&str> = out.participants().iter().map(|p| p.user_id.as_str()).collect();
        prop_assert_eq!(ids.len(), out.participants().len());
        for p in out.participants() {
            prop_assert!(corpus.participant(&p.user_id).is_some());
        }
    }

    #[test]
    fn within_turn_ranks_sum_to_triangular(scores in prop::collection::vec(1.0f64..100.0, 1..8)) {
        let ranks = average_ranks_desc(&scores);
        let k = scores.len() as f64;
        prop_assert!((ranks.iter().sum::<f64>() - k * (k + 1.0) / 2.0).abs() < 1e-9);
        for (i, a) in scores.iter().enumerate() {
            for (j, b) in scores.iter().enumerate() {
                if a > b {
                    prop_assert!(ranks[i] < ranks[j]);
                }
            }
        }
    }

    #[test]
    fn more_tolerance_never_adds_decisions(
        scores in prop::collection::vec(1.0f64..100.0, 2..5),
        t1 in 0.0f64..50.0,
        dt in 0.0f64..50.0,
    ) {
        let models: Vec<String> = (0..scores.len()).map(|i| format!("m{i}")).collect();
        let opener: Vec<(&str, f64)> = models.iter().map(String::as_str).zip(scores.iter().copied()).collect();
        let corpus = Corpus::new(
            vec![participant("u", "Male")],
            vec![conversation("c", "u", ConversationType::Unguided, &opener)],
        )
        .unwrap();
        let ties = |t: f64| {
            extract_battles(&corpus, t, TurnScope::OpenersOnly)
                .unwrap()
                .iter()
                .filter(|b| b.outcome == Outcome::Tie)
                .count()
        };
        prop_assert!(ties(t1) <= ties(t1 + dt));
        let all = extract_battles(&corpus, 99.0, TurnScope::OpenersOnly).unwrap();
        prop_assert!(all.iter().all(|b| b.outcome == Outcome::Tie));
    }
}

#[test]
fn battle_labels_are_symmetric() {
    let forward = Corpus::new(
        vec![participant("u", "Male")],
        vec![conversation("c", "u", ConversationType::Unguided, &[("zeta", 80.0), ("alpha", 30.0)])],
    )
    .unwrap();
    let backward = Corpus::new(
        vec![participant("u", "Male")],
        vec![conversation("c", "u", ConversationType::Unguided, &[("alpha", 30.0), ("zeta", 80.0)])],
    )
    .unwrap();
    let a = extract_battles(&forward, 5.0, TurnScope::OpenersOnly).unwrap();
    let b = extract_battles(&backward, 5.0, TurnScope::OpenersOnly).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].model_a, "alpha");
    assert_eq!(a[0].winner(), Some("zeta"));
}

#[test]
fn z_scores_are_standardized_per_participant() {
    let corpus = small(5);
    let view = normalize_scores(&corpus, ScoreMode::ZAll);
    let mut by_user: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for c in corpus.conversations() {
        for it in &c.turns {
            for r in &it.responses {
                by_user.entry(c.user_id.as_str()).or_default().push(view.scores[&r.utterance_id]);
            }
        }
    }
    for (user, zs) in by_user {
        let n = zs.len() as f64;
        let mean = zs.iter().sum::<f64>() / n;
        let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "{user}");
        assert!((var - 1.0).abs() < 1e-9, "{user}");
    }
    let openers = normalize_scores(&corpus, ScoreMode::ZOpeners);
    let n_openers: usize = corpus.conversations().iter().map(|c| c.turns[0].responses.len()).sum();
    assert_eq!(openers.scores.len(), n_openers);
}
