//! Score views and pairwise battles derived from co-rated responses.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Corpus};
use crate::error::{Error, Result};
use crate::rng::keyed_rng;

/// Default tie threshold in score points.
pub const DEFAULT_TIE_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    WinA,
    WinB,
    Tie,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::WinA => "WIN_A",
            Outcome::WinB => "WIN_B",
            Outcome::Tie => "TIE",
        }
    }

    pub fn flipped(self) -> Outcome {
        match self {
            Outcome::WinA => Outcome::WinB,
            Outcome::WinB => Outcome::WinA,
            Outcome::Tie => Outcome::Tie,
        }
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "WIN_A" | "MODEL_A" | "A" => Ok(Outcome::WinA),
            "WIN_B" | "MODEL_B" | "B" => Ok(Outcome::WinB),
            "TIE" | "TIE (BOTHBAD)" | "TIE (BOTH BAD)" => Ok(Outcome::Tie),
            _ => Err(Error::invalid(format!("unknown battle outcome '{s}'"))),
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One pairwise comparison. `model_a < model_b` lexicographically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Battle {
    pub model_a: String,
    pub model_b: String,
    pub outcome: Outcome,
    pub user_id: String,
    pub conversation_id: String,
    pub turn: usize,
    pub score_a: f64,
    pub score_b: f64,
}

impl Battle {
    /// Builds a canonically ordered battle from two scored responses.
    /// Returns `None` when both responses come from the same model.
    pub fn from_scores(
        first: (&str, f64),
        second: (&str, f64),
        tie_threshold: f64,
        user_id: &str,
        conversation_id: &str,
        turn: usize,
    ) -> Option<Battle> {
        let ((model_a, score_a), (model_b, score_b)) = match first.0.cmp(second.0) {
            std::cmp::Ordering::Less => (first, second),
            std::cmp::Ordering::Greater => (second, first),
            std::cmp::Ordering::Equal => return None,
        };
        Some(Battle {
            model_a: model_a.to_string(),
            model_b: model_b.to_string(),
            outcome: decide(score_a, score_b, tie_threshold),
            user_id: user_id.to_string(),
            conversation_id: conversation_id.to_string(),
            turn,
            score_a,
            score_b,
        })
    }

    /// Winner's model name, if the battle was decisive.
    pub fn winner(&self) -> Option<&str> {
        match self.outcome {
            Outcome::WinA => Some(&self.model_a),
            Outcome::WinB => Some(&self.model_b),
            Outcome::Tie => None,
        }
    }
}

fn decide(score_a: f64, score_b: f64, tie_threshold: f64) -> Outcome {
    if score_a - score_b > tie_threshold {
        Outcome::WinA
    } else if score_b - score_a > tie_threshold {
        Outcome::WinB
    } else {
        Outcome::Tie
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnScope {
    #[default]
    OpenersOnly,
    All,
}

impl FromStr for TurnScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "openers" | "openers_only" => Ok(TurnScope::OpenersOnly),
            "all" => Ok(TurnScope::All),
            _ => Err(Error::invalid(format!("unknown turn scope '{s}'; expected openers or all"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub utterance_id: String,
    pub model: String,
    pub score: f64,
}

/// The scored responses of one interaction, detached from the corpus so that
/// resampled participant multisets can be assembled cheaply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatedInteraction {
    pub user_id: String,
    pub conversation_id: String,
    pub turn: usize,
    pub ratings: Vec<Rating>,
}

/// Scored interactions in corpus order (conversation, then turn).
pub fn rated_interactions(corpus: &Corpus, scope: TurnScope) -> Vec<RatedInteraction> {
    let mut out = Vec::new();
    for c in corpus.conversations() {
        for turn in &c.turns {
            if scope == TurnScope::OpenersOnly && turn.turn_index != 0 {
                continue;
            }
            out.push(RatedInteraction {
                user_id: c.user_id.clone(),
                conversation_id: c.conversation_id.clone(),
                turn: turn.turn_index,
                ratings: turn
                    .responses
                    .iter()
                    .map(|r| Rating {
                        utterance_id: r.utterance_id.clone(),
                        model: r.model_name.clone(),
                        score: r.score,
                    })
                    .collect(),
            });
        }
    }
    out
}

/// All pairwise battles of each interaction, ordered by interaction then by
/// response pair. Same-model pairs carry no comparison and are skipped.
pub fn battles_from_interactions(interactions: &[RatedInteraction], tie_threshold: f64) -> Vec<Battle> {
    let mut out = Vec::new();
    for it in interactions {
        for (i, a) in it.ratings.iter().enumerate() {
            for b in &it.ratings[i + 1..] {
                if let Some(battle) = Battle::from_scores(
                    (&a.model, a.score),
                    (&b.model, b.score),
                    tie_threshold,
                    &it.user_id,
                    &it.conversation_id,
                    it.turn,
                ) {
                    out.push(battle);
                }
            }
        }
    }
    out
}

pub fn extract_battles(corpus: &Corpus, tie_threshold: f64, scope: TurnScope) -> Result<Vec<Battle>> {
    check_threshold(tie_threshold)?;
    Ok(battles_from_interactions(&rated_interactions(corpus, scope), tie_threshold))
}

pub(crate) fn check_threshold(tie_threshold: f64) -> Result<()> {
    if tie_threshold.is_nan() || tie_threshold < 0.0 {
        return Err(Error::invalid(format!(
            "tie threshold must be >= 0, got {tie_threshold}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Raw,
    /// z-score within each participant over their opening-turn ratings.
    ZOpeners,
    /// z-score within each participant over all of their ratings.
    ZAll,
    /// Rank within each interaction, best = 1, ties share the average rank.
    WithinTurnRank,
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ScoreMode::Raw),
            "z_openers" => Ok(ScoreMode::ZOpeners),
            "z_all" => Ok(ScoreMode::ZAll),
            "within_turn_rank" => Ok(ScoreMode::WithinTurnRank),
            _ => Err(Error::invalid(format!(
                "unknown score mode '{s}'; expected raw, z_openers, z_all or within_turn_rank"
            ))),
        }
    }
}

/// Transformed score per utterance. In `ZOpeners` mode only opening-turn
/// utterances are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreView {
    pub mode: ScoreMode,
    pub scores: BTreeMap<String, f64>,
}

pub fn normalize_scores(corpus: &Corpus, mode: ScoreMode) -> ScoreView {
    let interactions = rated_interactions(corpus, TurnScope::All);
    let transformed = transform_scores(&interactions, mode);
    let mut scores = BTreeMap::new();
    for (it, values) in interactions.iter().zip(transformed) {
        for (r, v) in it.ratings.iter().zip(values) {
            if let Some(v) = v {
                scores.insert(r.utterance_id.clone(), v);
            }
        }
    }
    ScoreView { mode, scores }
}

/// Transformed scores parallel to `interactions[i].ratings`; `None` marks
/// ratings outside the normalization window.
pub fn transform_scores(interactions: &[RatedInteraction], mode: ScoreMode) -> Vec<Vec<Option<f64>>> {
    match mode {
        ScoreMode::Raw => interactions
            .iter()
            .map(|it| it.ratings.iter().map(|r| Some(r.score)).collect())
            .collect(),
        ScoreMode::WithinTurnRank => interactions
            .iter()
            .map(|it| {
                let scores: Vec<f64> = it.ratings.iter().map(|r| r.score).collect();
                average_ranks_desc(&scores).into_iter().map(Some).collect()
            })
            .collect(),
        ScoreMode::ZOpeners | ScoreMode::ZAll => {
            let in_window =
                |it: &RatedInteraction| mode == ScoreMode::ZAll || it.turn == 0;
            // Population mean and std per participant over the window.
            let mut acc: HashMap<&str, (f64, f64, usize)> = HashMap::new();
            for it in interactions.iter().filter(|it| in_window(it)) {
                let e = acc.entry(it.user_id.as_str()).or_default();
                for r in &it.ratings {
                    e.0 += r.score;
                    e.2 += 1;
                }
            }
            let means: HashMap<&str, f64> =
                acc.iter().map(|(u, (s, _, n))| (*u, s / *n as f64)).collect();
            for it in interactions.iter().filter(|it| in_window(it)) {
                let mean = means[it.user_id.as_str()];
                let e = acc.get_mut(it.user_id.as_str()).unwrap();
                for r in &it.ratings {
                    e.1 += (r.score - mean).powi(2);
                }
            }
            interactions
                .iter()
                .map(|it| {
                    if !in_window(it) {
                        return vec![None; it.ratings.len()];
                    }
                    let (_, ss, n) = acc[it.user_id.as_str()];
                    let mean = means[it.user_id.as_str()];
                    let sd = (ss / n as f64).sqrt();
                    it.ratings
                        .iter()
                        .map(|r| {
                            // Constant windows carry no scale: everyone sits at 0.
                            if sd <= 1e-12 * mean.abs().max(1.0) {
                                Some(0.0)
                            } else {
                                Some((r.score - mean) / sd)
                            }
                        })
                        .collect()
                })
                .collect()
        }
    }
}

/// Average ranks with the largest value ranked 1.
pub fn average_ranks_desc(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChosenSource {
    /// Explicit `if_chosen` flag on an opening response.
    Flag,
    /// Model that continued the conversation in turn 1.
    Continuation,
    /// Highest opener score, ties broken by seed.
    Argmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenModel {
    pub model: String,
    pub source: ChosenSource,
    pub warning: Option<String>,
}

/// The model locked in after the opening turn. Recorded evidence (flag, then
/// continuation model) takes precedence over recomputing the argmax; a
/// disagreement with the scores is reported in `warning`.
pub fn chosen_model(conversation: &Conversation, seed: u64) -> Option<ChosenModel> {
    let opener = conversation.opener()?;
    if opener.responses.is_empty() {
        return None;
    }
    let best = opener
        .responses
        .iter()
        .map(|r| r.score)
        .fold(f64::NEG_INFINITY, f64::max);
    let candidates: Vec<&str> = opener
        .responses
        .iter()
        .filter(|r| r.score == best)
        .map(|r| r.model_name.as_str())
        .collect();

    let recorded = opener
        .responses
        .iter()
        .find(|r| r.chosen == Some(true))
        .map(|r| (r.model_name.as_str(), ChosenSource::Flag))
        .or_else(|| {
            let next = conversation.turns.get(1)?;
            let model = next.responses.first()?.model_name.as_str();
            opener
                .responses
                .iter()
                .any(|r| r.model_name == model)
                .then_some((model, ChosenSource::Continuation))
        });
    if let Some((model, source)) = recorded {
        let warning = (!candidates.contains(&model)).then(|| {
            let msg = format!(
                "conversation {}: recorded chosen model {model} is not the highest-scored opener response",
                conversation.conversation_id
            );
            log::warn!("{msg}");
            msg
        });
        return Some(ChosenModel {
            model: model.to_string(),
            source,
            warning,
        });
    }
    let pick = if candidates.len() == 1 {
        0
    } else {
        keyed_rng(seed, conversation.conversation_id.as_bytes()).random_range(0..candidates.len())
    };
    Some(ChosenModel {
        model: candidates[pick].to_string(),
        source: ChosenSource::Argmax,
        warning: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::*;
    use crate::corpus::{ConversationType, Participant};
    use proptest::prelude::*;

    fn one_opener(scores: &[(&str, f64)]) -> Corpus {
        Corpus::new(
            vec![participant("u", "Male")],
            vec![conversation("c", "u", ConversationType::Unguided, scores)],
        )
        .unwrap()
    }

    #[test]
    fn decisive_and_tied_battles() {
        let b = extract_battles(&one_opener(&[("x", 80.0), ("y", 60.0)]), 5.0, TurnScope::All).unwrap();
        assert_eq!(b[0].winner(), Some("x"));
        let b = extract_battles(&one_opener(&[("y", 62.0), ("x", 60.0)]), 5.0, TurnScope::All).unwrap();
        assert_eq!(b[0].outcome, Outcome::Tie);
        assert_eq!((b[0].model_a.as_str(), b[0].score_a), ("x", 60.0));
    }

    #[test]
    fn four_response_opener_gives_six_battles() {
        let corpus = one_opener(&[("a", 10.0), ("b", 20.0), ("c", 30.0), ("d", 40.0)]);
        assert_eq!(extract_battles(&corpus, 5.0, TurnScope::OpenersOnly).unwrap().len(), 6);
    }

    #[test]
    fn negative_threshold_rejected() {
        assert!(extract_battles(&one_opener(&[("a", 1.0)]), -1.0, TurnScope::All).is_err());
    }

    #[test]
    fn same_model_pairs_skipped() {
        assert!(Battle::from_scores(("m", 10.0), ("m", 90.0), 5.0, "u", "c", 1).is_none());
    }

    #[test]
    fn two_point_z_scores() {
        let view = normalize_scores(&one_opener(&[("a", 40.0), ("b", 60.0)]), ScoreMode::ZOpeners);
        let vals: Vec<f64> = view.scores.values().copied().collect();
        assert_eq!(vals, vec![-1.0, 1.0]);
    }

    #[test]
    fn constant_participant_z_is_zero() {
        let view = normalize_scores(&one_opener(&[("a", 55.0), ("b", 55.0)]), ScoreMode::ZAll);
        assert!(view.scores.values().all(|&z| z == 0.0));
    }

    #[test]
    fn within_turn_rank_averages_ties() {
        assert_eq!(average_ranks_desc(&[90.0, 90.0, 10.0]), vec![1.5, 1.5, 3.0]);
    }

    #[test]
    fn chosen_strict_argmax() {
        let corpus = one_opener(&[("A", 90.0), ("B", 40.0)]);
        let c = chosen_model(&corpus.conversations()[0], 0).unwrap();
        assert_eq!((c.model.as_str(), c.source), ("A", ChosenSource::Argmax));
    }

    #[test]
    fn chosen_tie_break_is_seeded_and_fair() {
        let corpus = one_opener(&[("A", 50.0), ("B", 50.0)]);
        let conv = &corpus.conversations()[0];
        assert_eq!(chosen_model(conv, 3), chosen_model(conv, 3));
        let picks_a = (0..2000)
            .filter(|&s| chosen_model(conv, s).unwrap().model == "A")
            .count();
        // 2000 fair coin flips: 5 sigma is about 112.
        assert!((picks_a as i64 - 1000).abs() < 112, "{picks_a}");
    }

    #[test]
    fn flag_wins_over_scores_with_warning() {
        let mut corpus = one_opener(&[("A", 90.0), ("B", 40.0)]);
        let mut convs = corpus.conversations().to_vec();
        convs[0].turns[0].responses[1].chosen = Some(true);
        corpus = Corpus::new(corpus.participants().to_vec(), convs).unwrap();
        let c = chosen_model(&corpus.conversations()[0], 0).unwrap();
        assert_eq!(c.model, "B");
        assert_eq!(c.source, ChosenSource::Flag);
        assert!(c.warning.is_some());
    }

    fn random_corpus(scores: &[Vec<f64>]) -> Corpus {
        let models = ["m0", "m1", "m2", "m3"];
        let convs = scores
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let opener: Vec<(&str, f64)> = s.iter().zip(models).map(|(v, m)| (m, *v)).collect();
                conversation(&format!("c{i}"), &format!("u{}", i % 3), ConversationType::Unguided, &opener)
            })
            .collect();
        let ps = (0..3).map(|i| Participant::new(format!("u{i}"))).collect();
        Corpus::new(ps, convs).unwrap()
    }

    fn score_lists() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec((1u32..=100).prop_map(f64::from), 2..=4), 1..12)
    }

    proptest! {
        #[test]
        fn label_symmetry(a in 1.0f64..100.0, b in 1.0f64..100.0, t in 0.0f64..30.0) {
            let fwd = Battle::from_scores(("p", a), ("q", b), t, "u", "c", 0).unwrap();
            let rev = Battle::from_scores(("q", a), ("p", b), t, "u", "c", 0).unwrap();
            prop_assert_eq!(fwd.outcome, rev.outcome.flipped());
        }

        #[test]
        fn ties_monotone_in_threshold(scores in score_lists(), t1 in 0.0f64..50.0, dt in 0.0f64..50.0) {
            let corpus = random_corpus(&scores);
            let ties = |t: f64| extract_battles(&corpus, t, TurnScope::All).unwrap()
                .iter().filter(|b| b.outcome == Outcome::Tie).count();
            prop_assert!(ties(t1) <= ties(t1 + dt));
            let all = extract_battles(&corpus, 99.0, TurnScope::All).unwrap();
            prop_assert!(all.iter().all(|b| b.outcome == Outcome::Tie));
        }

        #[test]
        fn z_scores_standardized(scores in score_lists()) {
            let corpus = random_corpus(&scores);
            let view = normalize_scores(&corpus, ScoreMode::ZAll);
            let mut per_user: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
            for (uid, z) in &view.scores {
                let (conv, _, r) = corpus.utterance(uid).unwrap();
                let e = per_user.entry(conv.user_id.clone()).or_default();
                e.0.push(*z);
                e.1.push(r.score);
            }
            for (zs, raw) in per_user.values() {
                let n = zs.len() as f64;
                let mean = zs.iter().sum::<f64>() / n;
                let sd = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(mean.abs() < 1e-9);
                if raw.iter().any(|&s| s != raw[0]) {
                    prop_assert!((sd - 1.0).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn within_turn_ranks_sum(scores in score_lists()) {
            let corpus = random_corpus(&scores);
            let its = rated_interactions(&corpus, TurnScope::All);
            for (it, ranks) in its.iter().zip(transform_scores(&its, ScoreMode::WithinTurnRank)) {
                let k = it.ratings.len() as f64;
                let sum: f64 = ranks.iter().map(|r| r.unwrap()).sum();
                prop_assert!((sum - k * (k + 1.0) / 2.0).abs() < 1e-12);
            }
        }
    }
}
