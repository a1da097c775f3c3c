use std::collections::BTreeMap;

use serde_json::{json, Map};

use super::{Leaderboard, Method, PairwiseCounts};
use crate::error::{Error, Result};
use crate::scoring::{transform_scores, Battle, RatedInteraction, ScoreMode};

/// Mean over opponents of the per-pair win fraction, ties counted as one win
/// each way. Each opponent weighs the same however often the pair met.
pub fn avg_win_rate(battles: &[Battle]) -> Result<Leaderboard> {
    let counts = PairwiseCounts::from_battles(battles, None);
    if counts.is_empty() {
        return Err(Error::NoBattles);
    }
    let m = counts.len();
    let scores = (0..m)
        .map(|i| {
            let fractions: Vec<f64> = (0..m)
                .filter(|&j| j != i && counts.comparisons(i, j) > 0)
                .map(|j| counts.wins(j, i) as f64 / counts.comparisons(i, j) as f64)
                .collect();
            let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
            (counts.models()[i].clone(), mean)
        })
        .collect();
    Ok(Leaderboard::from_scores(Method::AvgWinRate, Map::new(), scores, battles))
}

/// Mean transformed score per model over its rated utterances.
pub fn mean_score(interactions: &[RatedInteraction], mode: ScoreMode, battles: &[Battle]) -> Result<Leaderboard> {
    let method = match mode {
        ScoreMode::Raw => Method::MeanScore,
        ScoreMode::ZOpeners | ScoreMode::ZAll => Method::MeanNormScore,
        ScoreMode::WithinTurnRank => Method::MeanWithinTurnRank,
    };
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
    for (it, values) in interactions.iter().zip(transform_scores(interactions, mode)) {
        for (r, v) in it.ratings.iter().zip(values) {
            seen.insert(r.model.as_str(), ());
            if let Some(v) = v {
                let e = sums.entry(r.model.as_str()).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    if sums.is_empty() {
        return Err(Error::NoRatedModel);
    }
    let scores = sums
        .iter()
        .map(|(m, (s, n))| (m.to_string(), s / *n as f64))
        .collect();
    let mut params = Map::new();
    params.insert("score_mode".into(), json!(mode));
    let mut board = Leaderboard::from_scores(method, params, scores, battles);
    board.excluded = seen
        .keys()
        .filter(|m| !sums.contains_key(*m))
        .map(|m| m.to_string())
        .collect();
    Ok(board)
}
