//! Social-choice functions from battles or ratings to leaderboards.

mod elo;
mod kendall;
mod pairwise;
mod rank_centrality;
mod simple;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub use elo::{elo_mle, elo_naive, EloOrder, ELO_INIT, ELO_SCALE};
pub use kendall::{kendall_tau, kendall_tau_b, KendallTau};
pub use pairwise::PairwiseCounts;
pub use rank_centrality::{
    rank_centrality, stationary_direct, stationary_distribution, strongly_connected_components,
    transition_matrix,
};
pub use simple::{avg_win_rate, mean_score};

use crate::error::{Error, Result};
use crate::scoring::{
    average_ranks_desc, battles_from_interactions, check_threshold, Battle, RatedInteraction,
    ScoreMode, TurnScope, DEFAULT_TIE_THRESHOLD,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RankCentrality,
    EloNaive,
    EloMle,
    AvgWinRate,
    MeanScore,
    MeanNormScore,
    MeanWithinTurnRank,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::RankCentrality,
        Method::EloNaive,
        Method::EloMle,
        Method::AvgWinRate,
        Method::MeanScore,
        Method::MeanNormScore,
        Method::MeanWithinTurnRank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::RankCentrality => "rank_centrality",
            Method::EloNaive => "elo_naive",
            Method::EloMle => "elo_mle",
            Method::AvgWinRate => "avg_win_rate",
            Method::MeanScore => "mean_score",
            Method::MeanNormScore => "mean_norm_score",
            Method::MeanWithinTurnRank => "mean_within_turn_rank",
        }
    }

    /// Mean within-turn rank is the only method where smaller is better.
    pub fn higher_is_better(self) -> bool {
        self != Method::MeanWithinTurnRank
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::invalid(format!("unknown method '{s}'; expected one of {}", names.join(", ")))
            })
    }
}

/// Knobs shared by every method; each method reads only what it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub tie_threshold: f64,
    pub alpha: f64,
    pub k_factor: f64,
    pub elo_order: EloOrder,
    pub scope: TurnScope,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            tie_threshold: DEFAULT_TIE_THRESHOLD,
            alpha: 1.0,
            k_factor: 4.0,
            elo_order: EloOrder::AsGiven,
            scope: TurnScope::OpenersOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standing {
    pub name: String,
    pub score: f64,
    /// 1 = best; exact score ties share the average rank.
    pub rank: f64,
    pub n_battles: usize,
    pub n_unique_raters: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub method: Method,
    pub params: Map<String, Value>,
    /// Sorted by rank, then name.
    pub models: Vec<Standing>,
    /// Models present in the input but without data for this method.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub excluded: Vec<String>,
}

impl Leaderboard {
    /// Ranks `scores` and attaches battle tallies from `battles`.
    pub fn from_scores(
        method: Method,
        params: Map<String, Value>,
        scores: Vec<(String, f64)>,
        battles: &[Battle],
    ) -> Leaderboard {
        let oriented: Vec<f64> = scores
            .iter()
            .map(|(_, s)| if method.higher_is_better() { *s } else { -*s })
            .collect();
        let ranks = average_ranks_desc(&oriented);
        let tallies = battle_tallies(battles);
        let mut models: Vec<Standing> = scores
            .into_iter()
            .zip(ranks)
            .map(|((name, score), rank)| {
                let (n_battles, n_unique_raters) = tallies
                    .get(name.as_str())
                    .map(|(n, users)| (*n, users.len()))
                    .unwrap_or((0, 0));
                Standing {
                    name,
                    score,
                    rank,
                    n_battles,
                    n_unique_raters,
                    ci: None,
                }
            })
            .collect();
        models.sort_by(|a, b| a.rank.total_cmp(&b.rank).then_with(|| a.name.cmp(&b.name)));
        Leaderboard {
            method,
            params,
            models,
            excluded: Vec::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Standing> {
        self.models.iter().find(|s| s.name == name)
    }

    pub fn scores(&self) -> BTreeMap<String, f64> {
        self.models.iter().map(|s| (s.name.clone(), s.score)).collect()
    }

    pub fn ranks(&self) -> BTreeMap<String, f64> {
        self.models.iter().map(|s| (s.name.clone(), s.rank)).collect()
    }

    pub fn leader(&self) -> Option<&Standing> {
        self.models.first()
    }
}

fn battle_tallies(battles: &[Battle]) -> BTreeMap<&str, (usize, BTreeSet<&str>)> {
    let mut out: BTreeMap<&str, (usize, BTreeSet<&str>)> = BTreeMap::new();
    for b in battles {
        for m in [&b.model_a, &b.model_b] {
            let e = out.entry(m.as_str()).or_default();
            e.0 += 1;
            e.1.insert(b.user_id.as_str());
        }
    }
    out
}

/// One entry point for every method, used directly and by the resampling
/// routines. Interactions outside `params.scope` are ignored.
pub fn leaderboard(
    interactions: &[RatedInteraction],
    method: Method,
    params: &MethodParams,
) -> Result<Leaderboard> {
    check_threshold(params.tie_threshold)?;
    let scoped: Vec<RatedInteraction>;
    let interactions = if params.scope == TurnScope::OpenersOnly && interactions.iter().any(|it| it.turn != 0) {
        scoped = interactions.iter().filter(|it| it.turn == 0).cloned().collect();
        &scoped[..]
    } else {
        interactions
    };
    let battles = battles_from_interactions(interactions, params.tie_threshold);
    let mut board = match method {
        Method::RankCentrality | Method::EloNaive | Method::EloMle | Method::AvgWinRate => {
            battle_leaderboard(&battles, method, params)?
        }
        Method::MeanScore => mean_score(interactions, ScoreMode::Raw, &battles)?,
        Method::MeanNormScore => {
            let mode = match params.scope {
                TurnScope::OpenersOnly => ScoreMode::ZOpeners,
                TurnScope::All => ScoreMode::ZAll,
            };
            mean_score(interactions, mode, &battles)?
        }
        Method::MeanWithinTurnRank => mean_score(interactions, ScoreMode::WithinTurnRank, &battles)?,
    };
    board.params.insert("tie_threshold".into(), json!(params.tie_threshold));
    board.params.insert("scope".into(), json!(params.scope));
    if method.higher_is_better() && !matches!(method, Method::MeanScore | Method::MeanNormScore) {
        let rated: BTreeSet<&str> = interactions
            .iter()
            .flat_map(|it| it.ratings.iter().map(|r| r.model.as_str()))
            .collect();
        board.excluded = rated
            .into_iter()
            .filter(|m| board.get(m).is_none())
            .map(str::to_string)
            .collect();
    }
    Ok(board)
}

/// Leaderboard for the methods that consume battles only.
pub fn battle_leaderboard(battles: &[Battle], method: Method, params: &MethodParams) -> Result<Leaderboard> {
    match method {
        Method::RankCentrality => rank_centrality(battles, params.alpha, None),
        Method::EloNaive => elo_naive(battles, params.k_factor, params.elo_order),
        Method::EloMle => elo_mle(battles),
        Method::AvgWinRate => avg_win_rate(battles),
        _ => Err(Error::invalid(format!(
            "{method} needs per-utterance scores, not battles"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::Rating;

    fn interaction(user: &str, turn: usize, scores: &[(&str, f64)]) -> RatedInteraction {
        RatedInteraction {
            user_id: user.into(),
            conversation_id: format!("{user}-c"),
            turn,
            ratings: scores
                .iter()
                .enumerate()
                .map(|(i, (m, s))| Rating {
                    utterance_id: format!("{user}-{turn}-{i}"),
                    model: m.to_string(),
                    score: *s,
                })
                .collect(),
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("borda".parse::<Method>().is_err());
    }

    #[test]
    fn ranks_are_average_for_ties_and_flip_for_rank_method() {
        let scores = vec![("a".into(), 2.0), ("b".into(), 2.0), ("c".into(), 1.0)];
        let board = Leaderboard::from_scores(Method::MeanScore, Map::new(), scores.clone(), &[]);
        assert_eq!(board.ranks()["a"], 1.5);
        assert_eq!(board.ranks()["c"], 3.0);
        let board = Leaderboard::from_scores(Method::MeanWithinTurnRank, Map::new(), scores, &[]);
        assert_eq!(board.leader().unwrap().name, "c");
    }

    #[test]
    fn every_method_runs_and_scope_filters_turns() {
        let its = vec![
            interaction("u1", 0, &[("a", 90.0), ("b", 20.0), ("c", 50.0)]),
            interaction("u2", 0, &[("a", 70.0), ("b", 40.0), ("c", 60.0)]),
            interaction("u2", 1, &[("b", 99.0), ("c", 1.0)]),
        ];
        for m in Method::ALL {
            let board = leaderboard(&its, m, &MethodParams::default()).unwrap();
            assert_eq!(board.leader().unwrap().name, "a", "{m}");
            assert_eq!(board.models.len(), 3);
        }
        let board = leaderboard(&its, Method::MeanScore, &MethodParams::default()).unwrap();
        assert_eq!(board.get("b").unwrap().score, 30.0);
        assert_eq!(board.get("a").unwrap().n_unique_raters, 2);
    }

    #[test]
    fn model_without_battles_is_reported() {
        let its = vec![
            interaction("u1", 0, &[("a", 90.0), ("b", 20.0)]),
            interaction("u2", 0, &[("z", 70.0)]),
        ];
        let board = leaderboard(&its, Method::AvgWinRate, &MethodParams::default()).unwrap();
        assert_eq!(board.excluded, vec!["z".to_string()]);
    }
}
