use std::collections::BTreeMap;
use std::f64::consts::LN_10;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};

use super::{Leaderboard, Method, PairwiseCounts};
use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::scoring::{Battle, Outcome};

pub const ELO_INIT: f64 = 1000.0;
pub const ELO_SCALE: f64 = 400.0;

/// Ridge on natural-scale rating offsets; keeps separated models finite.
const MLE_RIDGE: f64 = 1e-6;
const MLE_GRAD_TOL: f64 = 1e-8;
const MLE_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EloOrder {
    /// Battles in the order supplied (chronological when so constructed).
    #[default]
    AsGiven,
    /// A seeded uniform shuffle of the supplied order.
    Shuffled(u64),
}

fn expected(r_a: f64, r_b: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf((r_b - r_a) / ELO_SCALE))
}

/// Online Elo: ratings start at 1000 and each battle moves both players by
/// `k * (actual - expected)`, with a tie scoring 0.5.
pub fn elo_naive(battles: &[Battle], k_factor: f64, order: EloOrder) -> Result<Leaderboard> {
    if !k_factor.is_finite() || k_factor <= 0.0 {
        return Err(Error::invalid(format!("k_factor must be positive, got {k_factor}")));
    }
    let mut idx: Vec<usize> = (0..battles.len()).collect();
    if let EloOrder::Shuffled(seed) = order {
        idx.shuffle(&mut keyed_rng(seed, b"elo_order"));
    }
    let mut ratings: BTreeMap<&str, f64> = BTreeMap::new();
    for i in idx {
        let b = &battles[i];
        let r_a = *ratings.entry(b.model_a.as_str()).or_insert(ELO_INIT);
        let r_b = *ratings.entry(b.model_b.as_str()).or_insert(ELO_INIT);
        let actual = match b.outcome {
            Outcome::WinA => 1.0,
            Outcome::WinB => 0.0,
            Outcome::Tie => 0.5,
        };
        let delta = k_factor * (actual - expected(r_a, r_b));
        ratings.insert(b.model_a.as_str(), r_a + delta);
        ratings.insert(b.model_b.as_str(), r_b - delta);
    }
    let scores = ratings.into_iter().map(|(m, r)| (m.to_string(), r)).collect();
    let mut params = Map::new();
    params.insert("k_factor".into(), json!(k_factor));
    params.insert("order".into(), json!(order));
    Ok(Leaderboard::from_scores(Method::EloNaive, params, scores, battles))
}

/// Bradley-Terry maximum likelihood on the Elo scale, mean rating 1000.
///
/// The objective is the mean log-likelihood over comparisons (ties expanded
/// to one win each way) minus a 1e-6 ridge, so duplicating every battle
/// leaves the optimum unchanged.
pub fn elo_mle(battles: &[Battle]) -> Result<Leaderboard> {
    let counts = PairwiseCounts::from_battles(battles, None);
    let m = counts.len();
    if m == 0 {
        return Err(Error::NoBattles);
    }
    let theta = fit_bradley_terry(&counts)?;
    let mean = theta.mean();
    let scores = counts
        .models()
        .iter()
        .cloned()
        .zip(theta.iter().map(|t| ELO_INIT + ELO_SCALE / LN_10 * (t - mean)))
        .collect();
    let mut params = Map::new();
    params.insert("ridge".into(), json!(MLE_RIDGE));
    Ok(Leaderboard::from_scores(Method::EloMle, params, scores, battles))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Pairs with data as (i, j, wins of i over j, wins of j over i).
fn pair_list(counts: &PairwiseCounts) -> (Vec<(usize, usize, f64, f64)>, f64) {
    let m = counts.len();
    let mut pairs = Vec::new();
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let (w_ij, w_ji) = (counts.wins(j, i) as f64, counts.wins(i, j) as f64);
            if w_ij + w_ji > 0.0 {
                pairs.push((i, j, w_ij, w_ji));
                total += w_ij + w_ji;
            }
        }
    }
    (pairs, total)
}

fn objective(pairs: &[(usize, usize, f64, f64)], total: f64, theta: &DVector<f64>) -> f64 {
    let mut ll = 0.0;
    for &(i, j, w_ij, w_ji) in pairs {
        let d = theta[i] - theta[j];
        ll += w_ij * log_sigmoid(d) + w_ji * log_sigmoid(-d);
    }
    ll / total - 0.5 * MLE_RIDGE * theta.norm_squared()
}

fn fit_bradley_terry(counts: &PairwiseCounts) -> Result<DVector<f64>> {
    let m = counts.len();
    let (pairs, total) = pair_list(counts);
    let mut theta = DVector::zeros(m);
    if pairs.is_empty() {
        return Ok(theta);
    }
    let mut value = objective(&pairs, total, &theta);
    for _ in 0..MLE_MAX_ITER {
        let mut grad = -MLE_RIDGE * &theta;
        let mut neg_hess = DMatrix::identity(m, m) * MLE_RIDGE;
        for &(i, j, w_ij, w_ji) in &pairs {
            let s = sigmoid(theta[i] - theta[j]);
            let n = w_ij + w_ji;
            let g = (w_ij - n * s) / total;
            grad[i] += g;
            grad[j] -= g;
            let h = n * s * (1.0 - s) / total;
            neg_hess[(i, i)] += h;
            neg_hess[(j, j)] += h;
            neg_hess[(i, j)] -= h;
            neg_hess[(j, i)] -= h;
        }
        if grad.norm() < MLE_GRAD_TOL {
            return Ok(theta);
        }
        let step = neg_hess
            .cholesky()
            .ok_or_else(|| Error::Numerical("Bradley-Terry Hessian not positive definite".into()))?
            .solve(&grad);
        let mut t = 1.0;
        loop {
            let candidate = &theta + t * &step;
            let v = objective(&pairs, total, &candidate);
            if v >= value || t < 1e-12 {
                theta = candidate;
                value = v;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::Numerical(format!(
        "Bradley-Terry fit did not reach gradient norm {MLE_GRAD_TOL} in {MLE_MAX_ITER} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn battle(a: &str, b: &str, outcome: Outcome) -> Battle {
        Battle {
            model_a: a.into(),
            model_b: b.into(),
            outcome,
            user_id: "u".into(),
            conversation_id: "c".into(),
            turn: 0,
            score_a: 0.0,
            score_b: 0.0,
        }
    }

    #[test]
    fn no_battles_leaves_empty_board() {
        assert!(elo_naive(&[], 4.0, EloOrder::AsGiven).unwrap().models.is_empty());
    }

    #[test]
    fn single_win_moves_half_k() {
        let board = elo_naive(&[battle("A", "B", Outcome::WinA)], 4.0, EloOrder::AsGiven).unwrap();
        assert_eq!(board.scores()["A"], 1002.0);
        assert_eq!(board.scores()["B"], 998.0);
    }

    #[test]
    fn naive_elo_depends_on_order_for_a_cycle() {
        let bs = vec![
            battle("A", "B", Outcome::WinA),
            battle("B", "C", Outcome::WinA),
            battle("A", "C", Outcome::WinB),
        ];
        let reversed: Vec<Battle> = bs.iter().rev().cloned().collect();
        let fwd = elo_naive(&bs, 32.0, EloOrder::AsGiven).unwrap();
        let rev = elo_naive(&reversed, 32.0, EloOrder::AsGiven).unwrap();
        assert_ne!(fwd.scores(), rev.scores());
        let s1 = elo_naive(&bs, 32.0, EloOrder::Shuffled(1)).unwrap();
        assert_eq!(s1, elo_naive(&bs, 32.0, EloOrder::Shuffled(1)).unwrap());
    }

    #[test]
    fn even_split_gives_equal_ratings() {
        let mut bs = vec![battle("A", "B", Outcome::WinA); 10];
        bs.extend(vec![battle("A", "B", Outcome::WinB); 10]);
        let s = elo_mle(&bs).unwrap().scores();
        assert!((s["A"] - 1000.0).abs() < 1e-9 && (s["B"] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn three_to_one_odds_gap() {
        let mut bs = vec![battle("A", "B", Outcome::WinA); 75];
        bs.extend(vec![battle("A", "B", Outcome::WinB); 25]);
        let s = elo_mle(&bs).unwrap().scores();
        assert!((s["A"] - s["B"] - 400.0 * 3f64.log10()).abs() < 0.01);
        assert!(((s["A"] + s["B"]) / 2.0 - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn separated_model_stays_finite() {
        let bs = vec![battle("A", "B", Outcome::WinA); 20];
        let s = elo_mle(&bs).unwrap().scores();
        assert!(s["A"].is_finite() && s["A"] > s["B"]);
    }
}
