use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map};

use super::{Leaderboard, Method, PairwiseCounts};
use crate::error::{Error, Result};
use crate::scoring::Battle;

const POWER_TOLERANCE: f64 = 1e-12;
const POWER_MAX_ITER: usize = 100_000;

/// Row-stochastic random-walk matrix. From model `i` a challenger `j` is
/// drawn uniformly and the walk moves to `j` with the smoothed probability
/// that `j` beats `i`, `(wins + alpha) / (comparisons + 2 alpha)`.
pub fn transition_matrix(counts: &PairwiseCounts, alpha: f64) -> Result<DMatrix<f64>> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    let m = counts.len();
    let mut p = DMatrix::zeros(m, m);
    if m == 0 {
        return Ok(p);
    }
    let challenger = if m > 1 { 1.0 / (m - 1) as f64 } else { 0.0 };
    for i in 0..m {
        let mut off = 0.0;
        for j in (0..m).filter(|&j| j != i) {
            let n = counts.comparisons(i, j) as f64;
            let p_hat = if n == 0.0 {
                if alpha > 0.0 {
                    0.5
                } else {
                    0.0
                }
            } else {
                (counts.wins(i, j) as f64 + alpha) / (n + 2.0 * alpha)
            };
            p[(i, j)] = p_hat * challenger;
            off += p[(i, j)];
        }
        p[(i, i)] = 1.0 - off;
    }
    Ok(p)
}

/// Strongly connected components of the graph with an edge `i -> j` wherever
/// `p[(i, j)] > 0`, each listed by ascending index, ordered by first member.
pub fn strongly_connected_components(p: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let m = p.nrows();
    let reach: Vec<Vec<bool>> = (0..m)
        .map(|s| {
            let mut seen = vec![false; m];
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(i) = stack.pop() {
                for j in 0..m {
                    if !seen[j] && p[(i, j)] > 0.0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen
        })
        .collect();
    let mut assigned = vec![false; m];
    let mut out = Vec::new();
    for i in 0..m {
        if assigned[i] {
            continue;
        }
        let comp: Vec<usize> = (i..m).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &comp {
            assigned[j] = true;
        }
        out.push(comp);
    }
    out
}

/// Stationary distribution by power iteration on the lazy chain `(P + I) / 2`,
/// which shares its stationary distribution with `P` and cannot oscillate.
/// Falls back to the direct solve if the iteration cap is reached.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = p.nrows();
    if m == 0 {
        return Ok(DVector::zeros(0));
    }
    let mut pi = DVector::from_element(m, 1.0 / m as f64);
    let pt = p.transpose();
    for _ in 0..POWER_MAX_ITER {
        let next = (&pt * &pi + &pi) * 0.5;
        let residual = (&next - &pi).lp_norm(1);
        pi = next;
        if residual < POWER_TOLERANCE {
            let total = pi.sum();
            return Ok(pi / total);
        }
    }
    log::warn!("power iteration hit {POWER_MAX_ITER} iterations; using direct solve");
    stationary_direct(p)
}

/// Stationary distribution from the linear system `(P^T - I) pi = 0`,
/// `sum(pi) = 1`.
pub fn stationary_direct(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = p.nrows();
    if m == 0 {
        return Ok(DVector::zeros(0));
    }
    let mut a = p.transpose() - DMatrix::identity(m, m);
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    let mut pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("singular system for stationary distribution".into()))?;
    pi.apply(|x| *x = x.max(0.0));
    let total = pi.sum();
    Ok(pi / total)
}

/// Rank centrality leaderboard over `models` (default: every model in
/// `battles`). Scores are stationary probabilities and sum to 1.
pub fn rank_centrality(battles: &[Battle], alpha: f64, models: Option<&[String]>) -> Result<Leaderboard> {
    let counts = PairwiseCounts::from_battles(battles, models);
    if counts.is_empty() {
        return Err(Error::NoBattles);
    }
    let p = transition_matrix(&counts, alpha)?;
    if alpha == 0.0 {
        let comps = strongly_connected_components(&p);
        if comps.len() > 1 {
            return Err(Error::ReducibleChain {
                components: comps
                    .into_iter()
                    .map(|c| c.into_iter().map(|i| counts.models()[i].clone()).collect())
                    .collect(),
            });
        }
    }
    let pi = stationary_distribution(&p)?;
    let scores = counts.models().iter().cloned().zip(pi.iter().copied()).collect();
    let mut params = Map::new();
    params.insert("alpha".into(), json!(alpha));
    Ok(Leaderboard::from_scores(Method::RankCentrality, params, scores, battles))
}
