use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::Leaderboard;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KendallTau {
    pub tau: f64,
    /// Two-sided, normal approximation with tie-corrected variance.
    pub p_value: f64,
    pub n: usize,
}

/// Kendall tau-b between the ranks two leaderboards give their shared models.
pub fn kendall_tau(a: &Leaderboard, b: &Leaderboard) -> Result<KendallTau> {
    let rb = b.ranks();
    let (x, y): (Vec<f64>, Vec<f64>) = a
        .models
        .iter()
        .filter_map(|s| rb.get(&s.name).map(|r| (s.rank, *r)))
        .unzip();
    kendall_tau_b(&x, &y)
}

/// Sums of t(t-1)/2, t(t-1)(t-2) and t(t-1)(2t+5) over tie groups.
fn tie_terms(v: &[f64]) -> (f64, f64, f64) {
    let mut groups: BTreeMap<u64, f64> = BTreeMap::new();
    for x in v {
        *groups.entry(x.to_bits()).or_default() += 1.0;
    }
    groups.values().fold((0.0, 0.0, 0.0), |acc, &t| {
        (
            acc.0 + t * (t - 1.0) / 2.0,
            acc.1 + t * (t - 1.0) * (t - 2.0),
            acc.2 + t * (t - 1.0) * (2.0 * t + 5.0),
        )
    })
}

pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<KendallTau> {
    if x.len() != y.len() {
        return Err(Error::invalid("kendall tau needs paired observations"));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "kendall tau needs at least 2 shared models, got {n}"
        )));
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            s += (dx * dy).signum() * ((dx != 0.0 && dy != 0.0) as u8 as f64);
        }
    }
    let nf = n as f64;
    let n0 = nf * (nf - 1.0) / 2.0;
    let (xt, x0, x1) = tie_terms(x);
    let (yt, y0, y1) = tie_terms(y);
    let denom = ((n0 - xt) * (n0 - yt)).sqrt();
    let tau = if denom > 0.0 { s / denom } else { f64::NAN };

    let m = nf * (nf - 1.0);
    let mut var = (m * (2.0 * nf + 5.0) - x1 - y1) / 18.0 + 2.0 * xt * yt / m;
    if n > 2 {
        var += x0 * y0 / (9.0 * m * (nf - 2.0));
    }
    let p_value = if var > 0.0 && tau.is_finite() {
        let z = s / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * normal.sf(z.abs())).min(1.0)
    } else {
        f64::NAN
    };
    Ok(KendallTau { tau, p_value, n })
}
