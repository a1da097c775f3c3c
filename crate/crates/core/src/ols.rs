//! Ordinary least squares with cluster-robust and heteroskedasticity-robust
//! sandwich standard errors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Relative residual norm below which a column counts as collinear.
const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    /// Cluster-robust with the G/(G-1) * (N-1)/(N-K) small-sample factor.
    #[default]
    Cr1,
    /// Cluster-robust without correction.
    Cr0,
    /// Heteroskedasticity-robust with the N/(N-K) factor.
    Hc1,
}

impl VarianceKind {
    pub fn clustered(self) -> bool {
        matches!(self, VarianceKind::Cr1 | VarianceKind::Cr0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub r2: f64,
    pub n: usize,
    pub k: usize,
    pub clusters: Option<usize>,
    pub df: f64,
    pub variance: VarianceKind,
    /// Columns removed as collinear with earlier ones.
    pub dropped: Vec<String>,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64, f64)> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((self.beta[i], self.se[i], self.p[i]))
    }
}

/// A design matrix factored once and reusable across outcomes.
#[derive(Debug, Clone)]
pub struct OlsDesign {
    names: Vec<String>,
    dropped: Vec<String>,
    x: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    /// (X'X)^-1.
    bread: DMatrix<f64>,
    cluster_of: Option<Vec<usize>>,
    n_clusters: usize,
}

impl OlsDesign {
    /// `x` is N x K with column `names`; `clusters` gives each row's cluster
    /// label. Collinear columns are dropped greedily, left to right.
    pub fn new(x: DMatrix<f64>, names: &[String], clusters: Option<&[String]>) -> Result<OlsDesign> {
        let (n, k) = x.shape();
        if names.len() != k {
            return Err(Error::invalid(format!("{} column names for {k} columns", names.len())));
        }
        if let Some(c) = clusters {
            if c.len() != n {
                return Err(Error::invalid(format!("{} cluster labels for {n} rows", c.len())));
            }
        }
        let (kept, dropped) = independent_columns(&x);
        if !dropped.is_empty() {
            let cols: Vec<&str> = dropped.iter().map(|&j| names[j].as_str()).collect();
            log::warn!("dropping collinear columns: {}", cols.join(", "));
        }
        if kept.is_empty() {
            return Err(Error::RankDeficient {
                columns: names.to_vec(),
            });
        }
        if n <= kept.len() {
            return Err(Error::invalid(format!(
                "need more observations than regressors, got N={n}, K={}",
                kept.len()
            )));
        }
        let x = x.select_columns(&kept);
        let qr = x.clone().qr();
        let (q, r) = (qr.q(), qr.r());
        let r_inv = r
            .clone()
            .solve_upper_triangular(&DMatrix::identity(kept.len(), kept.len()))
            .ok_or_else(|| Error::RankDeficient {
                columns: kept.iter().map(|&j| names[j].clone()).collect(),
            })?;
        let bread = &r_inv * r_inv.transpose();
        let (cluster_of, n_clusters) = match clusters {
            Some(labels) => {
                let mut ids = std::collections::HashMap::new();
                let of: Vec<usize> = labels
                    .iter()
                    .map(|l| {
                        let next = ids.len();
                        *ids.entry(l.as_str()).or_insert(next)
                    })
                    .collect();
                (Some(of), ids.len())
            }
            None => (None, 0),
        };
        Ok(OlsDesign {
            names: kept.iter().map(|&j| names[j].clone()).collect(),
            dropped: dropped.iter().map(|&j| names[j].clone()).collect(),
            x,
            q,
            r,
            bread,
            cluster_of,
            n_clusters,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    pub fn fit(&self, y: &[f64], variance: VarianceKind) -> Result<OlsFit> {
        let (n, k) = self.x.shape();
        if y.len() != n {
            return Err(Error::invalid(format!("{} outcomes for {n} rows", y.len())));
        }
        let y = DVector::from_column_slice(y);
        let qty = self.q.transpose() * &y;
        let beta = self
            .r
            .solve_upper_triangular(&qty)
            .ok_or_else(|| Error::Numerical("singular R factor".into()))?;
        let resid = &y - &self.x * &beta;

        let mut meat = DMatrix::<f64>::zeros(k, k);
        let (scale, df, clusters) = if variance.clustered() {
            let Some(cluster_of) = &self.cluster_of else {
                return Err(Error::invalid("clustered variance needs cluster labels"));
            };
            let g = self.n_clusters;
            if g < 2 {
                return Err(Error::InsufficientClusters(g));
            }
            let mut scores = DMatrix::<f64>::zeros(g, k);
            for i in 0..n {
                for j in 0..k {
                    scores[(cluster_of[i], j)] += self.x[(i, j)] * resid[i];
                }
            }
            meat += scores.transpose() * &scores;
            let (gf, nf, kf) = (g as f64, n as f64, k as f64);
            let scale = match variance {
                VarianceKind::Cr1 => gf / (gf - 1.0) * (nf - 1.0) / (nf - kf),
                _ => 1.0,
            };
            (scale, gf - 1.0, Some(g))
        } else {
            for i in 0..n {
                let row = self.x.row(i);
                meat += resid[i] * resid[i] * row.transpose() * row;
            }
            let (nf, kf) = (n as f64, k as f64);
            (nf / (nf - kf), nf - kf, None)
        };
        let cov = &self.bread * meat * &self.bread * scale;

        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(e.to_string()))?;
        let se: Vec<f64> = (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
        let t: Vec<f64> = (0..k).map(|j| beta[j] / se[j]).collect();
        let p: Vec<f64> = t
            .iter()
            .map(|t| if t.is_nan() { f64::NAN } else { (2.0 * dist.sf(t.abs())).min(1.0) })
            .collect();

        let mean = y.mean();
        let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let ssr = resid.norm_squared();
        let r2 = if sst > 0.0 {
            1.0 - ssr / sst
        } else if ssr <= 1e-24 {
            1.0
        } else {
            0.0
        };
        Ok(OlsFit {
            names: self.names.clone(),
            beta: beta.iter().copied().collect(),
            se,
            t,
            p,
            r2,
            n,
            k,
            clusters,
            df,
            variance,
            dropped: self.dropped.clone(),
        })
    }
}

/// Greedy Gram-Schmidt: a column is kept when its component orthogonal to
/// the columns already kept is non-negligible.
fn independent_columns(x: &DMatrix<f64>) -> (Vec<usize>, Vec<usize>) {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let (mut kept, mut dropped) = (Vec::new(), Vec::new());
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        let mut v = col;
        for b in &basis {
            let proj = b.dot(&v);
            v -= proj * b;
        }
        let rest = v.norm();
        if norm > 0.0 && rest > COLLINEAR_TOL * norm {
            basis.push(v / rest);
            kept.push(j);
        } else {
            dropped.push(j);
        }
    }
    (kept, dropped)
}

/// Convenience wrapper: factor and fit in one call.
pub fn ols(
    x: DMatrix<f64>,
    names: &[String],
    y: &[f64],
    clusters: Option<&[String]>,
    variance: VarianceKind,
) -> Result<OlsFit> {
    OlsDesign::new(x, names, clusters)?.fit(y, variance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let female = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { female[i] });
        let y: Vec<f64> = female.iter().map(|f| 0.3 + 0.2 * f).collect();
        let clusters: Vec<String> = (0..6).map(|i| format!("c{}", i / 2)).collect();
        let fit = ols(x, &names(2), &y, Some(&clusters), VarianceKind::Cr1).unwrap();
        assert!((fit.beta[0] - 0.3).abs() < 1e-14 && (fit.beta[1] - 0.2).abs() < 1e-14);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_column_dropped() {
        let x = DMatrix::from_fn(5, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 * i as f64 + 1.0,
        });
        let y = [1.0, 2.0, 2.5, 4.0, 5.5];
        let fit = ols(x, &names(3), &y, None, VarianceKind::Hc1).unwrap();
        assert_eq!(fit.dropped, vec!["x2"]);
        assert_eq!(fit.k, 2);
    }

    #[test]
    fn all_zero_design_is_fatal() {
        let x = DMatrix::zeros(4, 2);
        assert!(matches!(
            ols(x, &names(2), &[1.0, 2.0, 3.0, 4.0], None, VarianceKind::Hc1),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn one_cluster_is_fatal() {
        let x = DMatrix::from_fn(4, 1, |_, _| 1.0);
        let c = vec!["a".to_string(); 4];
        assert!(matches!(
            ols(x, &names(1), &[1.0, 2.0, 3.0, 5.0], Some(&c), VarianceKind::Cr1),
            Err(Error::InsufficientClusters(1))
        ));
    }

    #[test]
    fn singleton_clusters_equal_hc1() {
        let x = DMatrix::from_fn(12, 2, |i, j| if j == 0 { 1.0 } else { (i * i % 7) as f64 });
        let y: Vec<f64> = (0..12).map(|i| (i * 3 % 5) as f64).collect();
        let c: Vec<String> = (0..12).map(|i| i.to_string()).collect();
        let a = ols(x.clone(), &names(2), &y, Some(&c), VarianceKind::Cr1).unwrap();
        let b = ols(x, &names(2), &y, None, VarianceKind::Hc1).unwrap();
        for j in 0..2 {
            assert!((a.se[j] - b.se[j]).abs() < 1e-12);
        }
    }
}
