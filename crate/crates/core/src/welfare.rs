//! Welfare of stakeholder populations under models chosen by sampled
//! subpopulations, and first-order stochastic dominance between outcomes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Participant, PREFER_NOT_TO_SAY};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, replication_rng, Rng};
use crate::scoring::chosen_model;

const TIE_TOL: f64 = 1e-12;
const CDF_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Mean opening-turn score given to the model.
    Rating,
    /// Share of openers showing the model in which it was chosen.
    Choice,
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rating" => Ok(Measure::Rating),
            "choice" => Ok(Measure::Choice),
            _ => Err(Error::invalid(format!("unknown welfare measure '{s}'; expected rating or choice"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Us,
    Uk,
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "us" => Ok(Region::Us),
            "uk" => Ok(Region::Uk),
            _ => Err(Error::invalid(format!("unknown region '{s}'; expected us or uk"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    Rep,
    Male,
    NonMale,
    White,
    NonWhite,
    Below45,
    Above45,
}

impl Group {
    pub const ALL: [Group; 7] = [
        Group::Rep,
        Group::Male,
        Group::NonMale,
        Group::White,
        Group::NonWhite,
        Group::Below45,
        Group::Above45,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::Rep => "rep",
            Group::Male => "male",
            Group::NonMale => "non-male",
            Group::White => "white",
            Group::NonWhite => "non-white",
            Group::Below45 => "below-45",
            Group::Above45 => "above-45",
        }
    }

    /// `None` when the participant withheld the attribute the group needs.
    fn contains(self, p: &Participant) -> Option<bool> {
        let known = |v: &str| v != PREFER_NOT_TO_SAY && !v.is_empty();
        match self {
            Group::Rep => Some(true),
            Group::Male | Group::NonMale => {
                known(&p.gender).then(|| (p.gender == "Male") == (self == Group::Male))
            }
            Group::White | Group::NonWhite => known(&p.ethnicity_group)
                .then(|| (p.ethnicity_group == "White") == (self == Group::White)),
            Group::Below45 | Group::Above45 => known(&p.age_bucket).then(|| {
                let young = ["18-24", "25-34", "35-44"]
                    .iter()
                    .any(|b| p.age_bucket.starts_with(b));
                young == (self == Group::Below45)
            }),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Group::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown group '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubPopulation {
    pub region: Region,
    pub group: Group,
    pub members: Vec<String>,
    /// Regional participants left out because they withheld the attribute.
    pub withheld: usize,
}

fn in_region(p: &Participant, region: Region, use_flags: bool) -> bool {
    if use_flags {
        return match region {
            Region::Us => p.census_us == Some(true),
            Region::Uk => p.census_uk == Some(true),
        };
    }
    let (code, names): (&str, &[&str]) = match region {
        Region::Us => ("us", &["United States", "United States of America", "US", "USA"]),
        Region::Uk => ("uk", &["United Kingdom", "UK", "Great Britain"]),
    };
    match &p.study_locale {
        Some(locale) => locale.eq_ignore_ascii_case(code),
        None => names.iter().any(|n| p.reside_country.eq_ignore_ascii_case(n)),
    }
}

/// Members of `group` within the region's representative sample. The
/// sample comes from the census flags when the corpus carries them, else
/// from the study locale or country of residence.
pub fn subpopulation(corpus: &Corpus, region: Region, group: Group) -> SubPopulation {
    let use_flags = corpus.participants().iter().any(|p| match region {
        Region::Us => p.census_us.is_some(),
        Region::Uk => p.census_uk.is_some(),
    });
    let mut members = Vec::new();
    let mut withheld = 0;
    for p in corpus.participants().iter().filter(|p| in_region(p, region, use_flags)) {
        match group.contains(p) {
            Some(true) => members.push(p.user_id.clone()),
            Some(false) => {}
            None => withheld += 1,
        }
    }
    SubPopulation {
        region,
        group,
        members,
        withheld,
    }
}

/// Individual welfare, participants x models; `None` where the participant
/// never saw the model in an opening turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareMatrix {
    pub measure: Measure,
    pub participants: Vec<String>,
    pub models: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl WelfareMatrix {
    pub fn row(&self, user_id: &str) -> Option<usize> {
        self.participants.iter().position(|p| p == user_id)
    }

    pub fn rows(&self, user_ids: &[String]) -> Vec<usize> {
        let index: BTreeMap<&str, usize> = self
            .participants
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i))
            .collect();
        user_ids.iter().filter_map(|u| index.get(u.as_str()).copied()).collect()
    }

    /// Mean over the given rows (with multiplicity) of each model's non-NA
    /// values.
    pub fn column_means(&self, rows: &[usize]) -> Vec<Option<f64>> {
        (0..self.models.len())
            .map(|j| {
                let (mut s, mut n) = (0.0, 0usize);
                for &i in rows {
                    if let Some(v) = self.values[i][j] {
                        s += v;
                        n += 1;
                    }
                }
                (n > 0).then(|| s / n as f64)
            })
            .collect()
    }
}

/// Welfare of every participant for every model in the corpus. `seed`
/// breaks score ties when recovering chosen models.
pub fn welfare_matrix(corpus: &Corpus, measure: Measure, seed: u64) -> WelfareMatrix {
    let models = corpus.models();
    let model_index: BTreeMap<&str, usize> = models.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    let by_user = corpus.conversations_by_participant();
    let values = corpus
        .participants()
        .iter()
        .map(|p| {
            let mut num = vec![0.0; models.len()];
            let mut den = vec![0usize; models.len()];
            for c in by_user.get(p.user_id.as_str()).into_iter().flatten() {
                let Some(opener) = c.opener() else { continue };
                match measure {
                    Measure::Rating => {
                        for r in &opener.responses {
                            let j = model_index[r.model_name.as_str()];
                            num[j] += r.score;
                            den[j] += 1;
                        }
                    }
                    Measure::Choice => {
                        let chosen = chosen_model(c, seed).map(|m| m.model);
                        let mut shown: Vec<usize> = opener
                            .responses
                            .iter()
                            .map(|r| model_index[r.model_name.as_str()])
                            .collect();
                        shown.sort_unstable();
                        shown.dedup();
                        for j in shown {
                            den[j] += 1;
                            if chosen.as_deref() == Some(models[j].as_str()) {
                                num[j] += 1.0;
                            }
                        }
                    }
                }
            }
            num.iter()
                .zip(&den)
                .map(|(s, &n)| (n > 0).then(|| s / n as f64))
                .collect()
        })
        .collect();
    WelfareMatrix {
        measure,
        participants: corpus.participants().iter().map(|p| p.user_id.clone()).collect(),
        models,
        values,
    }
}

pub fn individual_welfare(corpus: &Corpus, user_id: &str, model: &str, measure: Measure, seed: u64) -> Option<f64> {
    let m = welfare_matrix(corpus, measure, seed);
    let i = m.row(user_id)?;
    let j = m.models.iter().position(|x| x == model)?;
    m.values[i][j]
}

/// The model with the highest mean welfare over sample rows that rated it;
/// exact ties (within 1e-12) are broken uniformly with `rng`.
pub fn choose_model_with(matrix: &WelfareMatrix, sample: &[usize], rng: &mut Rng) -> Result<usize> {
    let means = matrix.column_means(sample);
    let best = means
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return Err(Error::NoRatedModel);
    }
    let candidates: Vec<usize> = means
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_some_and(|v| best - v <= TIE_TOL))
        .map(|(j, _)| j)
        .collect();
    Ok(if candidates.len() == 1 {
        candidates[0]
    } else {
        candidates[rng.random_range(0..candidates.len())]
    })
}

pub fn choose_model(matrix: &WelfareMatrix, sample: &[usize], seed: u64) -> Result<String> {
    let j = choose_model_with(matrix, sample, &mut keyed_rng(seed, b"choose_model"))?;
    Ok(matrix.models[j].clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducedDistribution {
    pub models: Vec<String>,
    pub rho: Vec<f64>,
    pub n: usize,
    pub replications: usize,
    /// Replications whose sample rated no model at all.
    pub failures: usize,
    /// Chosen model index per replication.
    pub chosen: Vec<Option<usize>>,
}

/// Empirical distribution of the chosen model when `n` members of
/// `population` (matrix rows) are drawn with replacement, per replication.
pub fn induced_distribution(
    matrix: &WelfareMatrix,
    population: &[usize],
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<InducedDistribution> {
    if n == 0 || replications == 0 {
        return Err(Error::invalid("sample size and replications must be >= 1"));
    }
    if population.is_empty() {
        return Err(Error::invalid("empty sampling population"));
    }
    let chosen: Vec<Option<usize>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(seed, r as u64);
            let sample: Vec<usize> = (0..n)
                .map(|_| population[rng.random_range(0..population.len())])
                .collect();
            choose_model_with(matrix, &sample, &mut rng).ok()
        })
        .collect();
    let mut counts = vec![0usize; matrix.models.len()];
    for j in chosen.iter().flatten() {
        counts[*j] += 1;
    }
    let ok: usize = counts.iter().sum();
    if ok == 0 {
        return Err(Error::NoRatedModel);
    }
    Ok(InducedDistribution {
        models: matrix.models.clone(),
        rho: counts.iter().map(|&c| c as f64 / ok as f64).collect(),
        n,
        replications,
        failures: replications - ok,
        chosen,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareDistribution {
    pub measure: Measure,
    pub models: Vec<String>,
    pub rho: Vec<f64>,
    /// Stakeholder mean welfare per model.
    pub welfare: Vec<Option<f64>>,
    /// rho-weighted mean over models with defined welfare.
    pub mean: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
    /// Probability mass on models with undefined welfare.
    pub excluded_mass: f64,
}

impl WelfareDistribution {
    /// (welfare, probability) pairs renormalized over defined entries.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let kept = 1.0 - self.excluded_mass;
        self.welfare
            .iter()
            .zip(&self.rho)
            .filter_map(|(w, p)| w.map(|w| (w, p / kept)))
            .filter(|(_, p)| *p > 0.0)
            .collect()
    }
}

fn weighted_quantile(points: &[(f64, f64)], q: f64) -> f64 {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    for (v, p) in &sorted {
        acc += p;
        if acc >= q - CDF_TOL {
            return *v;
        }
    }
    sorted.last().map_or(f64::NAN, |x| x.0)
}

/// Pairs `rho` with the stakeholders' mean welfare per model.
pub fn welfare_distribution(rho: &[f64], matrix: &WelfareMatrix, stakeholders: &[usize]) -> Result<WelfareDistribution> {
    if rho.len() != matrix.models.len() {
        return Err(Error::invalid(format!(
            "rho has {} entries for {} models",
            rho.len(),
            matrix.models.len()
        )));
    }
    let welfare = matrix.column_means(stakeholders);
    let kept: f64 = rho.iter().zip(&welfare).filter(|(_, w)| w.is_some()).map(|(p, _)| p).sum();
    if welfare.iter().all(Option::is_none) || kept <= 0.0 {
        return Err(Error::invalid(
            "stakeholder welfare undefined for every model carrying probability",
        ));
    }
    let mean = rho
        .iter()
        .zip(&welfare)
        .filter_map(|(p, w)| w.map(|w| p * w))
        .sum::<f64>()
        / kept;
    let mut dist = WelfareDistribution {
        measure: matrix.measure,
        models: matrix.models.clone(),
        rho: rho.to_vec(),
        welfare,
        mean,
        q05: 0.0,
        median: 0.0,
        q95: 0.0,
        excluded_mass: 1.0 - kept,
    };
    let points = dist.points();
    dist.q05 = weighted_quantile(&points, 0.05);
    dist.median = weighted_quantile(&points, 0.5);
    dist.q95 = weighted_quantile(&points, 0.95);
    Ok(dist)
}

/// Stakeholder welfare of the model chosen in each replication; failed or
/// undefined replications are skipped.
pub fn per_replication_welfare(induced: &InducedDistribution, dist: &WelfareDistribution) -> Vec<f64> {
    induced
        .chosen
        .iter()
        .filter_map(|c| c.and_then(|j| dist.welfare[j]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dominance {
    ADominates,
    BDominates,
    Equal,
    Incomparable,
}

/// First-order stochastic dominance between discrete distributions given as
/// (value, probability) points; masses are normalized first.
pub fn fosd(a: &[(f64, f64)], b: &[(f64, f64)]) -> Dominance {
    let norm = |d: &[(f64, f64)]| -> Vec<(f64, f64)> {
        let total: f64 = d.iter().map(|x| x.1).sum();
        d.iter().map(|(v, p)| (*v, p / total)).collect()
    };
    let (a, b) = (norm(a), norm(b));
    let mut support: Vec<f64> = a.iter().chain(&b).map(|x| x.0).collect();
    support.sort_by(f64::total_cmp);
    support.dedup();
    let cdf = |d: &[(f64, f64)], t: f64| -> f64 { d.iter().filter(|x| x.0 <= t).map(|x| x.1).sum() };
    let (mut a_below, mut b_below) = (false, false);
    for t in support {
        let diff = cdf(&a, t) - cdf(&b, t);
        if diff < -CDF_TOL {
            a_below = true;
        } else if diff > CDF_TOL {
            b_below = true;
        }
    }
    match (a_below, b_below) {
        (false, false) => Dominance::Equal,
        (true, false) => Dominance::ADominates,
        (false, true) => Dominance::BDominates,
        (true, true) => Dominance::Incomparable,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeStrategy {
    #[default]
    None,
    ModelMean,
}

impl FromStr for ImputeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ImputeStrategy::None),
            "model_mean" => Ok(ImputeStrategy::ModelMean),
            _ => Err(Error::invalid(format!("unknown imputation strategy '{s}'"))),
        }
    }
}

pub fn impute_missing(matrix: &WelfareMatrix, strategy: ImputeStrategy) -> WelfareMatrix {
    let mut out = matrix.clone();
    if strategy == ImputeStrategy::None {
        return out;
    }
    let all: Vec<usize> = (0..matrix.participants.len()).collect();
    for (j, mean) in matrix.column_means(&all).into_iter().enumerate() {
        match mean {
            Some(m) => {
                for row in &mut out.values {
                    row[j].get_or_insert(m);
                }
            }
            None => log::warn!("model {} has no observed welfare; left missing", matrix.models[j]),
        }
    }
    out
}
