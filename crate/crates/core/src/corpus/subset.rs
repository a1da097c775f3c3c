use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{Conversation, Corpus};
use crate::error::{Error, Result};
use crate::rng::keyed_rng;

/// How [`filter_balanced`] decides membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMode {
    /// Use the released `included_in_balanced_subset` flags when any
    /// conversation carries one, otherwise recompute.
    #[default]
    Auto,
    Flag,
    Recompute,
}

/// Keeps participants with at least one conversation of every type, then
/// either one or two conversations per type for each of them (3 or 6 total),
/// whichever is the larger balanced set. Surplus conversations are dropped
/// uniformly at random under `seed`.
pub fn filter_balanced(corpus: &Corpus, mode: BalanceMode, seed: u64) -> Corpus {
    let has_flags = corpus
        .conversations()
        .iter()
        .any(|c| c.included_in_balanced_subset.is_some());
    let use_flags = match mode {
        BalanceMode::Flag => true,
        BalanceMode::Recompute => false,
        BalanceMode::Auto => has_flags,
    };
    if use_flags {
        let kept: HashSet<&str> = corpus
            .conversations()
            .iter()
            .filter(|c| c.included_in_balanced_subset == Some(true))
            .map(|c| c.user_id.as_str())
            .collect();
        return corpus.restrict(
            |p| kept.contains(p.user_id.as_str()),
            |c| c.included_in_balanced_subset == Some(true),
        );
    }

    let mut keep: HashSet<String> = HashSet::new();
    for (user, convs) in corpus.conversations_by_participant() {
        let mut by_type: [Vec<&Conversation>; 3] = Default::default();
        for c in convs {
            by_type[c.conversation_type.index()].push(c);
        }
        let min = by_type.iter().map(Vec::len).min().unwrap_or(0);
        if min == 0 {
            continue;
        }
        let per_type = if min >= 2 { 2 } else { 1 };
        let mut rng = keyed_rng(seed, user.as_bytes());
        for group in &by_type {
            for i in index::sample(&mut rng, group.len(), per_type) {
                keep.insert(group[i].conversation_id.clone());
            }
        }
    }
    let users: HashSet<&str> = corpus
        .conversations()
        .iter()
        .filter(|c| keep.contains(&c.conversation_id))
        .map(|c| c.user_id.as_str())
        .collect();
    corpus.restrict(
        |p| users.contains(p.user_id.as_str()),
        |c| keep.contains(&c.conversation_id),
    )
}

/// Expected population share of one age x gender x ethnicity intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusCell {
    pub age: String,
    pub gender: String,
    pub ethnicity: String,
    pub proportion: f64,
}

pub type CensusTable = Vec<CensusCell>;

/// Resamples participants towards census proportions: each cell receives
/// `round(target_n * proportion)` members drawn without replacement, or all
/// of its members when it has too few.
///
/// Quotas are trimmed (largest rounding excess first) when rounding would
/// push the total above `target_n`.
pub fn census_rebalance(
    corpus: &Corpus,
    census: &[CensusCell],
    target_n: i64,
    seed: u64,
) -> Result<Corpus> {
    if target_n <= 0 {
        return Err(Error::invalid(format!("target_n must be positive, got {target_n}")));
    }
    for cell in census {
        if !(0.0..=1.0).contains(&cell.proportion) {
            return Err(Error::invalid(format!(
                "census proportion {} for ({}, {}, {}) outside [0, 1]",
                cell.proportion, cell.age, cell.gender, cell.ethnicity
            )));
        }
    }
    let target = target_n as f64;
    let mut quotas: Vec<usize> = census
        .iter()
        .map(|c| (target * c.proportion).round() as usize)
        .collect();
    let mut total: usize = quotas.iter().sum();
    if total > target_n as usize {
        let mut order: Vec<usize> = (0..census.len()).collect();
        let excess = |i: usize| quotas[i] as f64 - target * census[i].proportion;
        order.sort_by(|&a, &b| excess(b).total_cmp(&excess(a)).then(a.cmp(&b)));
        for i in order.into_iter().cycle() {
            if total <= target_n as usize {
                break;
            }
            if quotas[i] > 0 {
                quotas[i] -= 1;
                total -= 1;
            }
        }
    }

    let mut chosen: HashSet<String> = HashSet::new();
    for (ci, (cell, &quota)) in census.iter().zip(&quotas).enumerate() {
        let members: Vec<&str> = corpus
            .participants()
            .iter()
            .filter(|p| {
                p.age_bucket == cell.age && p.gender == cell.gender && p.ethnicity_group == cell.ethnicity
            })
            .map(|p| p.user_id.as_str())
            .collect();
        if members.len() <= quota {
            chosen.extend(members.iter().map(|s| s.to_string()));
        } else {
            let mut rng = keyed_rng(seed, &(ci as u64).to_le_bytes());
            for i in index::sample(&mut rng, members.len(), quota) {
                chosen.insert(members[i].to_string());
            }
        }
    }
    Ok(corpus.restrict(|p| chosen.contains(&p.user_id), |_| true))
}

/// Per-type conversation counts for every participant, used by tests and the
/// `validate` summary.
pub fn type_counts(corpus: &Corpus) -> BTreeMap<String, [usize; 3]> {
    let mut out: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for c in corpus.conversations() {
        out.entry(c.user_id.clone()).or_default()[c.conversation_type.index()] += 1;
    }
    out
}
