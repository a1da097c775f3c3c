//! Bootstrap and subsample estimates of leaderboard variability.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{battle_leaderboard, leaderboard, rank_centrality, Leaderboard, Method, MethodParams};
use crate::corpus::{filter_balanced, Attribute, BalanceMode, Corpus};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, replication_rng};
use crate::scoring::{battles_from_interactions, rated_interactions, Battle, RatedInteraction, TurnScope};
use crate::stats::quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleUnit {
    /// Cluster bootstrap: a drawn participant brings all of their interactions.
    #[default]
    Participant,
    /// Individual battles; only battle-based methods apply.
    Battle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub unit: SampleUnit,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub with_replacement: bool,
    pub quantiles: (f64, f64),
}

impl SamplePlan {
    pub fn new(n: usize, replications: usize, seed: u64) -> SamplePlan {
        SamplePlan {
            unit: SampleUnit::Participant,
            n,
            replications,
            seed,
            with_replacement: true,
            quantiles: (0.05, 0.95),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.replications == 0 {
            return Err(Error::invalid(format!(
                "sample plan needs n >= 1 and replications >= 1, got n={} replications={}",
                self.n, self.replications
            )));
        }
        let (lo, hi) = self.quantiles;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::invalid(format!("invalid quantile pair ({lo}, {hi})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDistribution {
    pub name: String,
    /// Replications in which the model appeared on the leaderboard.
    pub n_present: usize,
    pub lo: f64,
    pub median: f64,
    pub hi: f64,
    /// Competition rank (1 + number of strictly better models) -> count.
    pub rank_histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub method: Method,
    pub plan: SamplePlan,
    pub models: Vec<ModelDistribution>,
    pub failures: Vec<ReplicationFailure>,
    /// Per replication, each model's score; `None` for failed replications.
    pub replications: Vec<Option<BTreeMap<String, f64>>>,
}

impl BootstrapResult {
    pub fn n_failed(&self) -> usize {
        self.failures.len()
    }

    /// Share of successful replications in which `model` ranked first.
    pub fn first_place_share(&self, model: &str) -> f64 {
        let ok = self.replications.len() - self.failures.len();
        let firsts = self
            .models
            .iter()
            .find(|m| m.name == model)
            .and_then(|m| m.rank_histogram.get(&1).copied())
            .unwrap_or(0);
        firsts as f64 / ok as f64
    }
}

fn competition_ranks(board: &Leaderboard) -> BTreeMap<String, usize> {
    board
        .models
        .iter()
        .map(|s| {
            let better = board.models.iter().filter(|o| o.rank < s.rank).count();
            (s.name.clone(), better + 1)
        })
        .collect()
}

/// Bootstraps `method` over participants (or battles) of the corpus.
pub fn bootstrap_leaderboard(
    corpus: &Corpus,
    plan: &SamplePlan,
    method: Method,
    params: &MethodParams,
) -> Result<BootstrapResult> {
    bootstrap_interactions(&rated_interactions(corpus, params.scope), plan, method, params)
}

/// Bootstrap over already-extracted interactions. Participants are the
/// distinct `user_id`s in order of first appearance.
pub fn bootstrap_interactions(
    interactions: &[RatedInteraction],
    plan: &SamplePlan,
    method: Method,
    params: &MethodParams,
) -> Result<BootstrapResult> {
    plan.validate()?;
    let outcomes: Vec<Result<Leaderboard>> = match plan.unit {
        SampleUnit::Participant => {
            let mut order: Vec<&str> = Vec::new();
            let mut by_user: HashMap<&str, Vec<&RatedInteraction>> = HashMap::new();
            for it in interactions {
                by_user
                    .entry(it.user_id.as_str())
                    .or_insert_with(|| {
                        order.push(it.user_id.as_str());
                        Vec::new()
                    })
                    .push(it);
            }
            if !plan.with_replacement && plan.n > order.len() {
                return Err(Error::invalid(format!(
                    "cannot draw {} of {} participants without replacement",
                    plan.n,
                    order.len()
                )));
            }
            if order.is_empty() {
                return Err(Error::NoBattles);
            }
            (0..plan.replications)
                .into_par_iter()
                .map(|r| {
                    let picks = draw(plan, order.len(), r);
                    let sample: Vec<RatedInteraction> = picks
                        .into_iter()
                        .flat_map(|i| by_user[order[i]].iter().map(|it| (*it).clone()))
                        .collect();
                    leaderboard(&sample, method, params)
                })
                .collect()
        }
        SampleUnit::Battle => {
            let scoped: Vec<RatedInteraction> = interactions
                .iter()
                .filter(|it| params.scope == TurnScope::All || it.turn == 0)
                .cloned()
                .collect();
            let battles = battles_from_interactions(&scoped, params.tie_threshold);
            if battles.is_empty() {
                return Err(Error::NoBattles);
            }
            if !plan.with_replacement && plan.n > battles.len() {
                return Err(Error::invalid(format!(
                    "cannot draw {} of {} battles without replacement",
                    plan.n,
                    battles.len()
                )));
            }
            (0..plan.replications)
                .into_par_iter()
                .map(|r| {
                    let sample: Vec<Battle> = draw(plan, battles.len(), r)
                        .into_iter()
                        .map(|i| battles[i].clone())
                        .collect();
                    battle_leaderboard(&sample, method, params)
                })
                .collect()
        }
    };
    Ok(summarize(method, plan, outcomes))
}

/// Indices for replication `r`. Without replacement the draw is returned in
/// ascending order so that a full draw reproduces the input exactly.
fn draw(plan: &SamplePlan, population: usize, r: usize) -> Vec<usize> {
    let mut rng = replication_rng(plan.seed, r as u64);
    if plan.with_replacement {
        (0..plan.n).map(|_| rng.random_range(0..population)).collect()
    } else {
        let mut picks = index::sample(&mut rng, population, plan.n).into_vec();
        picks.sort_unstable();
        picks
    }
}

fn summarize(method: Method, plan: &SamplePlan, outcomes: Vec<Result<Leaderboard>>) -> BootstrapResult {
    let mut failures = Vec::new();
    let mut replications = Vec::with_capacity(outcomes.len());
    let mut scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut hist: BTreeMap<String, BTreeMap<usize, usize>> = BTreeMap::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(board) => {
                for (name, rank) in competition_ranks(&board) {
                    *hist.entry(name).or_default().entry(rank).or_default() += 1;
                }
                for s in &board.models {
                    scores.entry(s.name.clone()).or_default().push(s.score);
                }
                replications.push(Some(board.scores()));
            }
            Err(e) => {
                failures.push(ReplicationFailure {
                    replication: r,
                    error: e.to_string(),
                });
                replications.push(None);
            }
        }
    }
    let (qlo, qhi) = plan.quantiles;
    let models = scores
        .into_iter()
        .map(|(name, values)| ModelDistribution {
            n_present: values.len(),
            lo: quantile(&values, qlo).unwrap_or(f64::NAN),
            median: quantile(&values, 0.5).unwrap_or(f64::NAN),
            hi: quantile(&values, qhi).unwrap_or(f64::NAN),
            rank_histogram: hist.remove(&name).unwrap_or_default(),
            name,
        })
        .collect();
    if !failures.is_empty() {
        log::warn!(
            "{} of {} replications failed",
            failures.len(),
            plan.replications
        );
    }
    BootstrapResult {
        method,
        plan: plan.clone(),
        models,
        failures,
        replications,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Attribute(Attribute),
    ConversationType,
    /// The whole population as a single group.
    All,
}

impl FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(GroupKey::All),
            "conversation_type" | "type" => Ok(GroupKey::ConversationType),
            other => other.parse().map(GroupKey::Attribute),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOptions {
    /// Minimum distinct participants for a group to be ranked.
    pub min_group_size: usize,
    /// When set, restrict to the recomputed balanced subset under this seed
    /// before grouping.
    pub rebalance_seed: Option<u64>,
}

impl Default for GroupOptions {
    fn default() -> Self {
        GroupOptions {
            min_group_size: 1,
            rebalance_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBoard {
    pub group: String,
    pub n_participants: usize,
    pub leaderboard: Leaderboard,
    /// Overall rank minus group rank: positive means the model climbs.
    pub rank_delta: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedGroup {
    pub group: String,
    pub n_participants: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub overall: Leaderboard,
    pub groups: Vec<GroupBoard>,
    pub excluded: Vec<ExcludedGroup>,
}

pub fn group_leaderboards(
    corpus: &Corpus,
    key: GroupKey,
    method: Method,
    params: &MethodParams,
    options: &GroupOptions,
) -> Result<GroupReport> {
    let balanced;
    let corpus = match options.rebalance_seed {
        Some(seed) => {
            balanced = filter_balanced(corpus, BalanceMode::Recompute, seed);
            &balanced
        }
        None => corpus,
    };
    let all = rated_interactions(corpus, params.scope);
    let overall = leaderboard(&all, method, params)?;
    let overall_ranks = overall.ranks();

    let group_of = |it: &RatedInteraction| -> String {
        match key {
            GroupKey::All => "all".to_string(),
            GroupKey::Attribute(a) => corpus
                .participant(&it.user_id)
                .map(|p| p.attribute(a).to_string())
                .unwrap_or_default(),
            GroupKey::ConversationType => corpus
                .conversation(&it.conversation_id)
                .map(|c| c.conversation_type.label().to_string())
                .unwrap_or_default(),
        }
    };
    let mut members: BTreeMap<String, (Vec<RatedInteraction>, BTreeSet<String>)> = BTreeMap::new();
    for it in &all {
        let e = members.entry(group_of(it)).or_default();
        e.1.insert(it.user_id.clone());
        e.0.push(it.clone());
    }
    let mut groups = Vec::new();
    let mut excluded = Vec::new();
    for (group, (its, users)) in members {
        let n_participants = users.len();
        if n_participants < options.min_group_size {
            excluded.push(ExcludedGroup {
                group,
                n_participants,
                reason: format!("fewer than {} participants", options.min_group_size),
            });
            continue;
        }
        match leaderboard(&its, method, params) {
            Ok(board) => {
                let rank_delta = board
                    .models
                    .iter()
                    .filter_map(|s| overall_ranks.get(&s.name).map(|o| (s.name.clone(), o - s.rank)))
                    .collect();
                groups.push(GroupBoard {
                    group,
                    n_participants,
                    leaderboard: board,
                    rank_delta,
                });
            }
            Err(e) => excluded.push(ExcludedGroup {
                group,
                n_participants,
                reason: e.to_string(),
            }),
        }
    }
    Ok(GroupReport {
        overall,
        groups,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInterval {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvenPairComparison {
    pub shared_models: Vec<String>,
    pub shared_pairs: Vec<(String, String)>,
    pub battles_per_replication: usize,
    pub a: Vec<ModelInterval>,
    pub b: Vec<ModelInterval>,
    /// Models whose intervals do not overlap across the two datasets.
    pub flagged: Vec<String>,
    pub failures_a: Vec<ReplicationFailure>,
    pub failures_b: Vec<ReplicationFailure>,
}

/// Compares two battle sets on equal footing: every shared model pair gets
/// `slots_per_pair` battles drawn with replacement from each dataset, and
/// rank centrality is recomputed per replication.
pub fn even_pair_comparison(
    battles_a: &[Battle],
    battles_b: &[Battle],
    slots_per_pair: usize,
    replications: usize,
    seed: u64,
    alpha: f64,
) -> Result<EvenPairComparison> {
    if slots_per_pair == 0 || replications == 0 {
        return Err(Error::invalid("slots_per_pair and replications must be >= 1"));
    }
    let by_pair = |bs: &[Battle]| {
        let mut out: BTreeMap<(String, String), Vec<Battle>> = BTreeMap::new();
        for b in bs {
            out.entry((b.model_a.clone(), b.model_b.clone()))
                .or_default()
                .push(b.clone());
        }
        out
    };
    let pairs_a = by_pair(battles_a);
    let pairs_b = by_pair(battles_b);
    let models_of = |p: &BTreeMap<(String, String), Vec<Battle>>| -> BTreeSet<String> {
        p.keys().flat_map(|(a, b)| [a.clone(), b.clone()]).collect()
    };
    let shared_models: Vec<String> = models_of(&pairs_a)
        .intersection(&models_of(&pairs_b))
        .cloned()
        .collect();
    if shared_models.len() < 2 {
        return Err(Error::invalid(format!(
            "even-pair comparison needs at least 2 shared models, got {}",
            shared_models.len()
        )));
    }
    let shared_pairs: Vec<(String, String)> = pairs_a
        .keys()
        .filter(|k| pairs_b.contains_key(*k))
        .cloned()
        .collect();

    let run = |pairs: &BTreeMap<(String, String), Vec<Battle>>, label: &[u8]| {
        let outcomes: Vec<Result<Leaderboard>> = (0..replications)
            .into_par_iter()
            .map(|r| {
                let mut key = label.to_vec();
                key.extend_from_slice(&(r as u64).to_le_bytes());
                let mut rng = keyed_rng(seed, &key);
                let mut sample = Vec::with_capacity(slots_per_pair * shared_pairs.len());
                for pair in &shared_pairs {
                    let pool = &pairs[pair];
                    for _ in 0..slots_per_pair {
                        sample.push(pool[rng.random_range(0..pool.len())].clone());
                    }
                }
                rank_centrality(&sample, alpha, Some(&shared_models))
            })
            .collect();
        let mut plan = SamplePlan::new(slots_per_pair, replications, seed);
        plan.unit = SampleUnit::Battle;
        summarize(Method::RankCentrality, &plan, outcomes)
    };
    let result_a = run(&pairs_a, b"a");
    let result_b = run(&pairs_b, b"b");
    let intervals = |r: &BootstrapResult| -> Vec<ModelInterval> {
        r.models
            .iter()
            .map(|m| ModelInterval {
                name: m.name.clone(),
                lo: m.lo,
                hi: m.hi,
            })
            .collect()
    };
    let a = intervals(&result_a);
    let b = intervals(&result_b);
    let flagged = a
        .iter()
        .filter_map(|ia| {
            let ib = b.iter().find(|ib| ib.name == ia.name)?;
            (ia.hi < ib.lo || ib.hi < ia.lo).then(|| ia.name.clone())
        })
        .collect();
    Ok(EvenPairComparison {
        shared_models,
        battles_per_replication: slots_per_pair * shared_pairs.len(),
        shared_pairs,
        a,
        b,
        flagged,
        failures_a: result_a.failures,
        failures_b: result_b.failures,
    })
}
