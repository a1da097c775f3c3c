//! Who talks about what: topic over-representation by demographic group and
//! linear-probability topic regressions with participant-clustered errors.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Attribute, Conversation, Corpus, Participant, TopicTable, PREFER_NOT_TO_SAY};
use crate::error::{Error, Result};
use crate::ols::{OlsDesign, OlsFit, VarianceKind};

pub const SIGNIFICANCE_LEVEL: f64 = 0.01;

fn topic_table(corpus: &Corpus) -> Result<&TopicTable> {
    corpus
        .topics()
        .ok_or_else(|| Error::invalid("no topic table loaded"))
}

/// Labelled conversations with their author.
fn labelled<'a>(corpus: &'a Corpus, topics: &TopicTable) -> Vec<(&'a Conversation, &'a Participant, i64)> {
    corpus
        .conversations()
        .iter()
        .filter_map(|c| {
            let t = topics.topic_of(&c.conversation_id)?;
            Some((c, corpus.participant(&c.user_id)?, t))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverRepresentation {
    pub group: String,
    pub topic: i64,
    pub topic_name: String,
    pub n_group_topic: usize,
    pub n_topic: usize,
    pub base_rate: f64,
    /// `None` when the group's base rate is zero.
    pub factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverRepresentationTable {
    pub attribute: Attribute,
    pub base_rates: BTreeMap<String, f64>,
    pub cells: Vec<OverRepresentation>,
}

/// `(N_gt / N_t) / b_g` for every group and topic, where `b_g` is the
/// group's share of all labelled prompts (one weight per prompt).
pub fn over_representation(corpus: &Corpus, group_by: Attribute) -> Result<OverRepresentationTable> {
    let topics = topic_table(corpus)?;
    let rows = labelled(corpus, topics);
    let mut group_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut cell_counts: BTreeMap<(i64, String), usize> = BTreeMap::new();
    let mut topic_counts: BTreeMap<i64, usize> = BTreeMap::new();
    for (_, p, t) in &rows {
        let g = p.attribute(group_by).to_string();
        *group_counts.entry(g.clone()).or_default() += 1;
        *cell_counts.entry((*t, g)).or_default() += 1;
        *topic_counts.entry(*t).or_default() += 1;
    }
    let total = rows.len() as f64;
    let base_rates: BTreeMap<String, f64> = group_counts
        .iter()
        .map(|(g, n)| (g.clone(), *n as f64 / total))
        .collect();
    let mut cells = Vec::new();
    for (&topic, &n_topic) in &topic_counts {
        for (group, &base_rate) in &base_rates {
            let n_group_topic = cell_counts.get(&(topic, group.clone())).copied().unwrap_or(0);
            let share = n_group_topic as f64 / n_topic as f64;
            cells.push(OverRepresentation {
                group: group.clone(),
                topic,
                topic_name: topics.name(topic),
                n_group_topic,
                n_topic,
                base_rate,
                factor: (base_rate > 0.0).then(|| share / base_rate),
            });
        }
    }
    Ok(OverRepresentationTable {
        attribute: group_by,
        base_rates,
        cells,
    })
}

/// One dummy block with its reference category given as accepted aliases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub base_aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub blocks: Vec<Block>,
    pub variance: VarianceKind,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        let block = |name: &str, aliases: &[&str]| Block {
            name: name.into(),
            base_aliases: aliases.iter().map(|s| s.to_string()).collect(),
        };
        RegressionSpec {
            blocks: vec![
                block("gender", &["Male", "Man"]),
                block("age", &["18-24 years old", "18-24"]),
                block("region", &["US", "United States", "United States of America", "USA"]),
                block("ethnicity", &["White"]),
                block("religion", &["Not religious", "No Affiliation", "No religion", "None"]),
                block("conversation_type", &["unguided"]),
            ],
            variance: VarianceKind::Cr1,
        }
    }
}

fn block_value(block: &str, p: &Participant, c: &Conversation) -> Result<String> {
    if block == "conversation_type" {
        return Ok(c.conversation_type.label().to_string());
    }
    let attr: Attribute = block.parse()?;
    Ok(p.attribute(attr).to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub block: String,
    pub group: String,
    pub topic: i64,
    pub estimate: f64,
    pub se: f64,
    pub p: f64,
    pub sig99: bool,
    /// False for intercepts and "Prefer not to say" controls, which are
    /// estimated but left out of default reports.
    pub reported: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRegression {
    pub topic: i64,
    pub topic_name: String,
    pub fit: OlsFit,
    pub coefficients: Vec<Coefficient>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub tested: usize,
    pub significant: usize,
    pub share: f64,
}

impl Tally {
    fn of<'a>(coefs: impl Iterator<Item = &'a Coefficient>) -> Tally {
        let (mut tested, mut significant) = (0, 0);
        for c in coefs {
            tested += 1;
            significant += c.sig99 as usize;
        }
        Tally {
            tested,
            significant,
            share: if tested > 0 { significant as f64 / tested as f64 } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    /// Reference category used per block.
    pub bases: BTreeMap<String, String>,
    pub topics: Vec<TopicRegression>,
    /// Over reported non-intercept coefficients.
    pub tally: Tally,
    /// Same, with intercepts counted as tested coefficients.
    pub tally_with_intercepts: Tally,
}

pub const INTERCEPT: &str = "(intercept)";

/// One linear-probability regression per topic (outliers included) over
/// labelled conversations: y = 1 when the conversation has that topic.
pub fn topic_regression(corpus: &Corpus, spec: &RegressionSpec) -> Result<RegressionReport> {
    let topics = topic_table(corpus)?;
    let rows = labelled(corpus, topics);
    if rows.is_empty() {
        return Err(Error::invalid("no labelled conversations"));
    }
    let mut values: Vec<Vec<String>> = Vec::with_capacity(spec.blocks.len());
    let mut columns: Vec<(String, String)> = Vec::new();
    let mut bases = BTreeMap::new();
    for block in &spec.blocks {
        let vals: Vec<String> = rows
            .iter()
            .map(|(c, p, _)| block_value(&block.name, p, c))
            .collect::<Result<_>>()?;
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for v in &vals {
            *freq.entry(v.as_str()).or_default() += 1;
        }
        let base = block
            .base_aliases
            .iter()
            .find(|a| freq.contains_key(a.as_str()))
            .cloned()
            .unwrap_or_else(|| {
                // Most frequent level, first alphabetically among equals.
                let (level, _) = freq
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .expect("non-empty block");
                log::warn!(
                    "block {}: none of {:?} present; using '{level}' as base",
                    block.name,
                    block.base_aliases
                );
                level.to_string()
            });
        for level in freq.keys().filter(|l| **l != base) {
            columns.push((block.name.clone(), level.to_string()));
        }
        bases.insert(block.name.clone(), base);
        values.push(vals);
    }
    let block_index: BTreeMap<&str, usize> = spec
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| (b.name.as_str(), i))
        .collect();
    let n = rows.len();
    let k = columns.len() + 1;
    let x = DMatrix::from_fn(n, k, |i, j| {
        if j == 0 {
            return 1.0;
        }
        let (block, level) = &columns[j - 1];
        (values[block_index[block.as_str()]][i] == *level) as u8 as f64
    });
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(columns.iter().map(|(b, l)| format!("{b}={l}")));
    let clusters: Vec<String> = rows.iter().map(|(c, _, _)| c.user_id.clone()).collect();
    let design = OlsDesign::new(x, &names, Some(&clusters))?;

    let topic_ids: Vec<i64> = rows.iter().map(|r| r.2).collect::<BTreeSet<_>>().into_iter().collect();
    let fits: Vec<TopicRegression> = topic_ids
        .par_iter()
        .map(|&topic| {
            let y: Vec<f64> = rows.iter().map(|r| (r.2 == topic) as u8 as f64).collect();
            let fit = design.fit(&y, spec.variance)?;
            let coefficients = fit
                .names
                .iter()
                .enumerate()
                .map(|(j, name)| {
                    let (block, group) = match name.split_once('=') {
                        Some((b, g)) => (b.to_string(), g.to_string()),
                        None => (INTERCEPT.to_string(), String::new()),
                    };
                    Coefficient {
                        reported: block != INTERCEPT && group != PREFER_NOT_TO_SAY,
                        block,
                        group,
                        topic,
                        estimate: fit.beta[j],
                        se: fit.se[j],
                        p: fit.p[j],
                        sig99: fit.p[j] < SIGNIFICANCE_LEVEL,
                    }
                })
                .collect();
            Ok(TopicRegression {
                topic,
                topic_name: topics.name(topic),
                fit,
                coefficients,
            })
        })
        .collect::<Result<_>>()?;
    let all = || fits.iter().flat_map(|f| f.coefficients.iter());
    Ok(RegressionReport {
        bases,
        tally: Tally::of(all().filter(|c| c.reported)),
        tally_with_intercepts: Tally::of(all().filter(|c| c.reported || c.block == INTERCEPT)),
        topics: fits,
    })
}
