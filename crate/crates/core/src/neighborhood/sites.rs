use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::algorithm1_labels;
use crate::corpus::{Corpus, EmbeddingTable};
use crate::error::Result;
use crate::stats::{mean, quantile, std_dev};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteMember {
    pub utterance_id: String,
    pub conversation_id: String,
    pub user_id: String,
    pub model: String,
    pub provider: Option<String>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSite {
    pub id: usize,
    pub prompt_neighbourhood: usize,
    pub members: Vec<SiteMember>,
    /// Max minus min score across members.
    pub score_range: f64,
    pub n_participants: usize,
    pub n_models: usize,
    pub n_providers: usize,
}

impl FieldSite {
    pub fn same_participant(&self) -> bool {
        self.n_participants == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeSummary {
    pub sites: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single site.
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl RangeSummary {
    fn of(values: &[f64]) -> Option<RangeSummary> {
        Some(RangeSummary {
            sites: values.len(),
            mean: mean(values)?,
            std: std_dev(values, 1).unwrap_or(0.0),
            min: quantile(values, 0.0)?,
            q1: quantile(values, 0.25)?,
            median: quantile(values, 0.5)?,
            q3: quantile(values, 0.75)?,
            max: quantile(values, 1.0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSiteReport {
    pub tau: f64,
    pub sites: Vec<FieldSite>,
    /// Opening-turn utterances without a prompt or response embedding.
    pub skipped_missing_embedding: usize,
    pub same_participant: Option<RangeSummary>,
    pub different_participant: Option<RangeSummary>,
}

/// Field sites over opening-turn utterances: groups of at least two
/// utterances whose prompts fall in one prompt neighbourhood and whose
/// responses fall in one response neighbourhood.
///
/// Response neighbourhoods are computed separately inside each prompt
/// neighbourhood. Prompt embeddings are looked up by interaction id, then by
/// conversation id; response embeddings by utterance id.
pub fn field_sites(
    corpus: &Corpus,
    prompts: &EmbeddingTable,
    responses: &EmbeddingTable,
    tau: f64,
) -> Result<FieldSiteReport> {
    let mut members: Vec<(String, SiteMember)> = Vec::new();
    let mut skipped = 0;
    for c in corpus.conversations() {
        let Some(opener) = c.opener() else { continue };
        let prompt_key = [&opener.interaction_id, &c.conversation_id]
            .into_iter()
            .find(|k| prompts.get(k).is_some());
        for r in &opener.responses {
            match prompt_key {
                Some(pk) if responses.get(&r.utterance_id).is_some() => members.push((
                    pk.clone(),
                    SiteMember {
                        utterance_id: r.utterance_id.clone(),
                        conversation_id: c.conversation_id.clone(),
                        user_id: c.user_id.clone(),
                        model: r.model_name.clone(),
                        provider: r.model_provider.clone(),
                        score: r.score,
                    },
                )),
                _ => skipped += 1,
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} opening-turn utterances lack embeddings and were skipped");
    }

    let used: HashSet<&str> = members.iter().map(|(k, _)| k.as_str()).collect();
    let prompt_table = prompts.retain(|k| used.contains(k));
    let prompt_labels = algorithm1_labels(&prompt_table.keys, &prompt_table.vectors, tau)?;
    let label_of: BTreeMap<&str, usize> = prompt_table
        .keys
        .iter()
        .map(String::as_str)
        .zip(prompt_labels)
        .collect();
    let mut by_prompt_nb: BTreeMap<usize, Vec<&SiteMember>> = BTreeMap::new();
    for (pk, m) in &members {
        by_prompt_nb.entry(label_of[pk.as_str()]).or_default().push(m);
    }

    let mut sites = Vec::new();
    for (prompt_nb, group) in by_prompt_nb {
        if group.len() < 2 {
            continue;
        }
        let keys: Vec<String> = group.iter().map(|m| m.utterance_id.clone()).collect();
        let vectors: Vec<Vec<f64>> = keys
            .iter()
            .map(|k| responses.get(k).expect("filtered above").to_vec())
            .collect();
        let labels = algorithm1_labels(&keys, &vectors, tau)?;
        let mut by_label: BTreeMap<usize, Vec<SiteMember>> = BTreeMap::new();
        for (m, l) in group.into_iter().zip(labels) {
            by_label.entry(l).or_default().push(m.clone());
        }
        for (_, site_members) in by_label.into_iter().filter(|(_, v)| v.len() >= 2) {
            let scores: Vec<f64> = site_members.iter().map(|m| m.score).collect();
            let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
            let count = |f: &dyn Fn(&SiteMember) -> Option<&str>| {
                site_members.iter().filter_map(f).collect::<BTreeSet<_>>().len()
            };
            sites.push(FieldSite {
                id: sites.len(),
                prompt_neighbourhood: prompt_nb,
                score_range: hi - lo,
                n_participants: count(&|m| Some(m.user_id.as_str())),
                n_models: count(&|m| Some(m.model.as_str())),
                n_providers: count(&|m| m.provider.as_deref()),
                members: site_members,
            });
        }
    }
    let ranges = |same: bool| -> Vec<f64> {
        sites
            .iter()
            .filter(|s| s.same_participant() == same)
            .map(|s| s.score_range)
            .collect()
    };
    Ok(FieldSiteReport {
        tau,
        same_participant: RangeSummary::of(&ranges(true)),
        different_participant: RangeSummary::of(&ranges(false)),
        sites,
        skipped_missing_embedding: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::*;
    use crate::corpus::{ConversationType, Participant};

    fn corpus() -> Corpus {
        let ps: Vec<Participant> = vec![participant("u1", "Male"), participant("u2", "Female")];
        let convs = vec![
            conversation("c1", "u1", ConversationType::Unguided, &[("a", 60.0), ("b", 20.0)]),
            conversation("c2", "u1", ConversationType::Unguided, &[("a", 70.0), ("c", 30.0)]),
            conversation("c3", "u2", ConversationType::Unguided, &[("d", 10.0)]),
        ];
        Corpus::new(ps, convs).unwrap()
    }

    fn table(entries: &[(&str, Vec<f64>)]) -> EmbeddingTable {
        EmbeddingTable::new(entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()).unwrap()
    }

    #[test]
    fn duplicate_prompt_and_response_form_one_site() {
        let prompts = table(&[
            ("c1", vec![1.0, 0.0]),
            ("c2", vec![1.0, 0.0]),
            ("c3", vec![0.0, 1.0]),
        ]);
        let responses = table(&[
            ("c1-0-0", vec![1.0, 1.0, 0.0]),
            ("c1-0-1", vec![0.0, 0.0, 1.0]),
            ("c2-0-0", vec![1.0, 1.0, 0.0]),
            ("c2-0-1", vec![1.0, -1.0, 0.0]),
        ]);
        let report = field_sites(&corpus(), &prompts, &responses, 0.05).unwrap();
        assert_eq!(report.sites.len(), 1);
        let site = &report.sites[0];
        let ids: Vec<&str> = site.members.iter().map(|m| m.utterance_id.as_str()).collect();
        assert_eq!(ids, vec!["c1-0-0", "c2-0-0"]);
        assert_eq!(site.score_range, 10.0);
        assert!(site.same_participant());
        assert_eq!(report.same_participant.as_ref().unwrap().mean, 10.0);
        assert!(report.different_participant.is_none());
        // c3's single response has no embedding.
        assert_eq!(report.skipped_missing_embedding, 1);
    }

    #[test]
    fn distinct_embeddings_give_no_sites() {
        let prompts = table(&[("c1", vec![1.0, 0.0, 0.0]), ("c2", vec![0.0, 1.0, 0.0]), ("c3", vec![0.0, 0.0, 1.0])]);
        let responses = table(&[
            ("c1-0-0", vec![1.0, 0.0]),
            ("c1-0-1", vec![0.0, 1.0]),
            ("c2-0-0", vec![1.0, 0.0]),
            ("c2-0-1", vec![0.0, 1.0]),
            ("c3-0-0", vec![1.0, 1.0]),
        ]);
        let report = field_sites(&corpus(), &prompts, &responses, 0.01).unwrap();
        assert!(report.sites.is_empty());
    }
}
