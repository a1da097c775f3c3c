//! Single-link neighbourhoods over embeddings under a cosine-distance
//! threshold, and the diversity and fixed-context analyses built on them.

mod entropy;
mod sites;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use entropy::{
    entropy_bits, intersectional_entropy, summarize_entropy, AttributeEntropy, EntropyConfig, EntropyReport,
    EntropySimulator, EntropySummary,
};
pub use sites::{field_sites, FieldSite, FieldSiteReport, RangeSummary, SiteMember};

use crate::corpus::{Corpus, EmbeddingTable};
use crate::error::{Error, Result};

/// Rows per parallel block of the pairwise distance pass.
const ROW_BLOCK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbourhood {
    pub id: usize,
    pub members: Vec<String>,
    /// Positions of the members in the embedding table.
    pub indices: Vec<usize>,
    /// One entry per member prompt; repeated authors are kept.
    pub authors: Vec<String>,
}

impl Neighbourhood {
    pub fn k(&self) -> usize {
        self.members.len()
    }

    /// True when every prompt comes from the same participant.
    pub fn is_ego(&self) -> bool {
        self.authors.windows(2).all(|w| w[0] == w[1])
    }
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

fn unit_vectors(keys: &[String], vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    keys.iter()
        .zip(vectors)
        .map(|(key, v)| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroVector { key: key.clone() });
            }
            Ok(v.iter().map(|x| x / norm).collect())
        })
        .collect()
}

/// Neighbourhood label per vector, following the merge procedure literally:
/// every vector starts in its own neighbourhood, and for each pair `j < i`
/// within `tau` the neighbourhood of `i` is merged into that of `j`. Labels
/// are then renumbered 0.. in order of each neighbourhood's first member.
pub fn algorithm1_labels(keys: &[String], vectors: &[Vec<f64>], tau: f64) -> Result<Vec<usize>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("tau must lie in (0, 1), got {tau}")));
    }
    let unit = unit_vectors(keys, vectors)?;
    let n = unit.len();
    let mut labels: Vec<usize> = (0..n).collect();
    for start in (0..n).step_by(ROW_BLOCK) {
        let end = (start + ROW_BLOCK).min(n);
        let edges: Vec<Vec<usize>> = (start..end)
            .into_par_iter()
            .map(|i| {
                (0..i)
                    .filter(|&j| {
                        let dot: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                        1.0 - dot <= tau
                    })
                    .collect()
            })
            .collect();
        for (offset, js) in edges.into_iter().enumerate() {
            let i = start + offset;
            for j in js {
                let (from, to) = (labels[i], labels[j]);
                if from != to {
                    for l in labels.iter_mut() {
                        if *l == from {
                            *l = to;
                        }
                    }
                }
            }
        }
    }
    let mut renumber = std::collections::HashMap::new();
    Ok(labels
        .into_iter()
        .map(|l| {
            let next = renumber.len();
            *renumber.entry(l).or_insert(next)
        })
        .collect())
}

/// Neighbourhoods of an embedding table, ordered by id. Authors are filled
/// from `corpus` when given (prompt keys resolve to their conversation).
pub fn local_neighbourhoods(
    embeddings: &EmbeddingTable,
    tau: f64,
    corpus: Option<&Corpus>,
) -> Result<Vec<Neighbourhood>> {
    let labels = algorithm1_labels(&embeddings.keys, &embeddings.vectors, tau)?;
    let count = labels.iter().max().map_or(0, |m| m + 1);
    let mut out: Vec<Neighbourhood> = (0..count)
        .map(|id| Neighbourhood {
            id,
            members: Vec::new(),
            indices: Vec::new(),
            authors: Vec::new(),
        })
        .collect();
    for (i, l) in labels.into_iter().enumerate() {
        let key = &embeddings.keys[i];
        let nb = &mut out[l];
        nb.members.push(key.clone());
        nb.indices.push(i);
        if let Some(corpus) = corpus {
            let author = corpus
                .resolve_prompt_key(key)
                .map(|c| c.user_id.clone())
                .ok_or_else(|| Error::DanglingReference {
                    kind: "embedding key",
                    ids: vec![key.clone()],
                })?;
            nb.authors.push(author);
        }
    }
    Ok(out)
}

/// Drops singletons and neighbourhoods whose prompts all share one author.
pub fn prune(neighbourhoods: Vec<Neighbourhood>) -> Vec<Neighbourhood> {
    neighbourhoods
        .into_iter()
        .filter(|n| n.k() >= 2 && !n.is_ego())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("k{i}")).collect()
    }

    #[test]
    fn identical_vectors_join() {
        let v = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        assert_eq!(algorithm1_labels(&keys(2), &v, 0.05).unwrap(), vec![0, 0]);
    }

    #[test]
    fn orthogonal_vectors_stay_apart() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(algorithm1_labels(&keys(2), &v, 0.5).unwrap(), vec![0, 1]);
    }

    #[test]
    fn single_link_chain() {
        // Angles chosen so that d(a,b) = d(b,c) = 0.1 and d(a,c) > 0.125.
        let theta = (0.9f64).acos();
        let v: Vec<Vec<f64>> = [0.0, theta, 2.0 * theta]
            .iter()
            .map(|t| vec![t.cos(), t.sin()])
            .collect();
        assert!(cosine_distance(&v[0], &v[2]) > 0.125);
        assert_eq!(algorithm1_labels(&keys(3), &v, 0.125).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn labels_follow_first_member() {
        let v = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(algorithm1_labels(&keys(3), &v, 0.05).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn zero_vector_named() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        match algorithm1_labels(&keys(2), &v, 0.1) {
            Err(Error::ZeroVector { key }) => assert_eq!(key, "k1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tau_bounds() {
        let v = vec![vec![1.0]];
        assert!(algorithm1_labels(&keys(1), &v, 0.0).is_err());
        assert!(algorithm1_labels(&keys(1), &v, 1.0).is_err());
    }

    #[test]
    fn prune_drops_singletons_and_egos() {
        let nb = |members: &[&str], authors: &[&str]| Neighbourhood {
            id: 0,
            members: members.iter().map(|s| s.to_string()).collect(),
            indices: (0..members.len()).collect(),
            authors: authors.iter().map(|s| s.to_string()).collect(),
        };
        let kept = prune(vec![
            nb(&["a"], &["u1"]),
            nb(&["a", "b"], &["u1", "u1"]),
            nb(&["a", "b"], &["u1", "u2"]),
        ]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].authors, vec!["u1", "u2"]);
    }
}
