use std::collections::{BTreeSet, HashMap};

use crate::scoring::{Battle, Outcome};

/// Directed win tallies over a fixed model list. A tie counts as one win in
/// each direction, so `wins(i, j) + wins(j, i) = comparisons(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseCounts {
    models: Vec<String>,
    index: HashMap<String, usize>,
    /// `decisive[i * m + j]`: battles in which `j` beat `i`.
    decisive: Vec<u64>,
    /// Symmetric tie counts.
    ties: Vec<u64>,
}

impl PairwiseCounts {
    /// Tallies `battles` over `models`, or over every model seen when `models`
    /// is `None`. Battles naming a model outside the list are ignored.
    pub fn from_battles(battles: &[Battle], models: Option<&[String]>) -> PairwiseCounts {
        let models: Vec<String> = match models {
            Some(list) => list
                .iter()
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            None => battles
                .iter()
                .flat_map(|b| [b.model_a.clone(), b.model_b.clone()])
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        let index: HashMap<String, usize> = models
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        let m = models.len();
        let mut decisive = vec![0u64; m * m];
        let mut ties = vec![0u64; m * m];
        for b in battles {
            let (Some(&a), Some(&bb)) = (index.get(&b.model_a), index.get(&b.model_b)) else {
                continue;
            };
            match b.outcome {
                Outcome::WinA => decisive[bb * m + a] += 1,
                Outcome::WinB => decisive[a * m + bb] += 1,
                Outcome::Tie => {
                    ties[a * m + bb] += 1;
                    ties[bb * m + a] += 1;
                }
            }
        }
        PairwiseCounts {
            models,
            index,
            decisive,
            ties,
        }
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn position(&self, model: &str) -> Option<usize> {
        self.index.get(model).copied()
    }

    /// Wins of `j` over `i` with ties expanded.
    pub fn wins(&self, i: usize, j: usize) -> u64 {
        let m = self.models.len();
        self.decisive[i * m + j] + self.ties[i * m + j]
    }

    pub fn ties(&self, i: usize, j: usize) -> u64 {
        self.ties[i * self.models.len() + j]
    }

    /// Raw battles between `i` and `j`.
    pub fn battles(&self, i: usize, j: usize) -> u64 {
        let m = self.models.len();
        self.decisive[i * m + j] + self.decisive[j * m + i] + self.ties[i * m + j]
    }

    /// Expanded comparisons between `i` and `j` (each tie counted twice).
    pub fn comparisons(&self, i: usize, j: usize) -> u64 {
        self.wins(i, j) + self.wins(j, i)
    }
}
