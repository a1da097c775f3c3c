use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Attribute, Corpus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub group: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub attribute: Attribute,
    pub total: usize,
    pub rows: Vec<FrequencyRow>,
}

/// Participant counts per group of `attribute`, largest group first.
/// "Prefer not to say" is counted like any other group.
pub fn describe(corpus: &Corpus, attribute: Attribute) -> FrequencyTable {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in corpus.participants() {
        *counts.entry(p.attribute(attribute)).or_default() += 1;
    }
    let total = corpus.participants().len();
    let mut rows: Vec<FrequencyRow> = counts
        .into_iter()
        .map(|(group, count)| FrequencyRow {
            group: group.to_string(),
            count,
            percent: 100.0 * count as f64 / total as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.group.cmp(&b.group)));
    FrequencyTable {
        attribute,
        total,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::participant;
    use super::*;

    #[test]
    fn single_participant_is_hundred_percent() {
        let corpus = Corpus::new(vec![participant("a", "Female")], vec![]).unwrap();
        let t = describe(&corpus, Attribute::Gender);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].percent, 100.0);
        let t = describe(&corpus, Attribute::Religion);
        assert_eq!(t.rows[0].group, super::super::PREFER_NOT_TO_SAY);
    }

    #[test]
    fn two_genders_split_evenly() {
        let corpus = Corpus::new(
            vec![participant("a", "Female"), participant("b", "Male")],
            vec![],
        )
        .unwrap();
        let t = describe(&corpus, Attribute::Gender);
        assert!(t.rows.iter().all(|r| r.percent == 50.0));
        let sum: f64 = t.rows.iter().map(|r| r.percent).sum();
        assert!((sum - 100.0).abs() < 0.1);
    }
}
