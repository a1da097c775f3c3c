use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Neighbourhood;
use crate::corpus::{Attribute, Corpus};
use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::stats::{mean, quantile, std_dev};

/// Shannon entropy in bits of a frequency table; empty cells contribute 0.
pub fn entropy_bits<I: IntoIterator<Item = usize>>(counts: I) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

fn code_entropy(codes: impl Iterator<Item = u32>) -> f64 {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for c in codes {
        *counts.entry(c).or_default() += 1;
    }
    entropy_bits(counts.into_values())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyConfig {
    pub attributes: Vec<Attribute>,
    pub mc_draws: usize,
    pub seed: u64,
    /// Quantiles bounding the simulated band; 99% by default.
    pub band: (f64, f64),
}

impl EntropyConfig {
    pub fn new(attributes: Vec<Attribute>, seed: u64) -> EntropyConfig {
        EntropyConfig {
            attributes,
            mc_draws: 10_000,
            seed,
            band: (0.005, 0.995),
        }
    }
}

/// Simulated entropy under random sampling for one neighbourhood size.
#[derive(Debug, Clone)]
struct Expected {
    h_exp: Vec<f64>,
    total_band: (f64, f64),
    ratio_bands: Vec<Option<(f64, f64)>>,
}

/// Expected-entropy simulator over a prompt-weighted author population:
/// each draw takes `k` authors with replacement, keeping each author's
/// attributes together. Results are cached per `k`.
pub struct EntropySimulator {
    config: EntropyConfig,
    levels: Vec<HashMap<String, u32>>,
    population: Vec<Vec<u32>>,
    cache: Mutex<HashMap<usize, Arc<Expected>>>,
}

impl EntropySimulator {
    /// `authors` holds one participant id per prompt in the reference
    /// population; repeated ids weight that participant up.
    pub fn new(corpus: &Corpus, authors: &[String], config: EntropyConfig) -> Result<EntropySimulator> {
        if config.attributes.is_empty() {
            return Err(Error::invalid("entropy needs at least one attribute"));
        }
        if config.mc_draws == 0 {
            return Err(Error::invalid("mc_draws must be >= 1"));
        }
        if authors.is_empty() {
            return Err(Error::invalid("empty author population"));
        }
        let mut levels: Vec<HashMap<String, u32>> = vec![HashMap::new(); config.attributes.len()];
        let mut population = Vec::with_capacity(authors.len());
        for a in authors {
            let p = corpus.participant(a).ok_or_else(|| Error::DanglingReference {
                kind: "author",
                ids: vec![a.clone()],
            })?;
            let row = config
                .attributes
                .iter()
                .zip(levels.iter_mut())
                .map(|(attr, lv)| {
                    let next = lv.len() as u32;
                    *lv.entry(p.attribute(*attr).to_string()).or_insert(next)
                })
                .collect();
            population.push(row);
        }
        Ok(EntropySimulator {
            config,
            levels,
            population,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Population of one prompt per conversation.
    pub fn for_corpus(corpus: &Corpus, config: EntropyConfig) -> Result<EntropySimulator> {
        let authors: Vec<String> = corpus.conversations().iter().map(|c| c.user_id.clone()).collect();
        EntropySimulator::new(corpus, &authors, config)
    }

    pub fn config(&self) -> &EntropyConfig {
        &self.config
    }

    fn expected(&self, k: usize) -> Arc<Expected> {
        if let Some(e) = self.cache.lock().expect("cache lock").get(&k) {
            return e.clone();
        }
        let a = self.config.attributes.len();
        let n = self.population.len();
        let draws: Vec<Vec<f64>> = (0..self.config.mc_draws)
            .into_par_iter()
            .map(|d| {
                let mut key = (k as u64).to_le_bytes().to_vec();
                key.extend_from_slice(&(d as u64).to_le_bytes());
                let mut rng = keyed_rng(self.config.seed, &key);
                let sample: Vec<&Vec<u32>> = (0..k).map(|_| &self.population[rng.random_range(0..n)]).collect();
                (0..a).map(|j| code_entropy(sample.iter().map(|row| row[j]))).collect()
            })
            .collect();
        let h_exp: Vec<f64> = (0..a)
            .map(|j| draws.iter().map(|d| d[j]).sum::<f64>() / draws.len() as f64)
            .collect();
        let ratios = |j: usize| -> Vec<f64> { draws.iter().map(|d| d[j] / h_exp[j] - 1.0).collect() };
        let (lo, hi) = self.config.band;
        let ratio_bands = (0..a)
            .map(|j| {
                (h_exp[j] > 0.0).then(|| {
                    let r = ratios(j);
                    (quantile(&r, lo).unwrap(), quantile(&r, hi).unwrap())
                })
            })
            .collect();
        let totals: Vec<f64> = draws
            .iter()
            .map(|d| {
                (0..a)
                    .filter(|&j| h_exp[j] > 0.0)
                    .map(|j| d[j] / h_exp[j] - 1.0)
                    .sum()
            })
            .collect();
        let expected = Arc::new(Expected {
            total_band: (quantile(&totals, lo).unwrap(), quantile(&totals, hi).unwrap()),
            h_exp,
            ratio_bands,
        });
        self.cache
            .lock()
            .expect("cache lock")
            .insert(k, expected.clone());
        expected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEntropy {
    pub attribute: Attribute,
    pub h: f64,
    pub h_exp: f64,
    /// `h / h_exp - 1`; `None` when the population is homogeneous.
    pub ratio: Option<f64>,
    pub band: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub neighbourhood_id: usize,
    pub k: usize,
    pub attributes: Vec<AttributeEntropy>,
    /// Adjusted intersectional entropy: the sum of defined ratios.
    pub total: f64,
    pub band: (f64, f64),
    pub above_band: bool,
    pub below_band: bool,
    pub mc_draws: usize,
    pub seed: u64,
}

pub fn intersectional_entropy(
    neighbourhood: &Neighbourhood,
    corpus: &Corpus,
    simulator: &EntropySimulator,
) -> Result<EntropyReport> {
    let k = neighbourhood.authors.len();
    if k < 2 {
        return Err(Error::invalid(format!(
            "neighbourhood {} needs at least 2 authored prompts, has {k}",
            neighbourhood.id
        )));
    }
    let expected = simulator.expected(k);
    let mut attributes = Vec::new();
    let mut total = 0.0;
    for (j, attr) in simulator.config.attributes.iter().enumerate() {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for a in &neighbourhood.authors {
            let p = corpus.participant(a).ok_or_else(|| Error::DanglingReference {
                kind: "author",
                ids: vec![a.clone()],
            })?;
            *counts.entry(p.attribute(*attr)).or_default() += 1;
        }
        let h = entropy_bits(counts.into_values());
        let h_exp = expected.h_exp[j];
        let ratio = if h_exp > 0.0 {
            let r = h / h_exp - 1.0;
            total += r;
            Some(r)
        } else {
            log::warn!(
                "attribute {attr}: expected entropy is 0 ({} level in population); excluded",
                simulator.levels[j].len()
            );
            None
        };
        attributes.push(AttributeEntropy {
            attribute: *attr,
            h,
            h_exp,
            ratio,
            band: expected.ratio_bands[j],
        });
    }
    let band = expected.total_band;
    Ok(EntropyReport {
        neighbourhood_id: neighbourhood.id,
        k,
        attributes,
        total,
        band,
        above_band: total > band.1,
        below_band: total < band.0,
        mc_draws: simulator.config.mc_draws,
        seed: simulator.config.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub neighbourhoods: usize,
    pub k_mean: f64,
    pub k_std: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub mean_total: f64,
    pub mean_h: BTreeMap<String, f64>,
    pub pct_above_band: f64,
    pub pct_below_band: f64,
}

pub fn summarize_entropy(reports: &[EntropyReport]) -> Option<EntropySummary> {
    if reports.is_empty() {
        return None;
    }
    let ks: Vec<f64> = reports.iter().map(|r| r.k as f64).collect();
    let totals: Vec<f64> = reports.iter().map(|r| r.total).collect();
    let mut hs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for a in &r.attributes {
            hs.entry(a.attribute.name().to_string()).or_default().push(a.h);
        }
    }
    let n = reports.len() as f64;
    Some(EntropySummary {
        neighbourhoods: reports.len(),
        k_mean: mean(&ks)?,
        k_std: std_dev(&ks, 1).unwrap_or(0.0),
        k_min: reports.iter().map(|r| r.k).min()?,
        k_max: reports.iter().map(|r| r.k).max()?,
        mean_total: mean(&totals)?,
        mean_h: hs.into_iter().map(|(k, v)| (k, mean(&v).unwrap_or(0.0))).collect(),
        pct_above_band: 100.0 * reports.iter().filter(|r| r.above_band).count() as f64 / n,
        pct_below_band: 100.0 * reports.iter().filter(|r| r.below_band).count() as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::participant;

    fn population(genders: &[&str]) -> (Corpus, Vec<String>) {
        let ps: Vec<_> = genders
            .iter()
            .enumerate()
            .map(|(i, g)| participant(&format!("u{i}"), g))
            .collect();
        let ids = ps.iter().map(|p| p.user_id.clone()).collect();
        (Corpus::new(ps, vec![]).unwrap(), ids)
    }

    fn nb(authors: &[&str]) -> Neighbourhood {
        Neighbourhood {
            id: 0,
            members: authors.iter().map(|a| format!("p-{a}")).collect(),
            indices: (0..authors.len()).collect(),
            authors: authors.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn analytic_cases() {
        assert_eq!(entropy_bits([5]), 0.0);
        assert_eq!(entropy_bits([1, 1]), 1.0);
        assert_eq!(entropy_bits([2, 0, 2]), 1.0);
    }

    #[test]
    fn homogeneous_and_split_neighbourhoods() {
        let (corpus, ids) = population(&["Male", "Female", "Male", "Female"]);
        let sim = EntropySimulator::new(&corpus, &ids, EntropyConfig::new(vec![Attribute::Gender], 1)).unwrap();
        let same = intersectional_entropy(&nb(&["u0", "u2"]), &corpus, &sim).unwrap();
        assert_eq!(same.attributes[0].h, 0.0);
        let split = intersectional_entropy(&nb(&["u0", "u1"]), &corpus, &sim).unwrap();
        assert_eq!(split.attributes[0].h, 1.0);
        // Two draws from a 50/50 population differ with probability 1/2.
        assert!((split.attributes[0].h_exp - 0.5).abs() < 0.03);
    }

    #[test]
    fn homogeneous_population_gives_na() {
        let (corpus, ids) = population(&["Male", "Male", "Male"]);
        let config = EntropyConfig::new(vec![Attribute::Gender, Attribute::Age], 1);
        let sim = EntropySimulator::new(&corpus, &ids, config).unwrap();
        let r = intersectional_entropy(&nb(&["u0", "u1"]), &corpus, &sim).unwrap();
        assert!(r.attributes.iter().all(|a| a.ratio.is_none()));
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn uniform_sample_sits_in_band() {
        let genders: Vec<&str> = (0..400).map(|i| ["A", "B", "C", "D"][i % 4]).collect();
        let (corpus, ids) = population(&genders);
        let sim = EntropySimulator::new(&corpus, &ids, EntropyConfig::new(vec![Attribute::Gender], 3)).unwrap();
        let r = intersectional_entropy(&nb(&["u0", "u1", "u2", "u3"]), &corpus, &sim).unwrap();
        assert_eq!(r.attributes[0].h, 2.0);
        assert!(r.band.0 <= r.total && r.total <= r.band.1, "{:?} {}", r.band, r.total);
    }

    #[test]
    fn cache_is_deterministic() {
        let (corpus, ids) = population(&["Male", "Female", "Other"]);
        let config = EntropyConfig::new(vec![Attribute::Gender], 9);
        let a = EntropySimulator::new(&corpus, &ids, config.clone()).unwrap();
        let b = EntropySimulator::new(&corpus, &ids, config).unwrap();
        let n = nb(&["u0", "u1", "u2"]);
        assert_eq!(
            intersectional_entropy(&n, &corpus, &a).unwrap(),
            intersectional_entropy(&n, &corpus, &b).unwrap()
        );
    }
}
