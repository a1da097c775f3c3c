//! Seeded synthetic corpora with known latent model quality, for tests,
//! demos and end-to-end determinism checks.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde_json::Map;

use crate::corpus::{
    Conversation, ConversationType, Corpus, EmbeddingTable, Interaction, Participant, Response, TopicTable,
};
use crate::error::Result;
use crate::rng::keyed_rng;

const GENDERS: [&str; 3] = ["Male", "Female", "Non-binary / third gender"];
const AGES: [&str; 6] = [
    "18-24 years old",
    "25-34 years old",
    "35-44 years old",
    "45-54 years old",
    "55-64 years old",
    "65+ years old",
];
const ETHNICITIES: [&str; 4] = ["White", "Black", "Asian", "Mixed"];
const RELIGIONS: [&str; 3] = ["Christian", "Not religious", "Muslim"];
const LOCALES: [(&str, &str, &str); 4] = [
    ("us", "United States", "US"),
    ("uk", "United Kingdom", "UK"),
    ("other", "Canada", "Americas"),
    ("other", "Germany", "Europe"),
];
const PROVIDERS: [&str; 4] = ["acme", "globex", "initech", "umbrella"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub participants: usize,
    /// Conversations per participant, cycling through the three types.
    pub conversations_per_participant: usize,
    pub models: usize,
    /// Models shown in each opening turn.
    pub opener_width: usize,
    /// Follow-up turns after the opener, each with two responses from the
    /// chosen model.
    pub follow_ups: usize,
    pub topics: usize,
    pub embedding_dim: usize,
    /// Standard deviation of per-rating noise on the 1-100 slider.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            participants: 60,
            conversations_per_participant: 6,
            models: 6,
            opener_width: 4,
            follow_ups: 1,
            topics: 5,
            embedding_dim: 8,
            noise: 12.0,
            seed: 0,
        }
    }
}

/// Latent quality of model `j`: strictly decreasing in `j`.
pub fn latent_quality(j: usize, models: usize) -> f64 {
    70.0 - 30.0 * j as f64 / models.max(2).saturating_sub(1) as f64
}

pub fn model_name(j: usize) -> String {
    format!("model-{j:02}")
}

fn pick<'a>(rng: &mut impl Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller on (0, 1].
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit_direction(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn response_text(rng: &mut impl Rng, j: usize) -> String {
    let mut text = String::from("Here is a considered answer to your question.");
    if rng.random_bool(0.3) {
        text.push_str("\n1. First point\n2. Second point");
    }
    if rng.random_bool(0.08) {
        text = format!("I'm sorry, but I cannot engage with that. {text}");
    }
    if j % 3 == 2 && rng.random_bool(0.2) {
        text.push_str(" As an AI language model, I don't hold personal opinions.");
    }
    if rng.random_bool(0.15) {
        text.push_str(" What do you think?");
    }
    text
}

/// A corpus with prompt and response embeddings and topic assignments.
/// Scores follow each model's latent quality plus a participant-specific
/// taste offset and rating noise.
pub fn synthetic_corpus(spec: &SyntheticSpec) -> Result<Corpus> {
    let mut rng = keyed_rng(spec.seed, b"synthetic");
    let width = spec.opener_width.clamp(2, spec.models.max(2));
    let topic_dirs: Vec<Vec<f64>> = (0..spec.topics.max(1))
        .map(|_| unit_direction(&mut rng, spec.embedding_dim))
        .collect();
    let model_dirs: Vec<Vec<f64>> = (0..spec.models)
        .map(|_| unit_direction(&mut rng, spec.embedding_dim))
        .collect();

    let mut participants = Vec::with_capacity(spec.participants);
    let mut conversations = Vec::new();
    let mut embeddings: Vec<(String, Vec<f64>)> = Vec::new();
    let mut topics = TopicTable::default();
    for t in 0..spec.topics {
        topics.names.insert(t as i64, format!("topic {t}"));
    }

    for u in 0..spec.participants {
        let user_id = format!("user{u:04}");
        let mut p = Participant::new(&user_id);
        p.gender = pick(&mut rng, &GENDERS).into();
        p.age_bucket = pick(&mut rng, &AGES).into();
        p.ethnicity_group = pick(&mut rng, &ETHNICITIES).into();
        p.religion_group = pick(&mut rng, &RELIGIONS).into();
        let (locale, country, region) = LOCALES[rng.random_range(0..LOCALES.len())];
        p.study_locale = Some(locale.into());
        p.reside_country = country.into();
        p.birth_country = country.into();
        p.region = region.into();
        let taste: Vec<f64> = (0..spec.models).map(|_| 6.0 * gaussian(&mut rng)).collect();
        let favourite_topic = rng.random_range(0..spec.topics.max(1));
        participants.push(p);

        for k in 0..spec.conversations_per_participant {
            let cid = format!("c{u:04}-{k}");
            let kind = ConversationType::ALL[k % 3];
            let shown: Vec<usize> = index::sample(&mut rng, spec.models, width).into_vec();
            let prompt_topic = if rng.random_bool(0.6) {
                favourite_topic
            } else {
                rng.random_range(0..spec.topics.max(1))
            };
            let mut responses: Vec<Response> = shown
                .iter()
                .enumerate()
                .map(|(i, &j)| {
                    let raw = latent_quality(j, spec.models) + taste[j] + spec.noise * gaussian(&mut rng);
                    Response {
                        utterance_id: format!("{cid}-0-{i}"),
                        model_name: model_name(j),
                        model_provider: Some(PROVIDERS[j % PROVIDERS.len()].into()),
                        response_text: response_text(&mut rng, j),
                        score: raw.round().clamp(1.0, 100.0),
                        chosen: Some(false),
                        within_turn_id: Some(i as i64),
                    }
                })
                .collect();
            let best = responses
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.score.total_cmp(&b.1.score).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .expect("opener has responses");
            responses[best].chosen = Some(true);
            let chosen_j = shown[best];

            let mut turns = vec![Interaction {
                interaction_id: format!("{cid}-0"),
                turn_index: 0,
                user_prompt: format!("question {k} from {user_id} about topic {prompt_topic}"),
                responses,
            }];
            for t in 1..=spec.follow_ups {
                let responses = (0..2)
                    .map(|i| Response {
                        utterance_id: format!("{cid}-{t}-{i}"),
                        model_name: model_name(chosen_j),
                        model_provider: Some(PROVIDERS[chosen_j % PROVIDERS.len()].into()),
                        response_text: response_text(&mut rng, chosen_j),
                        score: (latent_quality(chosen_j, spec.models) + spec.noise * gaussian(&mut rng))
                            .round()
                            .clamp(1.0, 100.0),
                        chosen: Some(i == 0),
                        within_turn_id: Some(i as i64),
                    })
                    .collect();
                turns.push(Interaction {
                    interaction_id: format!("{cid}-{t}"),
                    turn_index: t,
                    user_prompt: format!("follow-up {t}"),
                    responses,
                });
            }

            if spec.embedding_dim > 0 {
                // Prompts sit near their topic centre; a few are exact repeats.
                let jitter = if rng.random_bool(0.1) { 0.0 } else { 0.3 };
                let prompt: Vec<f64> = topic_dirs[prompt_topic]
                    .iter()
                    .map(|x| x + jitter * gaussian(&mut rng) / (spec.embedding_dim as f64).sqrt())
                    .collect();
                embeddings.push((cid.clone(), prompt));
                for r in &turns[0].responses {
                    let j: usize = r.model_name[6..].parse().expect("synthetic model name");
                    let v: Vec<f64> = topic_dirs[prompt_topic]
                        .iter()
                        .zip(&model_dirs[j])
                        .map(|(a, b)| a + b + 0.05 * gaussian(&mut rng))
                        .collect();
                    embeddings.push((r.utterance_id.clone(), v));
                }
            }
            if spec.topics > 0 {
                let topic = if rng.random_bool(0.1) { -1 } else { prompt_topic as i64 };
                topics.assignments.insert(cid.clone(), topic);
            }
            conversations.push(Conversation {
                conversation_id: cid,
                user_id: user_id.clone(),
                conversation_type: kind,
                turns,
                open_feedback: String::new(),
                performance_attributes: BTreeMap::new(),
                choice_attributes: BTreeMap::new(),
                included_in_balanced_subset: None,
                extra: Map::new(),
            });
        }
    }

    let mut corpus = Corpus::new(participants, conversations)?;
    if spec.embedding_dim > 0 {
        corpus = corpus.with_embeddings(EmbeddingTable::new(embeddings)?)?;
    }
    if spec.topics > 0 {
        corpus = corpus.with_topics(topics)?;
    }
    Ok(corpus)
}
