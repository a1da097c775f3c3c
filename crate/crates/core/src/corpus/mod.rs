//! Typed in-memory corpus: participants, conversations and the optional
//! sidecar tables (metadata, prompt embeddings, topic labels).
//!
//! A [`Corpus`] is immutable once built. Every subset operation returns a new
//! corpus with its indices rebuilt, so downstream modules can share one by
//! reference across threads.

mod describe;
mod load;
mod subset;
mod write;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub use describe::{describe, FrequencyRow, FrequencyTable};
pub use load::{hash_files, load_corpus, CorpusPaths};
pub use subset::{census_rebalance, filter_balanced, type_counts, BalanceMode, CensusCell, CensusTable};
pub use write::write_corpus;

/// Explicit category used wherever a demographic answer is missing.
pub const PREFER_NOT_TO_SAY: &str = "Prefer not to say";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub user_id: String,
    pub gender: String,
    pub age_bucket: String,
    pub ethnicity_group: String,
    pub religion_group: String,
    /// Birth region with the UK and US split out as their own regions.
    pub region: String,
    pub birth_country: String,
    pub reside_country: String,
    pub study_locale: Option<String>,
    pub stated_prefs: BTreeMap<String, f64>,
    pub included_in_balanced_subset: Option<bool>,
    pub census_uk: Option<bool>,
    pub census_us: Option<bool>,
    /// Fields not interpreted by this crate, kept for re-serialization.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

impl Participant {
    /// Bare participant with every categorical set to "Prefer not to say".
    pub fn new(user_id: impl Into<String>) -> Self {
        let pnts = PREFER_NOT_TO_SAY.to_string();
        Participant {
            user_id: user_id.into(),
            gender: pnts.clone(),
            age_bucket: pnts.clone(),
            ethnicity_group: pnts.clone(),
            religion_group: pnts.clone(),
            region: pnts.clone(),
            birth_country: pnts.clone(),
            reside_country: pnts,
            study_locale: None,
            stated_prefs: BTreeMap::new(),
            included_in_balanced_subset: None,
            census_uk: None,
            census_us: None,
            extra: Map::new(),
        }
    }

    pub fn attribute(&self, attribute: Attribute) -> &str {
        match attribute {
            Attribute::Gender => &self.gender,
            Attribute::Age => &self.age_bucket,
            Attribute::Ethnicity => &self.ethnicity_group,
            Attribute::Religion => &self.religion_group,
            Attribute::Region => &self.region,
            Attribute::BirthCountry => &self.birth_country,
            Attribute::ResideCountry => &self.reside_country,
        }
    }
}

/// Demographic attributes that analyses can group by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Gender,
    Age,
    Ethnicity,
    Religion,
    Region,
    BirthCountry,
    ResideCountry,
}

impl Attribute {
    pub const ALL: [Attribute; 7] = [
        Attribute::Gender,
        Attribute::Age,
        Attribute::Ethnicity,
        Attribute::Religion,
        Attribute::Region,
        Attribute::BirthCountry,
        Attribute::ResideCountry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::Age => "age",
            Attribute::Ethnicity => "ethnicity",
            Attribute::Religion => "religion",
            Attribute::Region => "region",
            Attribute::BirthCountry => "birth_country",
            Attribute::ResideCountry => "reside_country",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let attr = match key.as_str() {
            "gender" => Attribute::Gender,
            "age" | "age_bucket" => Attribute::Age,
            "ethnicity" | "ethnicity_group" => Attribute::Ethnicity,
            "religion" | "religion_group" => Attribute::Religion,
            "region" | "birth_region" | "location" => Attribute::Region,
            "birth_country" => Attribute::BirthCountry,
            "reside_country" => Attribute::ResideCountry,
            _ => {
                let valid: Vec<&str> = Attribute::ALL.iter().map(|a| a.name()).collect();
                return Err(Error::invalid(format!(
                    "unknown attribute '{s}'; valid attributes: {}",
                    valid.join(", ")
                )));
            }
        };
        Ok(attr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversationType {
    Unguided,
    ValuesGuided,
    ControversyGuided,
}

impl ConversationType {
    pub const ALL: [ConversationType; 3] = [
        ConversationType::Unguided,
        ConversationType::ValuesGuided,
        ConversationType::ControversyGuided,
    ];

    /// Label as it appears in the released conversations file.
    pub fn label(self) -> &'static str {
        match self {
            ConversationType::Unguided => "unguided",
            ConversationType::ValuesGuided => "values guided",
            ConversationType::ControversyGuided => "controversy guided",
        }
    }

    pub fn index(self) -> usize {
        match self {
            ConversationType::Unguided => 0,
            ConversationType::ValuesGuided => 1,
            ConversationType::ControversyGuided => 2,
        }
    }
}

impl fmt::Display for ConversationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ConversationType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == '_' || c == '-' { ' ' } else { c })
            .collect();
        match key.as_str() {
            "unguided" => Ok(ConversationType::Unguided),
            "values guided" | "values" => Ok(ConversationType::ValuesGuided),
            "controversy guided" | "controversy" => Ok(ConversationType::ControversyGuided),
            _ => Err(Error::invalid(format!(
                "unknown conversation type '{s}'; expected unguided, values guided or controversy guided"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub utterance_id: String,
    pub model_name: String,
    pub model_provider: Option<String>,
    pub response_text: String,
    /// Slider score in [1, 100].
    pub score: f64,
    pub chosen: Option<bool>,
    pub within_turn_id: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub interaction_id: String,
    pub turn_index: usize,
    pub user_prompt: String,
    pub responses: Vec<Response>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub user_id: String,
    pub conversation_type: ConversationType,
    pub turns: Vec<Interaction>,
    pub open_feedback: String,
    pub performance_attributes: BTreeMap<String, Option<f64>>,
    pub choice_attributes: BTreeMap<String, Option<f64>>,
    pub included_in_balanced_subset: Option<bool>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

impl Conversation {
    pub fn opener(&self) -> Option<&Interaction> {
        self.turns.first()
    }
}

/// One row of the metadata file, consumed as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub column_id: String,
    pub user_id: String,
    pub conversation_id: Option<String>,
    pub interaction_id: Option<String>,
    pub utterance_id: Option<String>,
    pub pii_flag: Option<bool>,
    pub language_flag: Option<String>,
    pub en_flag: Option<bool>,
    pub moderation_flag: Option<Value>,
}

/// Fixed-dimension vectors keyed by conversation, interaction or utterance id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    pub dimension: usize,
    pub keys: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dimension = entries.first().map(|(_, v)| v.len()).unwrap_or(0);
        let mut table = EmbeddingTable {
            dimension,
            ..Default::default()
        };
        for (key, vector) in entries {
            if vector.len() != dimension {
                return Err(Error::invalid(format!(
                    "embedding '{key}' has dimension {}, expected {dimension}",
                    vector.len()
                )));
            }
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!(
                    "embedding '{key}' has non-finite components"
                )));
            }
            if table.index.insert(key.clone(), table.keys.len()).is_some() {
                return Err(Error::invalid(format!("duplicate embedding key '{key}'")));
            }
            table.keys.push(key);
            table.vectors.push(vector);
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.index.get(key).map(|&i| self.vectors[i].as_slice())
    }

    pub fn retain(&self, mut keep: impl FnMut(&str) -> bool) -> EmbeddingTable {
        let entries = self
            .keys
            .iter()
            .zip(&self.vectors)
            .filter(|(k, _)| keep(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        EmbeddingTable::new(entries).expect("subset of a valid table is valid")
    }
}

/// Topic id used for prompts not assigned to any cluster.
pub const OUTLIER_TOPIC: i64 = -1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TopicTable {
    /// conversation_id -> topic id
    pub assignments: BTreeMap<String, i64>,
    /// topic id -> display name (never contains the outlier id)
    pub names: BTreeMap<i64, String>,
}

impl TopicTable {
    pub fn topic_of(&self, conversation_id: &str) -> Option<i64> {
        self.assignments.get(conversation_id).copied()
    }

    pub fn name(&self, topic: i64) -> String {
        if topic == OUTLIER_TOPIC {
            return "Outliers".to_string();
        }
        self.names
            .get(&topic)
            .cloned()
            .unwrap_or_else(|| format!("topic {topic}"))
    }

    /// Named topics in ascending id order.
    pub fn topics(&self) -> Vec<i64> {
        let mut ids: Vec<i64> = self
            .assignments
            .values()
            .copied()
            .filter(|&t| t != OUTLIER_TOPIC)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub participants: usize,
    pub conversations: usize,
    pub interactions: usize,
    pub utterances: usize,
}

/// Location of a response inside the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UtteranceRef {
    pub conversation: usize,
    pub turn: usize,
    pub response: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    participants: Vec<Participant>,
    conversations: Vec<Conversation>,
    metadata: Option<Vec<MetadataRecord>>,
    embeddings: Option<EmbeddingTable>,
    topics: Option<TopicTable>,
    participant_index: HashMap<String, usize>,
    conversation_index: HashMap<String, usize>,
    utterance_index: HashMap<String, UtteranceRef>,
    interaction_index: HashMap<String, (usize, usize)>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.participants == other.participants
            && self.conversations == other.conversations
            && self.metadata == other.metadata
            && self.embeddings == other.embeddings
            && self.topics == other.topics
    }
}

impl Corpus {
    /// Builds and cross-links a corpus, validating every invariant the loader
    /// checks except line numbers.
    pub fn new(participants: Vec<Participant>, conversations: Vec<Conversation>) -> Result<Self> {
        let mut corpus = Corpus {
            participants,
            conversations,
            ..Default::default()
        };
        corpus.reindex()?;
        Ok(corpus)
    }

    fn reindex(&mut self) -> Result<()> {
        self.participant_index.clear();
        for (i, p) in self.participants.iter().enumerate() {
            if self.participant_index.insert(p.user_id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate user_id '{}'", p.user_id)));
            }
            for (attr, score) in &p.stated_prefs {
                if !(0.0..=100.0).contains(score) {
                    return Err(Error::invalid(format!(
                        "participant '{}': stated preference '{attr}' = {score} outside [0, 100]",
                        p.user_id
                    )));
                }
            }
        }
        self.conversation_index.clear();
        self.utterance_index.clear();
        self.interaction_index.clear();
        let mut dangling = Vec::new();
        for (ci, c) in self.conversations.iter().enumerate() {
            if self
                .conversation_index
                .insert(c.conversation_id.clone(), ci)
                .is_some()
            {
                return Err(Error::invalid(format!(
                    "duplicate conversation_id '{}'",
                    c.conversation_id
                )));
            }
            if !self.participant_index.contains_key(&c.user_id) {
                dangling.push(format!("{} (conversation {})", c.user_id, c.conversation_id));
            }
            validate_conversation(c)?;
            for (ti, turn) in c.turns.iter().enumerate() {
                if self
                    .interaction_index
                    .insert(turn.interaction_id.clone(), (ci, ti))
                    .is_some()
                {
                    return Err(Error::invalid(format!(
                        "duplicate interaction_id '{}'",
                        turn.interaction_id
                    )));
                }
                for (ri, r) in turn.responses.iter().enumerate() {
                    let at = UtteranceRef {
                        conversation: ci,
                        turn: ti,
                        response: ri,
                    };
                    if self.utterance_index.insert(r.utterance_id.clone(), at).is_some() {
                        return Err(Error::invalid(format!(
                            "duplicate utterance_id '{}'",
                            r.utterance_id
                        )));
                    }
                }
            }
        }
        if !dangling.is_empty() {
            return Err(Error::DanglingReference {
                kind: "user_id",
                ids: dangling,
            });
        }
        Ok(())
    }

    pub fn participants(&self) -> &[Participant] {
        &self.participants
    }

    pub fn conversations(&self) -> &[Conversation] {
        &self.conversations
    }

    pub fn metadata(&self) -> Option<&[MetadataRecord]> {
        self.metadata.as_deref()
    }

    pub fn embeddings(&self) -> Option<&EmbeddingTable> {
        self.embeddings.as_ref()
    }

    pub fn topics(&self) -> Option<&TopicTable> {
        self.topics.as_ref()
    }

    pub fn participant(&self, user_id: &str) -> Option<&Participant> {
        self.participant_index.get(user_id).map(|&i| &self.participants[i])
    }

    pub fn participant_position(&self, user_id: &str) -> Option<usize> {
        self.participant_index.get(user_id).copied()
    }

    pub fn conversation(&self, conversation_id: &str) -> Option<&Conversation> {
        self.conversation_index
            .get(conversation_id)
            .map(|&i| &self.conversations[i])
    }

    pub fn interaction(&self, interaction_id: &str) -> Option<(&Conversation, &Interaction)> {
        self.interaction_index.get(interaction_id).map(|&(c, t)| {
            let conv = &self.conversations[c];
            (conv, &conv.turns[t])
        })
    }

    pub fn utterance(&self, utterance_id: &str) -> Option<(&Conversation, &Interaction, &Response)> {
        self.utterance_index.get(utterance_id).map(|at| {
            let conv = &self.conversations[at.conversation];
            let turn = &conv.turns[at.turn];
            (conv, turn, &turn.responses[at.response])
        })
    }

    /// Resolves a prompt key (conversation, interaction or utterance id) to the
    /// conversation that authored it.
    pub fn resolve_prompt_key(&self, key: &str) -> Option<&Conversation> {
        if let Some(c) = self.conversation(key) {
            return Some(c);
        }
        if let Some((c, _)) = self.interaction(key) {
            return Some(c);
        }
        self.utterance(key).map(|(c, _, _)| c)
    }

    /// Conversations grouped by participant, in corpus order.
    pub fn conversations_by_participant(&self) -> BTreeMap<&str, Vec<&Conversation>> {
        let mut map: BTreeMap<&str, Vec<&Conversation>> = BTreeMap::new();
        for c in &self.conversations {
            map.entry(c.user_id.as_str()).or_default().push(c);
        }
        map
    }

    pub fn counts(&self) -> CorpusCounts {
        let interactions = self.conversations.iter().map(|c| c.turns.len()).sum();
        let utterances = self
            .conversations
            .iter()
            .flat_map(|c| &c.turns)
            .map(|t| t.responses.len())
            .sum();
        CorpusCounts {
            participants: self.participants.len(),
            conversations: self.conversations.len(),
            interactions,
            utterances,
        }
    }

    /// Sorted list of every model that produced at least one response.
    pub fn models(&self) -> Vec<String> {
        let mut models: Vec<String> = self
            .conversations
            .iter()
            .flat_map(|c| &c.turns)
            .flat_map(|t| &t.responses)
            .map(|r| r.model_name.clone())
            .collect();
        models.sort();
        models.dedup();
        models
    }

    pub fn with_metadata(mut self, metadata: Vec<MetadataRecord>) -> Result<Self> {
        let missing: Vec<String> = metadata
            .iter()
            .filter(|m| !self.participant_index.contains_key(&m.user_id))
            .map(|m| m.user_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::DanglingReference {
                kind: "metadata user_id",
                ids: dedup(missing),
            });
        }
        self.metadata = Some(metadata);
        Ok(self)
    }

    pub fn with_embeddings(mut self, embeddings: EmbeddingTable) -> Result<Self> {
        let missing: Vec<String> = embeddings
            .keys
            .iter()
            .filter(|k| self.resolve_prompt_key(k).is_none())
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::DanglingReference {
                kind: "embedding key",
                ids: missing,
            });
        }
        self.embeddings = Some(embeddings);
        Ok(self)
    }

    pub fn with_topics(mut self, topics: TopicTable) -> Result<Self> {
        let missing: Vec<String> = topics
            .assignments
            .keys()
            .filter(|k| !self.conversation_index.contains_key(*k))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::DanglingReference {
                kind: "topic conversation_id",
                ids: missing,
            });
        }
        if topics.names.contains_key(&OUTLIER_TOPIC) {
            return Err(Error::invalid("outlier topic id -1 must not carry a topic name"));
        }
        self.topics = Some(topics);
        Ok(self)
    }

    /// Restricts the corpus to the given participants and conversations.
    /// Sidecar tables are trimmed to the surviving keys.
    pub fn restrict(
        &self,
        mut keep_participant: impl FnMut(&Participant) -> bool,
        mut keep_conversation: impl FnMut(&Conversation) -> bool,
    ) -> Corpus {
        let participants: Vec<Participant> = self
            .participants
            .iter()
            .filter(|p| keep_participant(p))
            .cloned()
            .collect();
        let kept: std::collections::HashSet<&str> =
            participants.iter().map(|p| p.user_id.as_str()).collect();
        let conversations: Vec<Conversation> = self
            .conversations
            .iter()
            .filter(|c| kept.contains(c.user_id.as_str()) && keep_conversation(c))
            .cloned()
            .collect();
        let mut out = Corpus::new(participants, conversations)
            .expect("restriction of a valid corpus is valid");
        if let Some(meta) = &self.metadata {
            let meta = meta
                .iter()
                .filter(|m| {
                    out.participant_index.contains_key(&m.user_id)
                        && m.conversation_id
                            .as_ref()
                            .is_none_or(|c| out.conversation_index.contains_key(c))
                })
                .cloned()
                .collect();
            out.metadata = Some(meta);
        }
        if let Some(emb) = &self.embeddings {
            let table = emb.retain(|k| out.resolve_prompt_key(k).is_some());
            out.embeddings = Some(table);
        }
        if let Some(topics) = &self.topics {
            let assignments: BTreeMap<String, i64> = topics
                .assignments
                .iter()
                .filter(|(k, _)| out.conversation_index.contains_key(*k))
                .map(|(k, v)| (k.clone(), *v))
                .collect();
            out.topics = Some(TopicTable {
                assignments,
                names: topics.names.clone(),
            });
        }
        out
    }
}

fn dedup(mut ids: Vec<String>) -> Vec<String> {
    ids.sort();
    ids.dedup();
    ids
}

fn validate_conversation(c: &Conversation) -> Result<()> {
    let ctx = |msg: String| Error::invalid(format!("conversation '{}': {msg}", c.conversation_id));
    if c.turns.is_empty() {
        return Err(ctx("has no turns".into()));
    }
    for (i, turn) in c.turns.iter().enumerate() {
        if turn.turn_index != i {
            return Err(ctx(format!(
                "turn indices must be consecutive from 0, found {} at position {i}",
                turn.turn_index
            )));
        }
        let n = turn.responses.len();
        let max = if i == 0 { 4 } else { 2 };
        if n == 0 || n > max {
            return Err(ctx(format!("turn {i} has {n} responses, expected 1..={max}")));
        }
        for r in &turn.responses {
            if !(1.0..=100.0).contains(&r.score) {
                return Err(ctx(format!(
                    "utterance '{}' score {} outside [1, 100]",
                    r.utterance_id, r.score
                )));
            }
        }
    }
    Ok(())
}
