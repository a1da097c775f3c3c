use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::{
    Conversation, ConversationType, Corpus, EmbeddingTable, Interaction, MetadataRecord,
    Participant, Response, TopicTable, OUTLIER_TOPIC, PREFER_NOT_TO_SAY,
};
use crate::error::{Error, Result};

/// Input files for [`load_corpus`]. Only the survey and conversations files
/// are required; each missing sidecar disables the analyses that need it.
#[derive(Debug, Clone, Default)]
pub struct CorpusPaths {
    pub survey: PathBuf,
    pub conversations: PathBuf,
    pub utterances: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub topics: Option<PathBuf>,
}

impl CorpusPaths {
    pub fn new(survey: impl Into<PathBuf>, conversations: impl Into<PathBuf>) -> Self {
        CorpusPaths {
            survey: survey.into(),
            conversations: conversations.into(),
            ..Default::default()
        }
    }

    fn all(&self) -> Vec<(&'static str, &Path)> {
        let mut files = vec![
            ("survey", self.survey.as_path()),
            ("conversations", self.conversations.as_path()),
        ];
        let optional = [
            ("utterances", &self.utterances),
            ("metadata", &self.metadata),
            ("embeddings", &self.embeddings),
            ("topics", &self.topics),
        ];
        for (name, path) in optional {
            if let Some(p) = path {
                files.push((name, p.as_path()));
            }
        }
        files
    }

    /// SHA-256 over the bytes of every input file, labelled by role.
    pub fn content_hash(&self) -> Result<String> {
        hash_files(&self.all())
    }
}

/// SHA-256 over `(label, file bytes)` pairs, in order.
pub fn hash_files(files: &[(&str, &Path)]) -> Result<String> {
    let mut hasher = Sha256::new();
    for (name, path) in files {
        let bytes = read(path)?;
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses every input file and returns a cross-linked corpus.
pub fn load_corpus(paths: &CorpusPaths) -> Result<Corpus> {
    let participants = read_jsonl(&paths.survey, parse_participant, SURVEY_KEYS)?;
    let mut conversations =
        read_jsonl(&paths.conversations, parse_conversation, CONVERSATION_KEYS)?;
    if let Some(path) = &paths.utterances {
        let rows = read_jsonl(path, parse_utterance_row, UTTERANCE_KEYS)?;
        attach_utterance_ids(&mut conversations, &rows)?;
    }
    let mut corpus = Corpus::new(participants, conversations)?;
    if let Some(path) = &paths.metadata {
        let rows = read_jsonl(path, parse_metadata, METADATA_KEYS)?;
        corpus = corpus.with_metadata(rows)?;
    }
    if let Some(path) = &paths.embeddings {
        let rows = read_jsonl(path, parse_embedding, &["key", "vector", "embedding"])?;
        corpus = corpus.with_embeddings(EmbeddingTable::new(rows)?)?;
    }
    if let Some(path) = &paths.topics {
        let rows = read_jsonl(path, parse_topic, &["conversation_id", "topic_id", "topic_name"])?;
        let mut table = TopicTable::default();
        for (cid, topic, name) in rows {
            if topic != OUTLIER_TOPIC {
                if let Some(name) = name {
                    table.names.insert(topic, name);
                }
            }
            table.assignments.insert(cid, topic);
        }
        corpus = corpus.with_topics(table)?;
    }
    let counts = corpus.counts();
    log::info!(
        "loaded {} participants, {} conversations, {} interactions, {} utterances",
        counts.participants,
        counts.conversations,
        counts.interactions,
        counts.utterances
    );
    Ok(corpus)
}

type Parser<T> = fn(&mut Record) -> Result<T>;

/// One JSON object being consumed field by field.
struct Record<'a> {
    file: &'a str,
    line: usize,
    fields: Map<String, Value>,
}

impl Record<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::schema(self.file, self.line, message)
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.fields.remove(key).filter(|v| !v.is_null())
    }

    fn required_str(&mut self, key: &str) -> Result<String> {
        match self.take(key) {
            Some(v) => value_to_id(&v).ok_or_else(|| self.err(format!("field '{key}' must be a string"))),
            None => Err(self.err(format!("missing required field '{key}'"))),
        }
    }

    fn optional_str(&mut self, key: &str) -> Option<String> {
        self.take(key).and_then(|v| value_to_id(&v))
    }

    fn optional_bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => value_to_bool(&v)
                .map(Some)
                .ok_or_else(|| self.err(format!("field '{key}' must be boolean"))),
        }
    }
}

fn read_jsonl<T>(path: &Path, parse: Parser<T>, known: &[&str]) -> Result<Vec<T>> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| {
        Error::schema(&path.display().to_string(), 0, format!("not valid UTF-8: {e}"))
    })?;
    let file = path.display().to_string();
    let mut out = Vec::new();
    let mut warned = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| Error::schema(&file, line_no, format!("invalid JSON: {e}")))?;
        let Value::Object(fields) = value else {
            return Err(Error::schema(&file, line_no, "record is not a JSON object"));
        };
        if !warned {
            let unknown: Vec<&String> = fields.keys().filter(|k| !known.contains(&k.as_str())).collect();
            if !unknown.is_empty() {
                log::warn!(
                    "{file}: preserving unrecognised field(s) {:?} (first seen on line {line_no})",
                    unknown
                );
                warned = true;
            }
        }
        let mut record = Record {
            file: &file,
            line: line_no,
            fields,
        };
        out.push(parse(&mut record)?);
    }
    Ok(out)
}

fn value_to_id(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn value_to_bool(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => n.as_f64().map(|x| x != 0.0),
        Value::String(s) => match s.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => Some(true),
            "false" | "0" | "no" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn value_to_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Categorical answer, falling back to "Prefer not to say" for nulls.
/// Nested `{self_described, categorised, simplified}` objects resolve to the
/// most aggregated label available.
fn categorical(v: Option<&Value>) -> String {
    let raw = match v {
        Some(Value::String(s)) => Some(s.trim().to_string()),
        Some(Value::Object(obj)) => ["simplified", "categorised", "categorized", "self_described"]
            .iter()
            .find_map(|k| obj.get(*k).and_then(Value::as_str))
            .map(|s| s.trim().to_string()),
        _ => None,
    };
    match raw {
        Some(s) if !s.is_empty() && !s.eq_ignore_ascii_case(PREFER_NOT_TO_SAY) => s,
        _ => PREFER_NOT_TO_SAY.to_string(),
    }
}

const SURVEY_KEYS: &[&str] = &[
    "user_id",
    "gender",
    "age",
    "age_bucket",
    "ethnicity",
    "ethnicity_group",
    "religion",
    "religion_group",
    "location",
    "region",
    "birth_country",
    "reside_country",
    "study_locale",
    "stated_prefs",
    "included_in_balanced_subset",
    "included_in_UK_REP",
    "included_in_US_REP",
];

fn is_uk(country: &str) -> bool {
    matches!(
        country.to_ascii_lowercase().as_str(),
        "united kingdom" | "uk" | "gb" | "gbr" | "great britain"
    )
}

fn is_us(country: &str) -> bool {
    matches!(
        country.to_ascii_lowercase().as_str(),
        "united states" | "united states of america" | "us" | "usa"
    )
}

fn parse_participant(rec: &mut Record) -> Result<Participant> {
    let mut p = Participant::new(rec.required_str("user_id")?);
    p.gender = categorical(rec.take("gender").as_ref());
    let age = rec.take("age").or_else(|| rec.take("age_bucket"));
    p.age_bucket = categorical(age.as_ref());
    let ethnicity = rec.take("ethnicity").or_else(|| rec.take("ethnicity_group"));
    p.ethnicity_group = categorical(ethnicity.as_ref());
    let religion = rec.take("religion").or_else(|| rec.take("religion_group"));
    p.religion_group = categorical(religion.as_ref());

    let location = match rec.take("location") {
        Some(Value::Object(obj)) => obj,
        Some(_) => return Err(rec.err("field 'location' must be an object")),
        None => Map::new(),
    };
    let loc = |k: &str| location.get(k).filter(|v| !v.is_null());
    let birth_country = rec
        .take("birth_country")
        .or_else(|| loc("birth_country").cloned());
    p.birth_country = categorical(birth_country.as_ref());
    let reside_country = rec
        .take("reside_country")
        .or_else(|| loc("reside_country").cloned());
    p.reside_country = categorical(reside_country.as_ref());
    let flat_region = rec.take("region");
    p.region = if let Some(r) = flat_region.as_ref().or_else(|| loc("special_region")) {
        categorical(Some(r))
    } else if is_uk(&p.birth_country) {
        "UK".to_string()
    } else if is_us(&p.birth_country) {
        "US".to_string()
    } else {
        categorical(loc("birth_region"))
    };
    p.study_locale = rec.optional_str("study_locale");

    if let Some(prefs) = rec.take("stated_prefs") {
        let Value::Object(prefs) = prefs else {
            return Err(rec.err("field 'stated_prefs' must be an object"));
        };
        for (attr, v) in prefs {
            if v.is_null() {
                continue;
            }
            let score = value_to_f64(&v)
                .ok_or_else(|| rec.err(format!("stated preference '{attr}' is not numeric")))?;
            if !(0.0..=100.0).contains(&score) {
                return Err(rec.err(format!("stated preference '{attr}' = {score} outside [0, 100]")));
            }
            p.stated_prefs.insert(attr, score);
        }
    }
    p.included_in_balanced_subset = rec.optional_bool("included_in_balanced_subset")?;
    p.census_uk = rec.optional_bool("included_in_UK_REP")?;
    p.census_us = rec.optional_bool("included_in_US_REP")?;
    p.extra = std::mem::take(&mut rec.fields);
    Ok(p)
}

const CONVERSATION_KEYS: &[&str] = &[
    "conversation_id",
    "user_id",
    "conversation_type",
    "conversation_history",
    "open_feedback",
    "performance_attributes",
    "choice_attributes",
    "included_in_balanced_subset",
];

#[derive(Default)]
struct TurnBuilder {
    prompt: Option<String>,
    interaction_id: Option<String>,
    responses: Vec<Response>,
}

fn parse_attributes(rec: &Record, key: &str, v: Option<Value>) -> Result<BTreeMap<String, Option<f64>>> {
    let mut out = BTreeMap::new();
    match v {
        None => {}
        Some(Value::Object(obj)) => {
            for (attr, v) in obj {
                let score = match &v {
                    Value::Null => None,
                    Value::String(s) if s.eq_ignore_ascii_case("n/a") || s.eq_ignore_ascii_case("na") => None,
                    other => Some(
                        value_to_f64(other)
                            .ok_or_else(|| rec.err(format!("{key}.{attr} is not numeric")))?,
                    ),
                };
                out.insert(attr, score);
            }
        }
        Some(_) => return Err(rec.err(format!("field '{key}' must be an object"))),
    }
    Ok(out)
}

fn parse_conversation(rec: &mut Record) -> Result<Conversation> {
    let conversation_id = rec.required_str("conversation_id")?;
    let user_id = rec.required_str("user_id")?;
    let kind = rec.required_str("conversation_type")?;
    let conversation_type: ConversationType = kind.parse().map_err(|e: Error| rec.err(e.to_string()))?;
    let history = match rec.take("conversation_history") {
        Some(Value::Array(items)) => items,
        Some(_) => return Err(rec.err("field 'conversation_history' must be a list")),
        None => return Err(rec.err("missing required field 'conversation_history'")),
    };

    let mut turns: BTreeMap<usize, TurnBuilder> = BTreeMap::new();
    for (pos, entry) in history.into_iter().enumerate() {
        let Value::Object(entry) = entry else {
            return Err(rec.err(format!("conversation_history[{pos}] is not an object")));
        };
        let get = |k: &str| entry.get(k).filter(|v| !v.is_null());
        let turn = get("turn")
            .and_then(Value::as_u64)
            .ok_or_else(|| rec.err(format!("conversation_history[{pos}] missing integer 'turn'")))?
            as usize;
        let role = get("role")
            .and_then(Value::as_str)
            .ok_or_else(|| rec.err(format!("conversation_history[{pos}] missing 'role'")))?;
        let content = get("content").and_then(Value::as_str).unwrap_or("").to_string();
        let builder = turns.entry(turn).or_default();
        if let Some(iid) = get("interaction_id").and_then(value_to_id) {
            builder.interaction_id = Some(iid);
        }
        match role {
            "user" | "human" => builder.prompt = Some(content),
            "model" | "assistant" => {
                let model_name = get("model_name").and_then(Value::as_str).ok_or_else(|| {
                    rec.err(format!("conversation_history[{pos}] model entry missing 'model_name'"))
                })?;
                let score = get("score").and_then(value_to_f64).ok_or_else(|| {
                    rec.err(format!("conversation_history[{pos}] model entry missing numeric 'score'"))
                })?;
                let within_turn_id = get("within_turn_id").and_then(Value::as_i64);
                let idx = builder.responses.len();
                let utterance_id = get("utterance_id").and_then(value_to_id).unwrap_or_else(|| {
                    format!("{conversation_id}_{turn}_{}", within_turn_id.unwrap_or(idx as i64))
                });
                builder.responses.push(Response {
                    utterance_id,
                    model_name: model_name.to_string(),
                    model_provider: get("model_provider").and_then(Value::as_str).map(str::to_string),
                    response_text: content,
                    score,
                    chosen: get("if_chosen").and_then(value_to_bool),
                    within_turn_id,
                });
            }
            other => {
                return Err(rec.err(format!("conversation_history[{pos}] has unknown role '{other}'")));
            }
        }
    }

    let turns = turns
        .into_iter()
        .map(|(turn_index, b)| Interaction {
            interaction_id: b
                .interaction_id
                .unwrap_or_else(|| format!("{conversation_id}_{turn_index}")),
            turn_index,
            user_prompt: b.prompt.unwrap_or_default(),
            responses: b.responses,
        })
        .collect();

    let perf = rec.take("performance_attributes");
    let performance_attributes = parse_attributes(rec, "performance_attributes", perf)?;
    let choice = rec.take("choice_attributes");
    let choice_attributes = parse_attributes(rec, "choice_attributes", choice)?;
    Ok(Conversation {
        conversation_id,
        user_id,
        conversation_type,
        turns,
        open_feedback: rec.optional_str("open_feedback").unwrap_or_default(),
        performance_attributes,
        choice_attributes,
        included_in_balanced_subset: rec.optional_bool("included_in_balanced_subset")?,
        extra: std::mem::take(&mut rec.fields),
    })
}

const UTTERANCE_KEYS: &[&str] = &[
    "utterance_id",
    "interaction_id",
    "conversation_id",
    "user_id",
    "turn",
    "within_turn_id",
    "model_name",
    "score",
];

struct UtteranceRow {
    line: usize,
    utterance_id: String,
    interaction_id: Option<String>,
    conversation_id: String,
    turn: usize,
    within_turn_id: Option<i64>,
    model_name: Option<String>,
    score: Option<f64>,
}

fn parse_utterance_row(rec: &mut Record) -> Result<UtteranceRow> {
    let utterance_id = rec.required_str("utterance_id")?;
    let conversation_id = rec.required_str("conversation_id")?;
    let turn = rec
        .take("turn")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| rec.err("missing required integer field 'turn'"))? as usize;
    Ok(UtteranceRow {
        line: rec.line,
        utterance_id,
        interaction_id: rec.optional_str("interaction_id"),
        conversation_id,
        turn,
        within_turn_id: rec.take("within_turn_id").and_then(|v| v.as_i64()),
        model_name: rec.optional_str("model_name"),
        score: rec.take("score").and_then(|v| value_to_f64(&v)),
    })
}

/// Copies released utterance and interaction ids onto the responses built from
/// conversation histories.
fn attach_utterance_ids(conversations: &mut [Conversation], rows: &[UtteranceRow]) -> Result<()> {
    let by_id: HashMap<String, usize> = conversations
        .iter()
        .enumerate()
        .map(|(i, c)| (c.conversation_id.clone(), i))
        .collect();
    let mut dangling = Vec::new();
    for row in rows {
        let Some(&ci) = by_id.get(row.conversation_id.as_str()) else {
            dangling.push(format!("{} (line {})", row.utterance_id, row.line));
            continue;
        };
        let conv = &mut conversations[ci];
        let Some(turn) = conv.turns.iter_mut().find(|t| t.turn_index == row.turn) else {
            dangling.push(format!("{} (line {})", row.utterance_id, row.line));
            continue;
        };
        let found = match row.within_turn_id {
            Some(w) => turn.responses.iter().position(|r| r.within_turn_id == Some(w)),
            None => None,
        }
        .or_else(|| {
            let model = row.model_name.as_deref()?;
            turn.responses.iter().position(|r| {
                r.model_name == model && !r.utterance_id.starts_with(UTTERANCE_ASSIGNED)
            })
        });
        let Some(ri) = found else {
            dangling.push(format!("{} (line {})", row.utterance_id, row.line));
            continue;
        };
        if let Some(iid) = &row.interaction_id {
            turn.interaction_id = iid.clone();
        }
        let resp = &mut turn.responses[ri];
        if let Some(score) = row.score {
            if (score - resp.score).abs() > 1e-9 {
                log::warn!(
                    "utterance {}: score {} differs from conversation history score {}",
                    row.utterance_id,
                    score,
                    resp.score
                );
            }
        }
        // Marked so a repeated model name in one turn matches the next response.
        resp.utterance_id = format!("{UTTERANCE_ASSIGNED}{}", row.utterance_id);
    }
    for conv in conversations.iter_mut() {
        for turn in &mut conv.turns {
            for r in &mut turn.responses {
                if let Some(id) = r.utterance_id.strip_prefix(UTTERANCE_ASSIGNED) {
                    r.utterance_id = id.to_string();
                }
            }
        }
    }
    if !dangling.is_empty() {
        return Err(Error::DanglingReference {
            kind: "utterance",
            ids: dangling,
        });
    }
    Ok(())
}

const UTTERANCE_ASSIGNED: &str = "\u{0}assigned:";

const METADATA_KEYS: &[&str] = &[
    "column_id",
    "user_id",
    "conversation_id",
    "interaction_id",
    "utterance_id",
    "pii_flag",
    "language_flag",
    "en_flag",
    "moderation_flag",
];

fn parse_metadata(rec: &mut Record) -> Result<MetadataRecord> {
    Ok(MetadataRecord {
        column_id: rec.required_str("column_id")?,
        user_id: rec.required_str("user_id")?,
        conversation_id: rec.optional_str("conversation_id"),
        interaction_id: rec.optional_str("interaction_id"),
        utterance_id: rec.optional_str("utterance_id"),
        pii_flag: rec.optional_bool("pii_flag")?,
        language_flag: rec.optional_str("language_flag"),
        en_flag: rec.optional_bool("en_flag")?,
        moderation_flag: rec.take("moderation_flag"),
    })
}

fn parse_embedding(rec: &mut Record) -> Result<(String, Vec<f64>)> {
    let key = rec.required_str("key")?;
    let vector = match rec.take("vector").or_else(|| rec.take("embedding")) {
        Some(Value::Array(items)) => items
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| rec.err("vector components must be numbers")))
            .collect::<Result<Vec<f64>>>()?,
        _ => return Err(rec.err("missing required numeric list 'vector'")),
    };
    if vector.iter().any(|x| !x.is_finite()) {
        return Err(rec.err(format!("embedding '{key}' has non-finite components")));
    }
    Ok((key, vector))
}

fn parse_topic(rec: &mut Record) -> Result<(String, i64, Option<String>)> {
    let cid = rec.required_str("conversation_id")?;
    let topic = rec
        .take("topic_id")
        .and_then(|v| v.as_i64())
        .ok_or_else(|| rec.err("missing required integer field 'topic_id'"))?;
    Ok((cid, topic, rec.optional_str("topic_name")))
}
